#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokmark/image.hpp"

namespace tokmark {

enum class TransformKind : uint8_t {
    identity,
    blur,     // separable Gaussian; parameter = odd kernel size (1 = no-op)
    noise,    // additive Gaussian; parameter = sigma, seeded
    brighten, // multiply then clamp; parameter = factor
    jpeg_like,// 8x8 DCT coefficient quantization; parameter = quality analog in (0,100]
    rotate,   // degrees about the center, bilinear, edge replication fill
    hflip,    // parameter 1 flips, 0 is a no-op
    crop,     // keep the top-left fraction of each side, upscale back
};

enum class TransformCategory : uint8_t { valuemetric, geometric };

struct TransformSpec {
    TransformKind kind = TransformKind::identity;
    double parameter = 0.0;
    uint64_t seed = 0; // noise only

    TransformCategory category() const;
    /// Throws if the parameter is outside the kind's documented range.
    void validate() const;
    /// "kind:parameter[:seed]" as used in CLI flags and config values.
    std::string to_string() const;
    static TransformSpec parse(const std::string& text);
};

ImageBuffer apply_transform(const ImageBuffer& img, const TransformSpec& t);

struct GridEntry {
    TransformSpec spec;
    std::string family;   // "blur", "noise", ... or "identity"
    bool is_summary = false; // participates in the per-category summary score
};

/// The fixed evaluation sweep. Every family contains its own no-op parameter,
/// and the summary flags mark one entry per family (blur 9, noise 0.1,
/// jpeg 25, brighten 2, rotate 10, flip 1, crop 0.75).
std::vector<GridEntry> transform_grid();

/// Convenience: just the summary entries of one category.
std::vector<GridEntry> summary_set(TransformCategory cat);

} // namespace tokmark
