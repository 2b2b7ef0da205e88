#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokmark/image.hpp"

namespace tokmark {

struct CorpusOptions {
    int count = 200;
    int size = 64;       // square images
    int palette = 12;    // distinct region colors
    bool low_diversity = false; // few colors, no gradients: leaves dead codes

    void validate() const;
};

/// Deterministic synthetic image: flat Voronoi-style color regions over a
/// soft two-color gradient, with slight per-image color jitter. Each image is
/// a pure function of (seed, index).
ImageBuffer synth_image(const CorpusOptions& opts, uint64_t seed, int index);

std::vector<ImageBuffer> make_corpus(const CorpusOptions& opts, uint64_t seed);

/// Writes images as <dir>/img_NNNN.ppm; returns the file paths.
std::vector<std::string> write_corpus(const std::vector<ImageBuffer>& images,
                                      const std::string& dir);
std::vector<ImageBuffer> load_corpus(const std::string& dir);

} // namespace tokmark
