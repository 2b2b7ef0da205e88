#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokmark/image.hpp"
#include "tokmark/wm_core.hpp"

namespace tokmark {

struct LinearCoder; // coder.hpp

/// Vector-quantization codebook over flattened f x f x 3 pixel patches.
/// Entries are k rows of dimension d = 3*f*f; usage counts come from the
/// final k-means assignment and define the alive set.
struct Codebook {
    int k = 0;
    int patch_size = 0; // f
    std::vector<float> entries; // k * d, row-major
    std::vector<uint64_t> usage_counts;

    int dim() const { return 3 * patch_size * patch_size; }
    const float* entry(int j) const { return entries.data() + size_t(j) * size_t(dim()); }

    void validate() const;
};

/// Lloyd's k-means over all patches of the training images, with seeded
/// k-means++ init. Empty clusters are reseeded from the farthest points.
/// The optional sse_trace receives the within-cluster SSE after every
/// iteration (non-increasing).
Codebook train_codebook(const std::vector<ImageBuffer>& images, int k, int f,
                        int iters, uint64_t seed,
                        std::vector<double>* sse_trace = nullptr);

/// Extracts the patch grid of an image, row-major patch scan; each row of the
/// result is one flattened patch.
std::vector<float> image_patches(const ImageBuffer& img, int f, int* rows = nullptr,
                                 int* cols = nullptr);

/// Nearest-entry quantization of one patch; ties break to the lowest index.
int quantize_patch(const Codebook& cb, const float* patch);

/// Tokenize an image: row-major patch scan, each patch assigned its nearest
/// codebook entry. When an encoder replica is supplied, patches pass through
/// it before quantization (the detection-side path after finetuning).
TokenStream encode(const ImageBuffer& img, const Codebook& cb,
                   const LinearCoder* replica = nullptr);

/// Detokenize: pastes codebook entries (the default decoder is the identity
/// on hard latents); with a finetuned coder each patch is D * z + bias,
/// clamped to [0,1].
ImageBuffer decode(const TokenStream& tokens, const Codebook& cb, int rows,
                   int cols, const LinearCoder* coder = nullptr);

/// Square-grid convenience overload (rows = cols = sqrt(T)).
ImageBuffer decode(const TokenStream& tokens, const Codebook& cb,
                   const LinearCoder* coder = nullptr);

/// Fraction of positions where the two streams agree.
double token_match(const TokenStream& a, const TokenStream& b);

/// alive[i] = usage_counts[i] > 0.
std::vector<uint8_t> alive_mask(const Codebook& cb);

/// Binary codebook file: little-endian magic "TKVQCB01", u32 k, u32 f,
/// f32 entries, u64 usage counts.
void save_codebook(const Codebook& cb, const std::string& path);
Codebook load_codebook(const std::string& path);

} // namespace tokmark
