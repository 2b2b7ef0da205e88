#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tokmark/rng.hpp"
#include "tokmark/wm_core.hpp"

namespace tokmark {

/// Bigram token source fit on tokenized images. Logits are log-probabilities
/// already scaled by the model temperature, so the sampler stays a plain
/// softmax and the watermark bias acts after tempering.
struct BigramModel {
    int vocab_size = 0;
    double smoothing = 1.0;
    double temperature = 1.0;
    std::vector<double> transition; // vocab x vocab counts
    std::vector<double> unigram;    // vocab counts

    std::vector<double> logits(int prev) const; // prev < 0: unigram step
    void validate() const;
};

/// Stationary Zipf text source: p(i) proportional to 1/(i+1)^exponent.
struct ZipfTextModel {
    int vocab_size = 0;
    double exponent = 1.1;
    double temperature = 1.0;

    std::vector<double> logits() const;
    void validate() const;
};

BigramModel fit_bigram(const std::vector<TokenStream>& streams, double smoothing);

struct GenerateOptions {
    const WatermarkConfig* watermark = nullptr; // null: unwatermarked
    const std::vector<uint8_t>* alive = nullptr;
};

TokenStream generate_stream(const BigramModel& model, int length,
                            const GenerateOptions& opts, Rng& rng);
TokenStream generate_stream(const ZipfTextModel& model, int length,
                            const GenerateOptions& opts, Rng& rng);

/// Replaces a uniformly chosen fraction of positions with uniform random
/// tokens.
TokenStream corrupt_text(const TokenStream& stream, double fraction, Rng& rng);

/// Checkpoint: magic "TKBIGRM1", u32 vocab, f64 smoothing/temperature, then
/// the transition and unigram count matrices.
void save_bigram(const BigramModel& model, const std::string& path);
BigramModel load_bigram(const std::string& path);

} // namespace tokmark
