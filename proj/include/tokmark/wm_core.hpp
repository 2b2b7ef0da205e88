#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "tokmark/rng.hpp"

namespace tokmark {

enum class Modality : uint8_t { image = 0, text = 1 };

enum class SplitMode : uint8_t { uniform = 0, stratified = 1 };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

/// Parameters of the green/red watermark: secret key, green fraction gamma,
/// logit boost delta, context size h, and how the vocabulary is split.
struct WatermarkConfig {
    uint64_t key = 0;
    double gamma = 0.25;
    double delta = 2.0;
    int context_size = 1;
    SplitMode split_mode = SplitMode::uniform;

    void validate() const;
};

/// A modality-tagged integer token sequence together with the context size it
/// was generated with.
struct TokenStream {
    Modality modality = Modality::image;
    int vocab_size = 0;
    int context_size = 0;
    std::vector<int> tokens;

    void validate() const;
};

struct GreenMask {
    std::vector<uint8_t> bits; // one per vocabulary entry
    int green_count = 0;

    size_t size() const { return bits.size(); }
    bool green(int token) const { return bits[size_t(token)] != 0; }
};

enum class TokenFlag : uint8_t { green = 0, red = 1, duplicate = 2 };

struct ScoreResult {
    int64_t green_hits = 0;   // S
    int64_t scored_count = 0; // positions kept after dedup
    double gamma_used = 0.0;
    double p_value = 1.0;
    std::vector<TokenFlag> per_token_flags;

    std::string to_json() const;
};

/// Dedup set over (modality, context tuple, token). Keys are packed exactly,
/// which bounds the supported vocabulary; the pipeline stays far below it.
class DedupSet {
public:
    static constexpr int kMaxVocab = 65000;
    static constexpr int kMaxContext = 4;

    /// Inserts the pair; returns false if it was already present.
    bool insert(Modality m, std::span<const int> context, int token);

    size_t size() const { return keys_.size(); }
    void clear() { keys_.clear(); }

private:
    struct KeyHash {
        size_t operator()(const std::pair<uint64_t, uint64_t>& k) const {
            return size_t(mix64(k.first ^ mix64(k.second)));
        }
    };
    std::unordered_set<std::pair<uint64_t, uint64_t>, KeyHash> keys_;
};

/// Seed for one split: a fixed avalanche mix of (key, modality tag, the h
/// context tokens). See rng.hpp for the mix definition.
uint64_t context_seed(const WatermarkConfig& cfg, std::span<const int> context,
                      Modality modality);

/// Pseudorandomly partitions the vocabulary into green and red tokens.
/// Uniform mode marks floor(gamma * vocab_size) greens via a seeded
/// Fisher-Yates prefix. Stratified mode selects floor(gamma * n_alive) greens
/// among alive indices and floor(gamma * n_dead) among dead ones, so the
/// realized alive green ratio is the same for every context and key.
GreenMask derive_green_mask(const WatermarkConfig& cfg,
                            std::span<const int> context, int vocab_size,
                            const std::vector<uint8_t>* alive = nullptr,
                            Modality modality = Modality::image);

/// out[i] = logits[i] + delta * mask[i]; the input is not modified.
std::vector<double> bias_logits(const std::vector<double>& logits,
                                const GreenMask& mask, double delta);

struct ScoreOptions {
    /// Score against gamma' = floor(gamma * n_alive) / n_alive instead of
    /// gamma. Requires an alive mask.
    bool use_gamma_prime = false;
};

double gamma_prime(double gamma, const std::vector<uint8_t>& alive);

/// Scores positions h+1..T of the stream. A (context, token) pair already in
/// `seen` is flagged duplicate and excluded from both the hit count and the
/// scored count. The p-value is the exact binomial tail at gamma_used.
ScoreResult score_stream(const TokenStream& stream, const WatermarkConfig& cfg,
                         const std::vector<uint8_t>* alive, DedupSet& seen,
                         const ScoreOptions& opts = {});

/// Aggregates several streams into one test: sums hits and scored counts over
/// a shared dedup set and computes a single p-value. All configs must share
/// gamma. Vocabularies of different modalities never collide in the dedup set.
ScoreResult joint_detect(const std::vector<TokenStream>& streams,
                         const std::vector<WatermarkConfig>& cfgs,
                         const std::vector<const std::vector<uint8_t>*>& alive_masks,
                         const ScoreOptions& opts = {});

/// Exact p-value: Prob(X >= S) for X ~ Binomial(T - h, gamma). S = 0 returns
/// exactly 1.
double p_value(int64_t S, int64_t T, int64_t h, double gamma);

/// JSON-lines serialization: one object per stream with fields
/// {modality, vocab_size, h, tokens}.
std::string token_stream_to_jsonl(const TokenStream& s);
TokenStream token_stream_from_jsonl(const std::string& line);

} // namespace tokmark
