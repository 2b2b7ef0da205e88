#include "tokmark/wm_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "tokmark/numstats.hpp"

namespace tokmark {

std::string to_string(Modality m) {
    return m == Modality::image ? "image" : "text";
}

Modality modality_from_string(const std::string& s) {
    if (s == "image") return Modality::image;
    if (s == "text") return Modality::text;
    throw std::invalid_argument("unknown modality: " + s);
}

void WatermarkConfig::validate() const {
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("WatermarkConfig: gamma must be in (0,1)");
    if (delta < 0.0)
        throw std::invalid_argument("WatermarkConfig: delta must be non-negative");
    if (context_size < 0 || context_size > DedupSet::kMaxContext)
        throw std::invalid_argument("WatermarkConfig: context_size must be in [0,4]");
}

void TokenStream::validate() const {
    if (vocab_size <= 0 || vocab_size > DedupSet::kMaxVocab)
        throw std::invalid_argument("TokenStream: vocab_size out of range");
    if (int64_t(tokens.size()) < context_size)
        throw std::invalid_argument("TokenStream: shorter than its context size");
    for (int t : tokens)
        if (t < 0 || t >= vocab_size)
            throw std::invalid_argument("TokenStream: token outside vocabulary");
}

bool DedupSet::insert(Modality m, std::span<const int> context, int token) {
    if (context.size() > kMaxContext)
        throw std::invalid_argument("DedupSet: context too long");
    // 16 bits per token, 0xFFFF as the padding sentinel for short contexts.
    uint64_t hi = uint64_t(m) << 32 | uint32_t(token);
    uint64_t lo = 0;
    for (size_t i = 0; i < kMaxContext; ++i) {
        const uint64_t v = i < context.size() ? uint64_t(uint16_t(context[i])) : 0xFFFFULL;
        lo = lo << 16 | v;
    }
    return keys_.insert({hi, lo}).second;
}

uint64_t context_seed(const WatermarkConfig& cfg, std::span<const int> context,
                      Modality modality) {
    if (int(context.size()) != cfg.context_size)
        throw std::invalid_argument("context_seed: context length mismatch");
    uint64_t seed = mix64(cfg.key, uint64_t(modality) + 1);
    for (int t : context) seed = mix64(seed, uint64_t(uint32_t(t)));
    return seed;
}

namespace {

// Marks `count` greens among `indices` using a partial Fisher-Yates prefix.
void mark_prefix(Rng& rng, std::vector<int>& indices, int count, GreenMask& mask) {
    const int n = int(indices.size());
    for (int i = 0; i < count; ++i) {
        const int j = i + int(rng.below(uint64_t(n - i)));
        std::swap(indices[size_t(i)], indices[size_t(j)]);
        mask.bits[size_t(indices[size_t(i)])] = 1;
        ++mask.green_count;
    }
}

} // namespace

GreenMask derive_green_mask(const WatermarkConfig& cfg,
                            std::span<const int> context, int vocab_size,
                            const std::vector<uint8_t>* alive, Modality modality) {
    cfg.validate();
    if (vocab_size <= 0)
        throw std::invalid_argument("derive_green_mask: vocab_size must be positive");
    if (cfg.split_mode == SplitMode::stratified && alive == nullptr)
        throw std::invalid_argument("derive_green_mask: stratified mode requires an alive mask");
    if (alive && int(alive->size()) != vocab_size)
        throw std::invalid_argument("derive_green_mask: alive mask size mismatch");

    GreenMask mask;
    mask.bits.assign(size_t(vocab_size), 0);
    const uint64_t seed = context_seed(cfg, context, modality);

    if (cfg.split_mode == SplitMode::uniform) {
        std::vector<int> indices((size_t(vocab_size)));
        std::iota(indices.begin(), indices.end(), 0);
        Rng rng(seed);
        mark_prefix(rng, indices, int(cfg.gamma * vocab_size), mask);
        return mask;
    }

    std::vector<int> alive_idx, dead_idx;
    for (int i = 0; i < vocab_size; ++i)
        ((*alive)[size_t(i)] ? alive_idx : dead_idx).push_back(i);
    Rng rng_alive(mix64(seed, 1));
    Rng rng_dead(mix64(seed, 2));
    mark_prefix(rng_alive, alive_idx, int(cfg.gamma * double(alive_idx.size())), mask);
    mark_prefix(rng_dead, dead_idx, int(cfg.gamma * double(dead_idx.size())), mask);
    return mask;
}

std::vector<double> bias_logits(const std::vector<double>& logits,
                                const GreenMask& mask, double delta) {
    if (logits.size() != mask.size())
        throw std::invalid_argument("bias_logits: length mismatch");
    std::vector<double> out(logits);
    for (size_t i = 0; i < out.size(); ++i)
        if (mask.bits[i]) out[i] += delta;
    return out;
}

double gamma_prime(double gamma, const std::vector<uint8_t>& alive) {
    const int64_t n_alive = std::count(alive.begin(), alive.end(), uint8_t(1));
    if (n_alive == 0)
        throw std::invalid_argument("gamma_prime: no alive codes");
    return std::floor(gamma * double(n_alive)) / double(n_alive);
}

double p_value(int64_t S, int64_t T, int64_t h, double gamma) {
    const int64_t n = T - h;
    if (S < 0 || S > n)
        throw std::invalid_argument("p_value: S must be in [0, T-h]");
    return numstats::binom_tail(S, n, gamma);
}

namespace {

struct ScoreAccum {
    int64_t hits = 0;
    int64_t scored = 0;
};

void score_into(const TokenStream& stream, const WatermarkConfig& cfg,
                const std::vector<uint8_t>* alive, DedupSet& seen,
                ScoreAccum& acc, std::vector<TokenFlag>& flags) {
    stream.validate();
    cfg.validate();
    if (stream.context_size != cfg.context_size)
        throw std::invalid_argument("score_stream: stream and config context sizes differ");
    const int h = cfg.context_size;
    if (int64_t(stream.tokens.size()) < h + 1)
        throw std::invalid_argument("score_stream: stream shorter than h+1");

    // Masks are pure functions of the seed; memoize within this call.
    std::unordered_map<uint64_t, GreenMask> mask_cache;
    for (size_t i = size_t(h); i < stream.tokens.size(); ++i) {
        const std::span<const int> ctx(stream.tokens.data() + i - size_t(h), size_t(h));
        const int token = stream.tokens[i];
        if (!seen.insert(stream.modality, ctx, token)) {
            flags.push_back(TokenFlag::duplicate);
            continue;
        }
        const uint64_t seed = context_seed(cfg, ctx, stream.modality);
        auto it = mask_cache.find(seed);
        if (it == mask_cache.end())
            it = mask_cache.emplace(seed, derive_green_mask(cfg, ctx, stream.vocab_size,
                                                            alive, stream.modality)).first;
        ++acc.scored;
        if (it->second.green(token)) {
            ++acc.hits;
            flags.push_back(TokenFlag::green);
        } else {
            flags.push_back(TokenFlag::red);
        }
    }
}

double resolve_gamma(const WatermarkConfig& cfg, const std::vector<uint8_t>* alive,
                     const ScoreOptions& opts) {
    if (!opts.use_gamma_prime) return cfg.gamma;
    if (!alive)
        throw std::invalid_argument("score: gamma' scoring requires an alive mask");
    return gamma_prime(cfg.gamma, *alive);
}

} // namespace

ScoreResult score_stream(const TokenStream& stream, const WatermarkConfig& cfg,
                         const std::vector<uint8_t>* alive, DedupSet& seen,
                         const ScoreOptions& opts) {
    ScoreResult result;
    ScoreAccum acc;
    score_into(stream, cfg, alive, seen, acc, result.per_token_flags);
    result.green_hits = acc.hits;
    result.scored_count = acc.scored;
    result.gamma_used = resolve_gamma(cfg, alive, opts);
    result.p_value = acc.scored == 0
                         ? 1.0
                         : numstats::binom_tail(acc.hits, acc.scored, result.gamma_used);
    return result;
}

ScoreResult joint_detect(const std::vector<TokenStream>& streams,
                         const std::vector<WatermarkConfig>& cfgs,
                         const std::vector<const std::vector<uint8_t>*>& alive_masks,
                         const ScoreOptions& opts) {
    if (streams.empty())
        throw std::invalid_argument("joint_detect: no streams");
    if (cfgs.size() != streams.size() || alive_masks.size() != streams.size())
        throw std::invalid_argument("joint_detect: per-stream config/mask count mismatch");
    for (const auto& cfg : cfgs)
        if (cfg.gamma != cfgs.front().gamma)
            throw std::invalid_argument("joint_detect: all streams must share gamma");
    if (opts.use_gamma_prime) {
        for (size_t i = 1; i < streams.size(); ++i)
            if (streams[i].modality != streams[0].modality ||
                streams[i].vocab_size != streams[0].vocab_size ||
                alive_masks[i] != alive_masks[0])
                throw std::invalid_argument(
                    "joint_detect: gamma' scoring needs a shared vocabulary and alive mask");
    }

    ScoreResult result;
    ScoreAccum acc;
    DedupSet seen;
    for (size_t i = 0; i < streams.size(); ++i)
        score_into(streams[i], cfgs[i], alive_masks[i], seen, acc, result.per_token_flags);
    result.green_hits = acc.hits;
    result.scored_count = acc.scored;
    result.gamma_used = resolve_gamma(cfgs.front(), alive_masks.front(), opts);
    result.p_value = acc.scored == 0
                         ? 1.0
                         : numstats::binom_tail(acc.hits, acc.scored, result.gamma_used);
    return result;
}

std::string ScoreResult::to_json() const {
    nlohmann::json j;
    j["green_hits"] = green_hits;
    j["scored_count"] = scored_count;
    j["gamma_used"] = gamma_used;
    j["p_value"] = p_value;
    nlohmann::json flags = nlohmann::json::array();
    for (TokenFlag f : per_token_flags)
        flags.push_back(f == TokenFlag::green ? "green"
                        : f == TokenFlag::red ? "red"
                                              : "duplicate");
    j["per_token_flags"] = std::move(flags);
    return j.dump();
}

std::string token_stream_to_jsonl(const TokenStream& s) {
    nlohmann::json j;
    j["modality"] = to_string(s.modality);
    j["vocab_size"] = s.vocab_size;
    j["h"] = s.context_size;
    j["tokens"] = s.tokens;
    return j.dump();
}

TokenStream token_stream_from_jsonl(const std::string& line) {
    const auto j = nlohmann::json::parse(line);
    TokenStream s;
    s.modality = modality_from_string(j.at("modality").get<std::string>());
    s.vocab_size = j.at("vocab_size").get<int>();
    s.context_size = j.at("h").get<int>();
    s.tokens = j.at("tokens").get<std::vector<int>>();
    s.validate();
    return s;
}

} // namespace tokmark
