#include "tokmark/generator.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace tokmark {

void BigramModel::validate() const {
    if (vocab_size <= 0) throw std::invalid_argument("BigramModel: empty vocabulary");
    if (smoothing < 0.0) throw std::invalid_argument("BigramModel: negative smoothing");
    if (temperature <= 0.0)
        throw std::invalid_argument("BigramModel: temperature must be positive");
    if (int64_t(transition.size()) != int64_t(vocab_size) * vocab_size ||
        int64_t(unigram.size()) != vocab_size)
        throw std::invalid_argument("BigramModel: count matrix size mismatch");
}

void ZipfTextModel::validate() const {
    if (vocab_size <= 0) throw std::invalid_argument("ZipfTextModel: empty vocabulary");
    if (exponent <= 0.0)
        throw std::invalid_argument("ZipfTextModel: exponent must be positive");
    if (temperature <= 0.0)
        throw std::invalid_argument("ZipfTextModel: temperature must be positive");
}

namespace {

// log(count + smoothing) - log(total), divided by the model temperature.
std::vector<double> tempered_log_probs(const double* counts, int n, double smoothing,
                                       double temperature) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += counts[i] + smoothing;
    std::vector<double> out((size_t(n)));
    const double log_total = std::log(total);
    for (int i = 0; i < n; ++i)
        out[size_t(i)] = (std::log(counts[i] + smoothing) - log_total) / temperature;
    return out;
}

int sample_categorical(const std::vector<double>& logits, Rng& rng) {
    const double zmax = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    std::vector<double> weights(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        weights[i] = std::exp(logits[i] - zmax);
        total += weights[i];
    }
    double r = rng.uniform() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
        r -= weights[i];
        if (r <= 0.0) return int(i);
    }
    return int(weights.size()) - 1;
}

template <typename LogitsFn>
TokenStream generate_impl(int vocab_size, Modality modality, int length,
                          const GenerateOptions& opts, Rng& rng, LogitsFn logits_fn) {
    if (length < 1) throw std::invalid_argument("generate_stream: length must be >= 1");
    const WatermarkConfig* wm = opts.watermark;
    if (wm) wm->validate();
    const int h = wm ? wm->context_size : 0;

    TokenStream s;
    s.modality = modality;
    s.vocab_size = vocab_size;
    s.context_size = h;
    s.tokens.reserve(size_t(length));
    for (int i = 0; i < length; ++i) {
        std::vector<double> logits = logits_fn(s.tokens.empty() ? -1 : s.tokens.back());
        if (wm && int(s.tokens.size()) >= h) {
            const std::span<const int> ctx(s.tokens.data() + s.tokens.size() - size_t(h),
                                           size_t(h));
            const auto mask =
                derive_green_mask(*wm, ctx, vocab_size, opts.alive, modality);
            logits = bias_logits(logits, mask, wm->delta);
        }
        s.tokens.push_back(sample_categorical(logits, rng));
    }
    return s;
}

} // namespace

std::vector<double> BigramModel::logits(int prev) const {
    validate();
    if (prev < 0)
        return tempered_log_probs(unigram.data(), vocab_size, smoothing, temperature);
    if (prev >= vocab_size)
        throw std::invalid_argument("BigramModel: previous token out of range");
    return tempered_log_probs(transition.data() + size_t(prev) * size_t(vocab_size),
                              vocab_size, smoothing, temperature);
}

std::vector<double> ZipfTextModel::logits() const {
    validate();
    std::vector<double> out((size_t(vocab_size)));
    for (int i = 0; i < vocab_size; ++i)
        out[size_t(i)] = -exponent * std::log(double(i + 1)) / temperature;
    return out;
}

BigramModel fit_bigram(const std::vector<TokenStream>& streams, double smoothing) {
    if (streams.empty()) throw std::invalid_argument("fit_bigram: empty corpus");
    BigramModel model;
    model.vocab_size = streams.front().vocab_size;
    model.smoothing = smoothing;
    model.transition.assign(size_t(model.vocab_size) * size_t(model.vocab_size), 0.0);
    model.unigram.assign(size_t(model.vocab_size), 0.0);
    for (const auto& s : streams) {
        s.validate();
        if (s.vocab_size != model.vocab_size)
            throw std::invalid_argument("fit_bigram: mixed vocabulary sizes");
        for (size_t i = 0; i < s.tokens.size(); ++i) {
            model.unigram[size_t(s.tokens[i])] += 1.0;
            if (i > 0)
                model.transition[size_t(s.tokens[i - 1]) * size_t(model.vocab_size) +
                                 size_t(s.tokens[i])] += 1.0;
        }
    }
    return model;
}

TokenStream generate_stream(const BigramModel& model, int length,
                            const GenerateOptions& opts, Rng& rng) {
    model.validate();
    return generate_impl(model.vocab_size, Modality::image, length, opts, rng,
                         [&](int prev) { return model.logits(prev); });
}

TokenStream generate_stream(const ZipfTextModel& model, int length,
                            const GenerateOptions& opts, Rng& rng) {
    model.validate();
    const auto base = model.logits();
    return generate_impl(model.vocab_size, Modality::text, length, opts, rng,
                         [&](int) { return base; });
}

TokenStream corrupt_text(const TokenStream& stream, double fraction, Rng& rng) {
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("corrupt_text: fraction must be in [0,1]");
    TokenStream out = stream;
    const size_t n = out.tokens.size();
    const size_t count = size_t(std::lround(fraction * double(n)));
    // Partial Fisher-Yates over the position list picks `count` distinct spots.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    for (size_t i = 0; i < count; ++i) {
        const size_t j = i + size_t(rng.below(n - i));
        std::swap(order[i], order[j]);
        out.tokens[order[i]] = int(rng.below(uint64_t(out.vocab_size)));
    }
    return out;
}

namespace {
constexpr char kBigramMagic[9] = "TKBIGRM1";
}

void save_bigram(const BigramModel& model, const std::string& path) {
    model.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kBigramMagic, 8);
    const uint32_t v = uint32_t(model.vocab_size);
    out.write(reinterpret_cast<const char*>(&v), 4);
    out.write(reinterpret_cast<const char*>(&model.smoothing), 8);
    out.write(reinterpret_cast<const char*>(&model.temperature), 8);
    out.write(reinterpret_cast<const char*>(model.transition.data()),
              std::streamsize(model.transition.size() * 8));
    out.write(reinterpret_cast<const char*>(model.unigram.data()),
              std::streamsize(model.unigram.size() * 8));
}

BigramModel load_bigram(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kBigramMagic, 8) != 0)
        throw std::runtime_error("not a bigram model file: " + path);
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    BigramModel model;
    model.vocab_size = int(v);
    in.read(reinterpret_cast<char*>(&model.smoothing), 8);
    in.read(reinterpret_cast<char*>(&model.temperature), 8);
    model.transition.resize(size_t(v) * size_t(v));
    model.unigram.resize(size_t(v));
    in.read(reinterpret_cast<char*>(model.transition.data()),
            std::streamsize(model.transition.size() * 8));
    in.read(reinterpret_cast<char*>(model.unigram.data()),
            std::streamsize(model.unigram.size() * 8));
    if (!in) throw std::runtime_error("bigram model file: truncated");
    model.validate();
    return model;
}

} // namespace tokmark
