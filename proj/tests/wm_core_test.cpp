#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "tokmark/numstats.hpp"
#include "tokmark/rng.hpp"
#include "tokmark/wm_core.hpp"

using namespace tokmark;
namespace ns = tokmark::numstats;

namespace {

WatermarkConfig make_cfg(uint64_t key, double gamma, int h,
                         SplitMode mode = SplitMode::uniform) {
    WatermarkConfig cfg;
    cfg.key = key;
    cfg.gamma = gamma;
    cfg.delta = 2.0;
    cfg.context_size = h;
    cfg.split_mode = mode;
    return cfg;
}

TokenStream uniform_stream(Rng& rng, int vocab, int h, int length,
                           Modality m = Modality::image) {
    TokenStream s;
    s.modality = m;
    s.vocab_size = vocab;
    s.context_size = h;
    s.tokens.resize(size_t(length));
    for (auto& t : s.tokens) t = int(rng.below(uint64_t(vocab)));
    return s;
}

// Hand-rolled watermarked source: each token is green for its own context
// with probability green_prob, without going through the generator module.
TokenStream biased_stream(Rng& rng, const WatermarkConfig& cfg, int vocab,
                          int length, double green_prob, Modality m) {
    TokenStream s;
    s.modality = m;
    s.vocab_size = vocab;
    s.context_size = cfg.context_size;
    std::vector<int> ctx(size_t(cfg.context_size), 0);
    for (int i = 0; i < length; ++i) {
        int tok;
        if (i >= cfg.context_size && rng.uniform() < green_prob) {
            const auto mask = derive_green_mask(cfg, ctx, vocab, nullptr, m);
            do {
                tok = int(rng.below(uint64_t(vocab)));
            } while (!mask.green(tok));
        } else {
            tok = int(rng.below(uint64_t(vocab)));
        }
        s.tokens.push_back(tok);
        if (cfg.context_size > 0) {
            ctx.erase(ctx.begin());
            ctx.push_back(tok);
        }
    }
    return s;
}

} // namespace

TEST_CASE("derive_green_mask counts and determinism") {
    const auto cfg = make_cfg(1234, 0.25, 0);
    const auto a = derive_green_mask(cfg, {}, 8);
    const auto b = derive_green_mask(cfg, {}, 8);
    CHECK(a.green_count == 2);
    CHECK(a.bits == b.bits);

    CHECK(derive_green_mask(make_cfg(7, 0.999, 0), {}, 8).green_count == 7);
    CHECK(derive_green_mask(make_cfg(7, 0.001, 0), {}, 8).green_count == 0);
}

TEST_CASE("derive_green_mask differs across keys and contexts") {
    const std::vector<int> c1{3}, c2{4};
    const auto cfg = make_cfg(99, 0.5, 1);
    const auto m1 = derive_green_mask(cfg, c1, 64);
    const auto m2 = derive_green_mask(cfg, c2, 64);
    const auto m3 = derive_green_mask(make_cfg(100, 0.5, 1), c1, 64);
    CHECK(m1.bits != m2.bits);
    CHECK(m1.bits != m3.bits);
    // Modality enters the hash: same key and context, different split.
    const auto m4 = derive_green_mask(cfg, c1, 64, nullptr, Modality::text);
    CHECK(m1.bits != m4.bits);
}

TEST_CASE("derive_green_mask error paths") {
    const auto cfg = make_cfg(1, 0.25, 1);
    CHECK_THROWS_AS(derive_green_mask(cfg, {}, 8), std::invalid_argument);
    auto strat = make_cfg(1, 0.25, 0, SplitMode::stratified);
    CHECK_THROWS_AS(derive_green_mask(strat, {}, 8), std::invalid_argument);
}

TEST_CASE("stratified split pins the alive green count; uniform is hypergeometric") {
    const int vocab = 192, n_alive = 12;
    std::vector<uint8_t> alive(vocab, 0);
    Rng pick(404);
    int placed = 0;
    while (placed < n_alive) {
        const auto i = size_t(pick.below(vocab));
        if (!alive[i]) { alive[i] = 1; ++placed; }
    }

    auto alive_green_count = [&](const GreenMask& m) {
        int g = 0;
        for (int i = 0; i < vocab; ++i)
            if (alive[size_t(i)] && m.bits[size_t(i)]) ++g;
        return g;
    };

    for (uint64_t key = 0; key < 200; ++key) {
        const auto cfg = make_cfg(key, 0.25, 0, SplitMode::stratified);
        CHECK(alive_green_count(derive_green_mask(cfg, {}, vocab, &alive)) == 3);
    }

    // Unstratified splits: alive-green counts follow Hypergeom(192, 48, 12).
    const int draws = 100000;
    std::vector<int> hist(n_alive + 1, 0);
    for (int key = 0; key < draws; ++key) {
        const auto cfg = make_cfg(uint64_t(key) + 5000, 0.25, 0);
        ++hist[size_t(alive_green_count(derive_green_mask(cfg, {}, vocab, &alive)))];
    }
    for (int g = 0; g <= n_alive; ++g) {
        const double want = ns::hypergeom_pmf(g, vocab, 48, n_alive);
        const double got = double(hist[size_t(g)]) / draws;
        CHECK(std::fabs(got - want) < 0.01);
    }
}

TEST_CASE("bias_logits definition and softmax effect") {
    GreenMask mask;
    mask.bits = {1, 0};
    mask.green_count = 1;
    CHECK(bias_logits({0.0, 0.0}, mask, 2.0) == std::vector<double>{2.0, 0.0});

    const std::vector<double> input{0.3, -0.7};
    CHECK(bias_logits(input, mask, 0.0) == input);
    CHECK_THROWS_AS(bias_logits({0.0}, mask, 1.0), std::invalid_argument);

    Rng rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 16;
        std::vector<double> logits(n);
        for (auto& v : logits) v = rng.normal();
        GreenMask m;
        m.bits.assign(n, 0);
        for (int i = 0; i < n / 4; ++i) m.bits[size_t(rng.below(n))] = 1;
        const auto biased = bias_logits(logits, m, 2.0);

        auto green_mass = [&](const std::vector<double>& l) {
            double zmax = *std::max_element(l.begin(), l.end());
            double green = 0.0, total = 0.0;
            for (int i = 0; i < n; ++i) {
                const double e = std::exp(l[size_t(i)] - zmax);
                total += e;
                if (m.bits[size_t(i)]) green += e;
            }
            return green / total;
        };
        const double before = green_mass(logits);
        const double after = green_mass(biased);
        const int greens = int(std::count(m.bits.begin(), m.bits.end(), uint8_t(1)));
        if (greens > 0 && greens < n)
            CHECK(after > before);
        else
            CHECK(after == doctest::Approx(before));
    }
}

TEST_CASE("p_value reference points") {
    CHECK(p_value(0, 100, 1, 0.25) == 1.0);
    CHECK(p_value(4, 5, 1, 0.25) == doctest::Approx(0.00390625).epsilon(1e-12));
    const double exact = ns::binom_tail_exact(30, 100, 0.25);
    CHECK(std::fabs(p_value(30, 101, 1, 0.25) - exact) <= 1e-10);
    CHECK_THROWS_AS(p_value(5, 5, 1, 0.25), std::invalid_argument);
}

TEST_CASE("p_value monotone non-increasing in S") {
    for (double gamma : {0.1, 0.25, 0.5}) {
        double prev = 2.0;
        for (int s = 0; s <= 40; ++s) {
            const double p = p_value(s, 41, 1, gamma);
            CHECK(p <= prev + 1e-15);
            prev = p;
        }
    }
}

TEST_CASE("p_value equals exact summation for all T-h <= 32") {
    for (double gamma : {0.1, 0.25, 0.5})
        for (int n = 1; n <= 32; ++n)
            for (int s = 0; s <= n; ++s)
                CHECK(std::fabs(p_value(s, n, 0, gamma) -
                                ns::binom_tail_exact(s, n, gamma)) <= 1e-10);
}

TEST_CASE("score_stream on an all-green stream") {
    // Build a 5-token stream (h=1) whose every scored token is green.
    const auto cfg = make_cfg(77, 0.25, 1);
    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = 64;
    s.context_size = 1;
    s.tokens.push_back(11);
    Rng rng(3);
    while (s.tokens.size() < 5) {
        const std::vector<int> ctx{s.tokens.back()};
        const auto mask = derive_green_mask(cfg, ctx, 64);
        int tok;
        do {
            tok = int(rng.below(64));
        } while (!mask.green(tok));
        s.tokens.push_back(tok);
    }
    DedupSet seen;
    const auto r = score_stream(s, cfg, nullptr, seen);
    CHECK(r.green_hits == 4);
    CHECK(r.scored_count == 4);
    CHECK(r.p_value == doctest::Approx(0.00390625).epsilon(1e-12));
    CHECK(r.per_token_flags == std::vector<TokenFlag>(4, TokenFlag::green));
}

TEST_CASE("dedup absorbs a repeated stream") {
    Rng rng(8);
    const auto cfg = make_cfg(5, 0.25, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const auto s = uniform_stream(rng, 32, 1, 40);
        DedupSet once;
        const auto r1 = score_stream(s, cfg, nullptr, once);

        // Scoring the same stream again through a shared dedup set adds
        // nothing: every pair is already recorded.
        DedupSet shared;
        const auto first = score_stream(s, cfg, nullptr, shared);
        const auto second = score_stream(s, cfg, nullptr, shared);
        CHECK(first.green_hits == r1.green_hits);
        CHECK(second.green_hits + second.scored_count == 0);
        CHECK(second.per_token_flags ==
              std::vector<TokenFlag>(s.tokens.size() - 1, TokenFlag::duplicate));

        // Literal self-concatenation can add at most the one junction pair
        // (last token, first token) that the original never scored.
        TokenStream doubled = s;
        doubled.tokens.insert(doubled.tokens.end(), s.tokens.begin(), s.tokens.end());
        DedupSet twice;
        const auto r2 = score_stream(doubled, cfg, nullptr, twice);
        CHECK(r2.scored_count >= r1.scored_count);
        CHECK(r2.scored_count <= r1.scored_count + 1);
    }

    // At h=0 there is no junction context and the identity is exact.
    const auto cfg0 = make_cfg(5, 0.25, 0);
    for (int trial = 0; trial < 10; ++trial) {
        const auto s = uniform_stream(rng, 32, 0, 40);
        DedupSet once;
        const auto r1 = score_stream(s, cfg0, nullptr, once);
        TokenStream doubled = s;
        doubled.tokens.insert(doubled.tokens.end(), s.tokens.begin(), s.tokens.end());
        DedupSet twice;
        const auto r2 = score_stream(doubled, cfg0, nullptr, twice);
        CHECK(r2.green_hits == r1.green_hits);
        CHECK(r2.scored_count == r1.scored_count);
        CHECK(r2.p_value == doctest::Approx(r1.p_value));
    }
}

TEST_CASE("score_stream error paths") {
    const auto cfg = make_cfg(5, 0.25, 2);
    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = 8;
    s.context_size = 2;
    s.tokens = {1, 2};
    DedupSet seen;
    CHECK_THROWS_AS(score_stream(s, cfg, nullptr, seen), std::invalid_argument);

    s.context_size = 1;
    s.tokens = {1, 2, 3};
    CHECK_THROWS_AS(score_stream(s, cfg, nullptr, seen), std::invalid_argument);
}

TEST_CASE("H0 green fraction and p-value behavior over seeds") {
    std::vector<double> pvals;
    double green_frac_sum = 0.0;
    const int seeds = 500;
    for (int seed = 0; seed < seeds; ++seed) {
        Rng rng(9000 + uint64_t(seed));
        const auto cfg = make_cfg(uint64_t(seed) * 31 + 1, 0.25, 1);
        const auto s = uniform_stream(rng, 128, 1, 1000);
        DedupSet seen;
        const auto r = score_stream(s, cfg, nullptr, seen);
        pvals.push_back(r.p_value);
        green_frac_sum += double(r.green_hits) / double(r.scored_count);
    }
    CHECK(green_frac_sum / seeds == doctest::Approx(0.25).epsilon(0.16));
    CHECK(ns::ks_uniform_plus(pvals) < 0.06);
    CHECK(ns::ks_uniform(std::move(pvals)) < 0.12);
}

TEST_CASE("stratified scoring with gamma_prime") {
    std::vector<uint8_t> alive(100, 0);
    for (int i = 0; i < 30; ++i) alive[size_t(i)] = 1;
    CHECK(gamma_prime(0.25, alive) == doctest::Approx(7.0 / 30.0));

    Rng rng(12);
    auto cfg = make_cfg(3, 0.25, 1, SplitMode::stratified);
    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = 100;
    s.context_size = 1;
    for (int i = 0; i < 50; ++i) s.tokens.push_back(int(rng.below(30)));
    DedupSet seen;
    const auto r = score_stream(s, cfg, &alive, seen, {.use_gamma_prime = true});
    CHECK(r.gamma_used == doctest::Approx(7.0 / 30.0));
    DedupSet seen2;
    const auto r2 = score_stream(s, cfg, &alive, seen2);
    CHECK(r2.gamma_used == doctest::Approx(0.25));
    CHECK(r.green_hits == r2.green_hits);
}

TEST_CASE("joint_detect singleton equals score_stream") {
    Rng rng(21);
    const auto cfg = make_cfg(17, 0.25, 1);
    const auto s = uniform_stream(rng, 64, 1, 100);
    DedupSet seen;
    const auto solo = score_stream(s, cfg, nullptr, seen);
    const auto joint = joint_detect({s}, {cfg}, {nullptr});
    CHECK(joint.green_hits == solo.green_hits);
    CHECK(joint.scored_count == solo.scored_count);
    CHECK(joint.p_value == doctest::Approx(solo.p_value));
}

TEST_CASE("joint_detect aggregates fully green streams") {
    // Two all-green streams of 4 scored tokens each, one per modality.
    auto build = [](uint64_t key, Modality m) {
        const auto cfg = make_cfg(key, 0.25, 1);
        TokenStream s;
        s.modality = m;
        s.vocab_size = 64;
        s.context_size = 1;
        s.tokens.push_back(5);
        Rng rng(1 + uint64_t(m));
        while (s.tokens.size() < 5) {
            const std::vector<int> ctx{s.tokens.back()};
            const auto mask = derive_green_mask(cfg, ctx, 64, nullptr, m);
            int tok;
            do {
                tok = int(rng.below(64));
            } while (!mask.green(tok));
            s.tokens.push_back(tok);
        }
        return std::pair{s, cfg};
    };
    const auto [s1, c1] = build(700, Modality::image);
    const auto [s2, c2] = build(700, Modality::text);
    const auto r = joint_detect({s1, s2}, {c1, c2}, {nullptr, nullptr});
    CHECK(r.green_hits == 8);
    CHECK(r.scored_count == 8);
    CHECK(r.p_value == doctest::Approx(std::pow(0.25, 8)).epsilon(1e-10));

    auto c3 = c2;
    c3.gamma = 0.5;
    CHECK_THROWS_AS(joint_detect({s1, s2}, {c1, c3}, {nullptr, nullptr}),
                    std::invalid_argument);
}

TEST_CASE("identical tokens in different modalities do not collide in dedup") {
    DedupSet seen;
    const std::vector<int> ctx{4};
    CHECK(seen.insert(Modality::image, ctx, 9));
    CHECK(seen.insert(Modality::text, ctx, 9));
    CHECK_FALSE(seen.insert(Modality::image, ctx, 9));
}

TEST_CASE("joint detection beats corrupted text-only detection") {
    // Desk-scale rendition of the joint multi-modal trend: a clean
    // watermarked image stream added to a 30%-corrupted text stream lowers
    // the p-value in nearly all trials.
    const int trials = 200;
    int joint_better = 0;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(40000 + uint64_t(trial));
        const auto cfg_t = make_cfg(13, 0.25, 1);
        const auto cfg_i = make_cfg(13, 0.25, 1);
        auto text = biased_stream(rng, cfg_t, 512, 64, 0.6, Modality::text);
        const auto image = biased_stream(rng, cfg_i, 256, 64, 0.6, Modality::image);
        // Corrupt 30% of text tokens.
        const int n_corrupt = int(0.3 * double(text.tokens.size()));
        for (int i = 0; i < n_corrupt; ++i)
            text.tokens[size_t(rng.below(text.tokens.size()))] =
                int(rng.below(512));

        const auto text_only = joint_detect({text}, {cfg_t}, {nullptr});
        const auto joint = joint_detect({text, image}, {cfg_t, cfg_i}, {nullptr, nullptr});
        if (joint.p_value < text_only.p_value) ++joint_better;
    }
    CHECK(joint_better >= int(0.95 * trials));
}

TEST_CASE("token stream JSONL round trip") {
    TokenStream s;
    s.modality = Modality::text;
    s.vocab_size = 512;
    s.context_size = 1;
    s.tokens = {1, 2, 3, 511};
    const auto line = token_stream_to_jsonl(s);
    const auto back = token_stream_from_jsonl(line);
    CHECK(back.modality == s.modality);
    CHECK(back.vocab_size == s.vocab_size);
    CHECK(back.context_size == s.context_size);
    CHECK(back.tokens == s.tokens);

    DedupSet seen;
    const auto r = score_stream(s, make_cfg(1, 0.25, 1), nullptr, seen);
    CHECK(r.to_json().find("\"p_value\"") != std::string::npos);
}
