#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "tokmark/codebook.hpp"
#include "tokmark/coder.hpp"
#include "tokmark/corpus.hpp"
#include "tokmark/rng.hpp"
#include "tokmark/transforms.hpp"

using namespace tokmark;
namespace fs = std::filesystem;

namespace {

// Image whose patches are codebook entries pasted verbatim.
ImageBuffer image_of_entries(const Codebook& cb, const std::vector<int>& tokens,
                             int rows, int cols) {
    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = cb.k;
    s.context_size = 0;
    s.tokens = tokens;
    return decode(s, cb, rows, cols);
}

Codebook tiny_codebook(uint64_t seed, int k = 16, int f = 4) {
    Rng rng(seed);
    Codebook cb;
    cb.k = k;
    cb.patch_size = f;
    cb.entries.resize(size_t(k) * size_t(cb.dim()));
    for (auto& v : cb.entries) v = float(rng.uniform());
    cb.usage_counts.assign(size_t(k), 1);
    return cb;
}

} // namespace

TEST_CASE("training on few distinct patches gives exact centroids") {
    // All-constant images: k=1-like behavior checked through k=2 on two
    // distinct patch values.
    std::vector<ImageBuffer> imgs;
    for (float v : {0.2f, 0.8f}) {
        ImageBuffer img(8, 8, v);
        imgs.push_back(img);
    }
    const auto cb = train_codebook(imgs, 2, 8, 5, 7);
    // Two clusters, one per constant patch; zero quantization error.
    for (const auto& img : imgs) {
        const auto s = encode(img, cb);
        const auto back = decode(s, cb, 1, 1);
        for (size_t i = 0; i < img.pixels.size(); ++i)
            CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-6));
    }
    CHECK(encode(imgs[0], cb).tokens[0] != encode(imgs[1], cb).tokens[0]);
}

TEST_CASE("k equal to the number of distinct patches reaches zero error") {
    Rng rng(5);
    ImageBuffer img(16, 16);
    // Four distinct constant patches of size 8.
    const float vals[4] = {0.1f, 0.35f, 0.6f, 0.85f};
    for (int py = 0; py < 2; ++py)
        for (int px = 0; px < 2; ++px)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(py * 8 + y, px * 8 + x, c) = vals[py * 2 + px];
    std::vector<double> sse;
    const auto cb = train_codebook({img}, 4, 8, 3, 9, &sse);
    CHECK(sse.back() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("SSE trace is non-increasing") {
    CorpusOptions opts;
    opts.count = 40;
    const auto corpus = make_corpus(opts, 31);
    std::vector<double> sse;
    (void)train_codebook(corpus, 64, 8, 12, 3, &sse);
    REQUIRE(sse.size() >= 2);
    for (size_t i = 1; i < sse.size(); ++i) CHECK(sse[i] <= sse[i - 1] + 1e-6);
}

TEST_CASE("train_codebook rejects undersized corpora") {
    ImageBuffer img(8, 8, 0.5f);
    CHECK_THROWS_AS(train_codebook({img}, 2, 8, 3, 1), std::invalid_argument);
    CHECK_THROWS_AS(train_codebook({}, 2, 8, 3, 1), std::invalid_argument);
}

TEST_CASE("encode recovers pasted codebook entries exactly") {
    const auto cb = tiny_codebook(11);
    std::vector<int> tokens(16);
    Rng rng(2);
    for (auto& t : tokens) t = int(rng.below(uint64_t(cb.k)));
    const auto img = image_of_entries(cb, tokens, 4, 4);
    const auto s = encode(img, cb);
    CHECK(s.tokens == tokens);
}

TEST_CASE("constant image yields constant tokens") {
    const auto cb = tiny_codebook(13);
    ImageBuffer img(16, 16, 0.5f);
    const auto s = encode(img, cb);
    for (int t : s.tokens) CHECK(t == s.tokens[0]);
}

TEST_CASE("encode matches a brute-force nearest neighbor scan") {
    const auto cb = tiny_codebook(17);
    Rng rng(23);
    ImageBuffer img(16, 16);
    for (auto& v : img.pixels) v = float(rng.uniform());
    const auto s = encode(img, cb);

    const int f = cb.patch_size, d = cb.dim();
    const auto patches = image_patches(img, f);
    for (size_t i = 0; i < s.tokens.size(); ++i) {
        int best = 0;
        double best_dist = 1e300;
        for (int j = 0; j < cb.k; ++j) {
            double dist = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = double(patches[i * size_t(d) + size_t(t)]) -
                                    double(cb.entry(j)[t]);
                dist += diff * diff;
            }
            if (dist < best_dist) {
                best_dist = dist;
                best = j;
            }
        }
        CHECK(s.tokens[i] == best);
    }
}

TEST_CASE("nearest entry beats every other entry (exhaustive)") {
    const auto cb = tiny_codebook(29, 8, 2);
    Rng rng(31);
    const int d = cb.dim();
    std::vector<float> patch((size_t(d)));
    for (int trial = 0; trial < 50; ++trial) {
        for (auto& v : patch) v = float(rng.uniform());
        const int chosen = quantize_patch(cb, patch.data());
        double chosen_dist = 0.0;
        for (int t = 0; t < d; ++t) {
            const double diff = double(patch[size_t(t)]) - double(cb.entry(chosen)[t]);
            chosen_dist += diff * diff;
        }
        for (int j = 0; j < cb.k; ++j) {
            double dist = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = double(patch[size_t(t)]) - double(cb.entry(j)[t]);
                dist += diff * diff;
            }
            CHECK(chosen_dist <= dist + 1e-12);
        }
    }
}

TEST_CASE("encode is equivariant under patch-grid translation") {
    const auto cb = tiny_codebook(37, 16, 4);
    Rng rng(41);
    ImageBuffer img(16, 24);
    for (auto& v : img.pixels) v = float(rng.uniform());
    const auto s = encode(img, cb);

    // Shift the image by one full patch to the right (wrapping the last
    // column of patches off): tokens shift accordingly.
    ImageBuffer shifted(16, 24);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 24; ++x)
            for (int c = 0; c < 3; ++c)
                shifted.at(y, x, c) = img.at(y, (x + 4) % 24, c);
    const auto s2 = encode(shifted, cb);
    const int cols = 24 / 4;
    for (int py = 0; py < 4; ++py)
        for (int px = 0; px < cols; ++px)
            CHECK(s2.tokens[size_t(py * cols + px)] ==
                  s.tokens[size_t(py * cols + (px + 1) % cols)]);
}

TEST_CASE("default decode-encode cycle is perfect without perturbation") {
    CorpusOptions opts;
    opts.count = 30;
    const auto corpus = make_corpus(opts, 53);
    const auto cb = train_codebook(corpus, 64, 8, 15, 59);
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        TokenStream s;
        s.modality = Modality::image;
        s.vocab_size = cb.k;
        s.context_size = 0;
        for (int i = 0; i < 64; ++i) s.tokens.push_back(int(rng.below(uint64_t(cb.k))));
        const auto img = decode(s, cb);
        const auto back = encode(img, cb);
        CHECK(token_match(s, back) == 1.0);
    }
}

TEST_CASE("gaussian noise breaks reverse consistency") {
    // Full desk-scale tokenizer: 200-image corpus, k=256.
    CorpusOptions opts;
    opts.count = 200;
    opts.size = 64;
    const auto corpus = make_corpus(opts, 67);
    const auto cb = train_codebook(corpus, 256, 8, 25, 71);
    Rng rng(73);
    int below_one = 0;
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        TokenStream s;
        s.modality = Modality::image;
        s.vocab_size = cb.k;
        s.context_size = 0;
        for (int i = 0; i < 64; ++i) s.tokens.push_back(int(rng.below(uint64_t(cb.k))));
        auto noisy = TransformSpec::parse("noise:0.1");
        noisy.seed = rng.next_u64();
        const auto img = apply_transform(decode(s, cb), noisy);
        if (token_match(s, encode(img, cb)) < 1.0) ++below_one;
    }
    CHECK(below_one >= 99);
}

TEST_CASE("token_match basics") {
    TokenStream a, b;
    a.modality = b.modality = Modality::image;
    a.vocab_size = b.vocab_size = 8;
    a.context_size = b.context_size = 0;
    a.tokens = {1, 2, 3, 4};
    b.tokens = {1, 2, 0, 0};
    CHECK(token_match(a, a) == 1.0);
    CHECK(token_match(a, b) == 0.5);
    CHECK(token_match(b, a) == token_match(a, b));
    b.tokens = {5, 6, 7, 0};
    CHECK(token_match(a, b) == 0.0);
    b.tokens = {1, 2};
    CHECK_THROWS_AS(token_match(a, b), std::invalid_argument);
}

TEST_CASE("alive mask reflects usage") {
    // 8 codes trained on 4 distinct constant patches: exactly 4 alive.
    std::vector<ImageBuffer> imgs;
    for (float v : {0.1f, 0.35f, 0.6f, 0.85f}) imgs.push_back(ImageBuffer(8, 8, v));
    // Duplicate so every patch appears several times.
    const auto originals = imgs;
    imgs.insert(imgs.end(), originals.begin(), originals.end());
    const auto cb = train_codebook(imgs, 8, 8, 10, 3);
    const auto alive = alive_mask(cb);
    CHECK(std::accumulate(alive.begin(), alive.end(), 0) == 4);

    Codebook untrained = cb;
    std::fill(untrained.usage_counts.begin(), untrained.usage_counts.end(), 0);
    CHECK_THROWS_AS(alive_mask(untrained), std::invalid_argument);
}

TEST_CASE("low-diversity corpora leave dead codes") {
    CorpusOptions opts;
    opts.count = 80;
    opts.low_diversity = true;
    const auto corpus = make_corpus(opts, 79);
    const auto cb = train_codebook(corpus, 256, 8, 15, 83);
    const auto alive = alive_mask(cb);
    const int n_alive = int(std::accumulate(alive.begin(), alive.end(), 0));
    CHECK(n_alive < cb.k);
    CHECK(n_alive >= 2);
}

TEST_CASE("codebook file round trip") {
    const auto cb = tiny_codebook(89);
    const auto path =
        (fs::temp_directory_path() / "tokmark_cb_roundtrip.bin").string();
    save_codebook(cb, path);
    const auto back = load_codebook(path);
    CHECK(back.k == cb.k);
    CHECK(back.patch_size == cb.patch_size);
    CHECK(back.entries == cb.entries);
    CHECK(back.usage_counts == cb.usage_counts);
    fs::remove(path);
}

TEST_CASE("decode validates tokens and grid size") {
    const auto cb = tiny_codebook(97);
    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = cb.k;
    s.context_size = 0;
    s.tokens = {0, 1, 2};
    CHECK_THROWS_AS(decode(s, cb, 2, 2), std::invalid_argument);
    s.tokens = {0, 1, 2, 99};
    CHECK_THROWS_AS(decode(s, cb, 2, 2), std::invalid_argument);
    s.tokens = {0, 1, 2, 3};
    CHECK_NOTHROW(decode(s, cb, 2, 2));
}
