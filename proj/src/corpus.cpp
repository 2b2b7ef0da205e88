#include "tokmark/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "tokmark/rng.hpp"

namespace tokmark {

void CorpusOptions::validate() const {
    if (count < 1) throw std::invalid_argument("CorpusOptions: count must be >= 1");
    if (size < 16 || size % 8 != 0)
        throw std::invalid_argument("CorpusOptions: size must be a multiple of 8, >= 16");
    if (palette < 2) throw std::invalid_argument("CorpusOptions: palette too small");
}

namespace {

// Fixed well-separated base palette; entries beyond it are seeded mixtures.
std::vector<std::array<float, 3>> build_palette(int n, Rng& rng) {
    static const std::array<std::array<float, 3>, 12> base{{
        {0.92f, 0.18f, 0.16f}, {0.15f, 0.55f, 0.90f}, {0.20f, 0.75f, 0.30f},
        {0.95f, 0.80f, 0.15f}, {0.60f, 0.25f, 0.80f}, {0.95f, 0.50f, 0.12f},
        {0.10f, 0.12f, 0.15f}, {0.92f, 0.92f, 0.90f}, {0.45f, 0.30f, 0.18f},
        {0.12f, 0.65f, 0.65f}, {0.85f, 0.40f, 0.60f}, {0.50f, 0.55f, 0.60f},
    }};
    std::vector<std::array<float, 3>> palette;
    for (int i = 0; i < n; ++i) {
        if (i < int(base.size())) {
            palette.push_back(base[size_t(i)]);
        } else {
            std::array<float, 3> c{};
            for (int t = 0; t < 3; ++t) c[size_t(t)] = float(rng.uniform());
            palette.push_back(c);
        }
    }
    return palette;
}

} // namespace

ImageBuffer synth_image(const CorpusOptions& opts, uint64_t seed, int index) {
    opts.validate();
    Rng rng(mix64(mix64(seed, 0x636f7270ULL), uint64_t(index)));
    Rng palette_rng(mix64(seed, 0x70616cULL));
    const auto palette = build_palette(opts.low_diversity ? 4 : opts.palette,
                                       palette_rng);
    const int n = opts.size;
    ImageBuffer img(n, n);

    if (opts.low_diversity) {
        // Flat 8px-aligned rectangles over a flat background: the patch
        // vocabulary collapses to a handful of constant patches, leaving most
        // of a k=256 codebook dead after training.
        const auto bg = palette[size_t(rng.below(palette.size()))];
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = bg[size_t(c)];
        const int rects = 1 + int(rng.below(3));
        for (int r = 0; r < rects; ++r) {
            const int tiles = n / 8;
            const int x0 = 8 * int(rng.below(uint64_t(tiles - 1)));
            const int y0 = 8 * int(rng.below(uint64_t(tiles - 1)));
            const int x1 = x0 + 8 * (1 + int(rng.below(uint64_t(tiles - x0 / 8 - 1))));
            const int y1 = y0 + 8 * (1 + int(rng.below(uint64_t(tiles - y0 / 8 - 1))));
            const auto color = palette[size_t(rng.below(palette.size()))];
            const float shade = rng.below(2) ? 1.0f : 0.75f;
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x)
                    for (int c = 0; c < 3; ++c)
                        img.at(y, x, c) = color[size_t(c)] * shade;
        }
        img.clamp01();
        return img;
    }

    // Per-image jitter and per-region shading spread each color into a family
    // of nearby patch clusters, so the trained codebook tiles the manifold
    // densely instead of one centroid per palette color.
    const float jitter = opts.low_diversity ? 0.0f : 0.04f;
    auto jittered = [&](const std::array<float, 3>& c, Rng& r) {
        std::array<float, 3> out = c;
        const float shade = opts.low_diversity
                                ? 1.0f
                                : 0.65f + 0.6f * float(r.uniform());
        for (auto& v : out)
            v = std::clamp(v * shade + jitter * float(r.normal()), 0.0f, 1.0f);
        return out;
    };

    // Background: soft gradient between two palette colors (flat fill when
    // low diversity).
    const auto bg_a = jittered(palette[size_t(rng.below(palette.size()))], rng);
    const auto bg_b = opts.low_diversity
                          ? bg_a
                          : jittered(palette[size_t(rng.below(palette.size()))], rng);
    const double angle = rng.uniform() * 2.0 * M_PI;
    const double gx = std::cos(angle), gy = std::sin(angle);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double t =
                0.5 + 0.5 * ((x - n / 2.0) * gx + (y - n / 2.0) * gy) / double(n);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = float((1.0 - t) * bg_a[size_t(c)] +
                                        t * bg_b[size_t(c)]);
        }

    // A handful of Voronoi sites with flat colors carve the image into
    // regions; region boundaries provide the mixed patches.
    const int sites = opts.low_diversity ? 2 : 3 + int(rng.below(4));
    struct Site {
        double y, x;
        std::array<float, 3> color;
    };
    std::vector<Site> cells;
    for (int i = 0; i < sites; ++i)
        cells.push_back({rng.uniform() * n, rng.uniform() * n,
                         jittered(palette[size_t(rng.below(palette.size()))], rng)});
    const double reach = double(n) * (0.22 + 0.12 * rng.uniform());
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double best = 1e18;
            const Site* chosen = nullptr;
            for (const auto& s : cells) {
                const double dy = y - s.y, dx = x - s.x;
                const double d2 = dy * dy + dx * dx;
                if (d2 < best) {
                    best = d2;
                    chosen = &s;
                }
            }
            if (chosen && best < reach * reach)
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = chosen->color[size_t(c)];
        }

    // Smooth luminance modulation over the whole frame.
    if (!opts.low_diversity) {
        const double fy = (0.5 + rng.uniform()) / n;
        const double fx = (0.5 + rng.uniform()) / n;
        const double phase = rng.uniform() * 2.0 * M_PI;
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const float gain = float(
                    1.0 + 0.12 * std::sin(2.0 * M_PI * (fy * y + fx * x) + phase));
                for (int c = 0; c < 3; ++c) img.at(y, x, c) *= gain;
            }

        // Contrast compression keeps the patch manifold compact, so the k=256
        // codebook tiles it with realistic quantization margins: moderate
        // pixel noise can then actually move a patch across a Voronoi
        // boundary at re-encoding time, as it does for real tokenizers.
        for (auto& v : img.pixels) v = 0.5f + 0.25f * (v - 0.5f);
    }
    img.clamp01();
    return img;
}

std::vector<ImageBuffer> make_corpus(const CorpusOptions& opts, uint64_t seed) {
    opts.validate();
    std::vector<ImageBuffer> images;
    images.reserve(size_t(opts.count));
    for (int i = 0; i < opts.count; ++i) images.push_back(synth_image(opts, seed, i));
    return images;
}

std::vector<std::string> write_corpus(const std::vector<ImageBuffer>& images,
                                      const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> paths;
    char name[32];
    for (size_t i = 0; i < images.size(); ++i) {
        std::snprintf(name, sizeof(name), "img_%04zu.ppm", i);
        const auto path = (std::filesystem::path(dir) / name).string();
        save_ppm(images[i], path);
        paths.push_back(path);
    }
    return paths;
}

std::vector<ImageBuffer> load_corpus(const std::string& dir) {
    std::vector<std::string> paths;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
        if (entry.path().extension() == ".ppm") paths.push_back(entry.path().string());
    if (paths.empty()) throw std::runtime_error("no .ppm images under " + dir);
    std::sort(paths.begin(), paths.end());
    std::vector<ImageBuffer> images;
    images.reserve(paths.size());
    for (const auto& p : paths) images.push_back(load_ppm(p));
    return images;
}

} // namespace tokmark
