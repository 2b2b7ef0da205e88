#include "tokmark/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "tokmark/coder.hpp"
#include "tokmark/rng.hpp"

namespace tokmark {

void Codebook::validate() const {
    if (k < 2) throw std::invalid_argument("Codebook: k must be at least 2");
    if (patch_size < 1) throw std::invalid_argument("Codebook: bad patch size");
    if (int64_t(entries.size()) != int64_t(k) * dim())
        throw std::invalid_argument("Codebook: entry buffer size mismatch");
    for (float v : entries)
        if (!std::isfinite(v)) throw std::invalid_argument("Codebook: non-finite entry");
}

std::vector<float> image_patches(const ImageBuffer& img, int f, int* rows, int* cols) {
    if (img.height % f != 0 || img.width % f != 0)
        throw std::invalid_argument("image dimensions must be divisible by the patch size");
    const int pr = img.height / f, pc = img.width / f;
    const int d = 3 * f * f;
    std::vector<float> patches(size_t(pr) * size_t(pc) * size_t(d));
    size_t out = 0;
    for (int py = 0; py < pr; ++py)
        for (int px = 0; px < pc; ++px)
            for (int y = 0; y < f; ++y)
                for (int x = 0; x < f; ++x)
                    for (int c = 0; c < 3; ++c)
                        patches[out++] = img.at(py * f + y, px * f + x, c);
    if (rows) *rows = pr;
    if (cols) *cols = pc;
    return patches;
}

int quantize_patch(const Codebook& cb, const float* patch) {
    const int d = cb.dim();
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int j = 0; j < cb.k; ++j) {
        const float* e = cb.entry(j);
        double dist = 0.0;
        for (int i = 0; i < d; ++i) {
            const double diff = double(patch[i]) - double(e[i]);
            dist += diff * diff;
        }
        if (dist < best_dist) {
            best_dist = dist;
            best = j;
        }
    }
    return best;
}

namespace {

void assign_all(const Codebook& cb, const std::vector<float>& patches, int n,
                std::vector<int>& assign, std::vector<double>* dists) {
    const int d = cb.dim();
    for (int i = 0; i < n; ++i) {
        const float* p = patches.data() + size_t(i) * size_t(d);
        const int j = quantize_patch(cb, p);
        assign[size_t(i)] = j;
        if (dists) {
            const float* e = cb.entry(j);
            double dist = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = double(p[t]) - double(e[t]);
                dist += diff * diff;
            }
            (*dists)[size_t(i)] = dist;
        }
    }
}

} // namespace

Codebook train_codebook(const std::vector<ImageBuffer>& images, int k, int f,
                        int iters, uint64_t seed, std::vector<double>* sse_trace) {
    if (images.empty()) throw std::invalid_argument("train_codebook: no images");
    const int d = 3 * f * f;

    std::vector<float> patches;
    for (const auto& img : images) {
        auto p = image_patches(img, f);
        patches.insert(patches.end(), p.begin(), p.end());
    }
    const int n = int(patches.size() / size_t(d));
    if (n < k) throw std::invalid_argument("train_codebook: fewer patches than k");

    Codebook cb;
    cb.k = k;
    cb.patch_size = f;
    cb.entries.assign(size_t(k) * size_t(d), 0.0f);
    cb.usage_counts.assign(size_t(k), 0);

    // k-means++ init.
    Rng rng(mix64(seed, 0x6b6d65616e73ULL));
    auto copy_point = [&](int j, int i) {
        std::memcpy(cb.entries.data() + size_t(j) * size_t(d),
                    patches.data() + size_t(i) * size_t(d), size_t(d) * sizeof(float));
    };
    copy_point(0, int(rng.below(uint64_t(n))));
    std::vector<double> min_dist(size_t(n), std::numeric_limits<double>::infinity());
    for (int j = 1; j < k; ++j) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            const float* p = patches.data() + size_t(i) * size_t(d);
            const float* e = cb.entry(j - 1);
            double dist = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = double(p[t]) - double(e[t]);
                dist += diff * diff;
            }
            min_dist[size_t(i)] = std::min(min_dist[size_t(i)], dist);
            total += min_dist[size_t(i)];
        }
        double r = rng.uniform() * total;
        int chosen = n - 1;
        for (int i = 0; i < n; ++i) {
            r -= min_dist[size_t(i)];
            if (r <= 0.0) { chosen = i; break; }
        }
        copy_point(j, chosen);
    }

    std::vector<int> assign(size_t(n), 0);
    std::vector<double> dists(size_t(n), 0.0);
    std::vector<double> sums(size_t(k) * size_t(d));
    std::vector<int64_t> counts((size_t(k)));
    for (int iter = 0; iter < iters; ++iter) {
        assign_all(cb, patches, n, assign, &dists);
        if (sse_trace) {
            double sse = 0.0;
            for (double v : dists) sse += v;
            sse_trace->push_back(sse);
        }
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int j = assign[size_t(i)];
            ++counts[size_t(j)];
            const float* p = patches.data() + size_t(i) * size_t(d);
            double* s = sums.data() + size_t(j) * size_t(d);
            for (int t = 0; t < d; ++t) s[t] += double(p[t]);
        }
        for (int j = 0; j < k; ++j) {
            if (counts[size_t(j)] == 0) {
                // Reseed from the farthest point; ties to the lowest index.
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i)
                    if (dists[size_t(i)] > far_d) { far_d = dists[size_t(i)]; far_i = i; }
                copy_point(j, far_i);
                dists[size_t(far_i)] = 0.0;
                continue;
            }
            float* e = cb.entries.data() + size_t(j) * size_t(d);
            const double* s = sums.data() + size_t(j) * size_t(d);
            for (int t = 0; t < d; ++t) e[t] = float(s[t] / double(counts[size_t(j)]));
        }
    }
    assign_all(cb, patches, n, assign, &dists);
    if (sse_trace) {
        double sse = 0.0;
        for (double v : dists) sse += v;
        sse_trace->push_back(sse);
    }
    for (int i = 0; i < n; ++i) ++cb.usage_counts[size_t(assign[size_t(i)])];
    return cb;
}

TokenStream encode(const ImageBuffer& img, const Codebook& cb,
                   const LinearCoder* replica) {
    cb.validate();
    const int f = cb.patch_size;
    const int d = cb.dim();
    int rows = 0, cols = 0;
    auto patches = image_patches(img, f, &rows, &cols);

    TokenStream s;
    s.modality = Modality::image;
    s.vocab_size = cb.k;
    s.context_size = 0;
    s.tokens.reserve(size_t(rows) * size_t(cols));
    std::vector<float> latent((size_t(d)));
    for (int i = 0; i < rows * cols; ++i) {
        const float* p = patches.data() + size_t(i) * size_t(d);
        if (replica) {
            replica->encode_patch(p, latent.data());
            p = latent.data();
        }
        s.tokens.push_back(quantize_patch(cb, p));
    }
    return s;
}

ImageBuffer decode(const TokenStream& tokens, const Codebook& cb, int rows,
                   int cols, const LinearCoder* coder) {
    cb.validate();
    if (int64_t(tokens.tokens.size()) != int64_t(rows) * cols)
        throw std::invalid_argument("decode: token count does not match the target grid");
    const int f = cb.patch_size;
    const int d = cb.dim();
    ImageBuffer img(rows * f, cols * f);
    std::vector<float> patch((size_t(d)));
    for (int i = 0; i < rows * cols; ++i) {
        const int tok = tokens.tokens[size_t(i)];
        if (tok < 0 || tok >= cb.k)
            throw std::invalid_argument("decode: token out of codebook range");
        const float* src = cb.entry(tok);
        if (coder) {
            coder->decode_patch(src, patch.data());
            src = patch.data();
        }
        const int py = i / cols, px = i % cols;
        size_t at = 0;
        for (int y = 0; y < f; ++y)
            for (int x = 0; x < f; ++x)
                for (int c = 0; c < 3; ++c)
                    img.at(py * f + y, px * f + x, c) =
                        std::clamp(src[at++], 0.0f, 1.0f);
    }
    return img;
}

ImageBuffer decode(const TokenStream& tokens, const Codebook& cb,
                   const LinearCoder* coder) {
    const int side = int(std::lround(std::sqrt(double(tokens.tokens.size()))));
    if (int64_t(side) * side != int64_t(tokens.tokens.size()))
        throw std::invalid_argument("decode: stream is not a square grid; pass rows/cols");
    return decode(tokens, cb, side, side, coder);
}

double token_match(const TokenStream& a, const TokenStream& b) {
    if (a.tokens.size() != b.tokens.size())
        throw std::invalid_argument("token_match: length mismatch");
    if (a.tokens.empty()) throw std::invalid_argument("token_match: empty streams");
    int64_t same = 0;
    for (size_t i = 0; i < a.tokens.size(); ++i)
        if (a.tokens[i] == b.tokens[i]) ++same;
    return double(same) / double(a.tokens.size());
}

std::vector<uint8_t> alive_mask(const Codebook& cb) {
    if (cb.usage_counts.empty() ||
        std::all_of(cb.usage_counts.begin(), cb.usage_counts.end(),
                    [](uint64_t c) { return c == 0; }))
        throw std::invalid_argument("alive_mask: codebook has no usage counts");
    std::vector<uint8_t> mask(cb.usage_counts.size());
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = cb.usage_counts[i] > 0 ? 1 : 0;
    return mask;
}

namespace {
constexpr char kMagic[9] = "TKVQCB01";

template <typename T>
void write_raw(std::ofstream& out, const T* data, size_t count) {
    out.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(T)));
}

template <typename T>
void read_raw(std::ifstream& in, T* data, size_t count) {
    in.read(reinterpret_cast<char*>(data), std::streamsize(count * sizeof(T)));
    if (size_t(in.gcount()) != count * sizeof(T))
        throw std::runtime_error("codebook file: truncated");
}
} // namespace

void save_codebook(const Codebook& cb, const std::string& path) {
    cb.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(kMagic, 8);
    const uint32_t k = uint32_t(cb.k), f = uint32_t(cb.patch_size);
    write_raw(out, &k, 1);
    write_raw(out, &f, 1);
    write_raw(out, cb.entries.data(), cb.entries.size());
    write_raw(out, cb.usage_counts.data(), cb.usage_counts.size());
}

Codebook load_codebook(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[8];
    read_raw(in, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("not a codebook file: " + path);
    uint32_t k = 0, f = 0;
    read_raw(in, &k, 1);
    read_raw(in, &f, 1);
    Codebook cb;
    cb.k = int(k);
    cb.patch_size = int(f);
    cb.entries.resize(size_t(k) * size_t(cb.dim()));
    cb.usage_counts.resize(size_t(k));
    read_raw(in, cb.entries.data(), cb.entries.size());
    read_raw(in, cb.usage_counts.data(), cb.usage_counts.size());
    cb.validate();
    return cb;
}

} // namespace tokmark
