#include "tokmark/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "tokmark/rng.hpp"

namespace tokmark {

namespace {

const char* kind_name(TransformKind k) {
    switch (k) {
        case TransformKind::identity: return "identity";
        case TransformKind::blur: return "blur";
        case TransformKind::noise: return "noise";
        case TransformKind::brighten: return "brighten";
        case TransformKind::jpeg_like: return "jpeg_like";
        case TransformKind::rotate: return "rotate";
        case TransformKind::hflip: return "hflip";
        case TransformKind::crop: return "crop";
    }
    return "?";
}

TransformKind kind_from_name(const std::string& s) {
    for (auto k : {TransformKind::identity, TransformKind::blur, TransformKind::noise,
                   TransformKind::brighten, TransformKind::jpeg_like,
                   TransformKind::rotate, TransformKind::hflip, TransformKind::crop})
        if (s == kind_name(k)) return k;
    throw std::invalid_argument("unknown transform kind: " + s);
}

ImageBuffer gaussian_blur(const ImageBuffer& img, int kernel) {
    if (kernel <= 1) return img;
    const double sigma = double(kernel) / 6.0;
    const int r = kernel / 2;
    std::vector<double> w((size_t(kernel)));
    double total = 0.0;
    for (int i = -r; i <= r; ++i) {
        w[size_t(i + r)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        total += w[size_t(i + r)];
    }
    for (auto& v : w) v /= total;

    ImageBuffer tmp(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += w[size_t(i + r)] * img.at_clamped(y, x + i, c);
                tmp.at(y, x, c) = float(acc);
            }
    ImageBuffer out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i)
                    acc += w[size_t(i + r)] * tmp.at_clamped(y + i, x, c);
                out.at(y, x, c) = float(acc);
            }
    out.clamp01();
    return out;
}

// Orthonormal 8-point DCT-II basis.
const std::array<std::array<double, 8>, 8>& dct_basis() {
    static const auto basis = [] {
        std::array<std::array<double, 8>, 8> m{};
        for (int k = 0; k < 8; ++k)
            for (int n = 0; n < 8; ++n)
                m[size_t(k)][size_t(n)] =
                    (k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                    std::cos(M_PI * (2.0 * n + 1.0) * k / 16.0);
        return m;
    }();
    return basis;
}

ImageBuffer jpeg_like(const ImageBuffer& img, double quality) {
    // Quality analog in (0,100]; 100 is lossless here. The quantization step
    // grows linearly as quality drops, which mimics how coarse coefficient
    // quantization erases high-frequency content without a codec dependency.
    const double step = (100.0 - quality) * 0.008;
    if (step <= 0.0) return img;
    const auto& B = dct_basis();
    ImageBuffer out(img.height, img.width);
    double block[8][8], coef[8][8];
    for (int by = 0; by < img.height; by += 8)
        for (int bx = 0; bx < img.width; bx += 8)
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x)
                        block[y][x] = img.at_clamped(by + y, bx + x, c) - 0.5;
                // coef = B * block * B^T
                double tmp[8][8];
                for (int k = 0; k < 8; ++k)
                    for (int x = 0; x < 8; ++x) {
                        double acc = 0.0;
                        for (int n = 0; n < 8; ++n) acc += B[size_t(k)][size_t(n)] * block[n][x];
                        tmp[k][x] = acc;
                    }
                for (int k = 0; k < 8; ++k)
                    for (int l = 0; l < 8; ++l) {
                        double acc = 0.0;
                        for (int n = 0; n < 8; ++n) acc += tmp[k][n] * B[size_t(l)][size_t(n)];
                        coef[k][l] = std::round(acc / step) * step;
                    }
                // block = B^T * coef * B
                for (int y = 0; y < 8; ++y)
                    for (int l = 0; l < 8; ++l) {
                        double acc = 0.0;
                        for (int k = 0; k < 8; ++k) acc += B[size_t(k)][size_t(y)] * coef[k][l];
                        tmp[y][l] = acc;
                    }
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x) {
                        double acc = 0.0;
                        for (int l = 0; l < 8; ++l) acc += tmp[y][l] * B[size_t(l)][size_t(x)];
                        const int oy = by + y, ox = bx + x;
                        if (oy < img.height && ox < img.width)
                            out.at(oy, ox, c) = float(acc + 0.5);
                    }
            }
    out.clamp01();
    return out;
}

ImageBuffer rotate(const ImageBuffer& img, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    ImageBuffer out(img.height, img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            // Inverse map: rotate the output position back by -degrees.
            const double dy = y - cy, dx = x - cx;
            const double sy = cy + (cs * dy - sn * dx);
            const double sx = cx + (sn * dy + cs * dx);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.sample_bilinear(sy, sx, c);
        }
    out.clamp01();
    return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int oh, int ow) {
    ImageBuffer out(oh, ow);
    const double sy = double(img.height) / double(oh);
    const double sx = double(img.width) / double(ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            const double src_y = (y + 0.5) * sy - 0.5;
            const double src_x = (x + 0.5) * sx - 0.5;
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = img.sample_bilinear(src_y, src_x, c);
        }
    return out;
}

ImageBuffer crop_upscale(const ImageBuffer& img, double keep) {
    const int kh = std::max(1, int(std::lround(keep * img.height)));
    const int kw = std::max(1, int(std::lround(keep * img.width)));
    if (kh == img.height && kw == img.width) return img;
    ImageBuffer kept(kh, kw);
    for (int y = 0; y < kh; ++y)
        for (int x = 0; x < kw; ++x)
            for (int c = 0; c < 3; ++c) kept.at(y, x, c) = img.at(y, x, c);
    auto out = resize_bilinear(kept, img.height, img.width);
    out.clamp01();
    return out;
}

} // namespace

TransformCategory TransformSpec::category() const {
    switch (kind) {
        case TransformKind::rotate:
        case TransformKind::hflip:
        case TransformKind::crop:
            return TransformCategory::geometric;
        default:
            return TransformCategory::valuemetric;
    }
}

void TransformSpec::validate() const {
    switch (kind) {
        case TransformKind::identity:
            break;
        case TransformKind::blur: {
            const int k = int(parameter);
            if (double(k) != parameter || k < 1 || k % 2 == 0)
                throw std::invalid_argument("blur kernel must be a positive odd integer");
            break;
        }
        case TransformKind::noise:
            if (parameter < 0.0 || parameter > 1.0)
                throw std::invalid_argument("noise sigma must be in [0,1]");
            break;
        case TransformKind::brighten:
            if (parameter <= 0.0)
                throw std::invalid_argument("brighten factor must be positive");
            break;
        case TransformKind::jpeg_like:
            if (parameter <= 0.0 || parameter > 100.0)
                throw std::invalid_argument("jpeg_like quality must be in (0,100]");
            break;
        case TransformKind::rotate:
            if (parameter < -180.0 || parameter > 180.0)
                throw std::invalid_argument("rotation must be in [-180,180] degrees");
            break;
        case TransformKind::hflip:
            if (parameter != 0.0 && parameter != 1.0)
                throw std::invalid_argument("hflip parameter must be 0 or 1");
            break;
        case TransformKind::crop:
            if (parameter <= 0.0 || parameter > 1.0)
                throw std::invalid_argument("crop fraction must be in (0,1]");
            break;
    }
}

std::string TransformSpec::to_string() const {
    std::ostringstream out;
    out << kind_name(kind) << ':' << parameter;
    if (kind == TransformKind::noise && seed != 0) out << ':' << seed;
    return out.str();
}

TransformSpec TransformSpec::parse(const std::string& text) {
    TransformSpec spec;
    std::istringstream in(text);
    std::string part;
    if (!std::getline(in, part, ':'))
        throw std::invalid_argument("empty transform spec");
    spec.kind = kind_from_name(part);
    if (std::getline(in, part, ':')) spec.parameter = std::stod(part);
    if (std::getline(in, part, ':')) spec.seed = std::stoull(part);
    spec.validate();
    return spec;
}

ImageBuffer apply_transform(const ImageBuffer& img, const TransformSpec& t) {
    t.validate();
    switch (t.kind) {
        case TransformKind::identity:
            return img;
        case TransformKind::blur:
            return gaussian_blur(img, int(t.parameter));
        case TransformKind::noise: {
            if (t.parameter == 0.0) return img;
            ImageBuffer out = img;
            Rng rng(mix64(t.seed, 0x6e6f697365ULL));
            for (auto& v : out.pixels) v += float(t.parameter * rng.normal());
            out.clamp01();
            return out;
        }
        case TransformKind::brighten: {
            if (t.parameter == 1.0) return img;
            ImageBuffer out = img;
            for (auto& v : out.pixels) v *= float(t.parameter);
            out.clamp01();
            return out;
        }
        case TransformKind::jpeg_like:
            return jpeg_like(img, t.parameter);
        case TransformKind::rotate:
            if (t.parameter == 0.0) return img;
            return rotate(img, t.parameter);
        case TransformKind::hflip: {
            if (t.parameter == 0.0) return img;
            ImageBuffer out(img.height, img.width);
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    for (int c = 0; c < 3; ++c)
                        out.at(y, x, c) = img.at(y, img.width - 1 - x, c);
            return out;
        }
        case TransformKind::crop:
            if (t.parameter == 1.0) return img;
            return crop_upscale(img, t.parameter);
    }
    throw std::logic_error("unreachable");
}

std::vector<GridEntry> transform_grid() {
    std::vector<GridEntry> grid;
    auto add = [&grid](TransformKind k, double p, bool summary) {
        TransformSpec s;
        s.kind = k;
        s.parameter = p;
        grid.push_back({s, kind_name(k), summary});
    };
    for (double k : {1, 3, 5, 7, 9}) add(TransformKind::blur, k, k == 9);
    for (double s : {0.0, 0.025, 0.05, 0.075, 0.1})
        add(TransformKind::noise, s, s == 0.1);
    for (double q : {100, 85, 65, 45, 25}) add(TransformKind::jpeg_like, q, q == 25);
    for (double b : {1.0, 1.25, 1.5, 1.75, 2.0}) add(TransformKind::brighten, b, b == 2.0);
    for (double r : {-10, -5, 0, 5, 10}) add(TransformKind::rotate, r, r == 10);
    for (double f : {0, 1}) add(TransformKind::hflip, f, f == 1);
    for (double c : {1.0, 0.95, 0.9, 0.85, 0.8, 0.75})
        add(TransformKind::crop, c, c == 0.75);
    return grid;
}

std::vector<GridEntry> summary_set(TransformCategory cat) {
    std::vector<GridEntry> out;
    for (const auto& e : transform_grid())
        if (e.is_summary && e.spec.category() == cat) out.push_back(e);
    return out;
}

} // namespace tokmark
