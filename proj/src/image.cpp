#include "tokmark/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace tokmark {

float ImageBuffer::at_clamped(int y, int x, int c) const {
    y = std::clamp(y, 0, height - 1);
    x = std::clamp(x, 0, width - 1);
    return at(y, x, c);
}

float ImageBuffer::sample_bilinear(double y, double x, int c) const {
    const int y0 = int(std::floor(y));
    const int x0 = int(std::floor(x));
    const double fy = y - y0;
    const double fx = x - x0;
    const double v00 = at_clamped(y0, x0, c);
    const double v01 = at_clamped(y0, x0 + 1, c);
    const double v10 = at_clamped(y0 + 1, x0, c);
    const double v11 = at_clamped(y0 + 1, x0 + 1, c);
    return float((v00 * (1 - fx) + v01 * fx) * (1 - fy) +
                 (v10 * (1 - fx) + v11 * fx) * fy);
}

void ImageBuffer::clamp01() {
    for (auto& v : pixels) v = std::clamp(v, 0.0f, 1.0f);
}

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string next_header_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(char(ch));
    }
    if (tok.empty()) throw std::runtime_error("ppm: truncated header");
    return tok;
}

} // namespace

ImageBuffer load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ppm: cannot open " + path);
    if (next_header_token(in) != "P6")
        throw std::runtime_error("ppm: not a P6 file: " + path);
    const int w = std::stoi(next_header_token(in));
    const int h = std::stoi(next_header_token(in));
    const int maxval = std::stoi(next_header_token(in));
    if (w <= 0 || h <= 0) throw std::runtime_error("ppm: bad dimensions in " + path);
    if (maxval != 255) throw std::runtime_error("ppm: only maxval 255 supported");

    ImageBuffer img(h, w);
    std::vector<unsigned char> raw(size_t(h) * size_t(w) * 3);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (size_t(in.gcount()) != raw.size())
        throw std::runtime_error("ppm: truncated payload in " + path);
    for (size_t i = 0; i < raw.size(); ++i)
        img.pixels[i] = float(raw[i]) / 255.0f;
    return img;
}

void save_ppm(const ImageBuffer& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ppm: cannot write " + path);
    char header[64];
    std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
    out << header;
    std::vector<unsigned char> raw(img.pixels.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        const float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
        raw[i] = (unsigned char)std::lround(v * 255.0f);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) throw std::runtime_error("ppm: write failed for " + path);
}

} // namespace tokmark
