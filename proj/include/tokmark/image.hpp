#pragma once

#include <string>
#include <vector>

namespace tokmark {

/// H x W x 3 image with float channels in [0,1], row-major, channel fastest.
struct ImageBuffer {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;

    ImageBuffer() = default;
    ImageBuffer(int h, int w, float fill = 0.0f)
        : height(h), width(w), pixels(size_t(h) * size_t(w) * 3, fill) {}

    float& at(int y, int x, int c) {
        return pixels[(size_t(y) * size_t(width) + size_t(x)) * 3 + size_t(c)];
    }
    float at(int y, int x, int c) const {
        return pixels[(size_t(y) * size_t(width) + size_t(x)) * 3 + size_t(c)];
    }

    /// at() with coordinates clamped to the frame (edge replication).
    float at_clamped(int y, int x, int c) const;

    /// Bilinear sample at a real-valued position, edge-replicated.
    float sample_bilinear(double y, double x, int c) const;

    void clamp01();

    bool same_shape(const ImageBuffer& o) const {
        return height == o.height && width == o.width;
    }
};

/// PPM P6, 8-bit. Loading maps v -> v/255; saving maps v -> round(clamp(v)*255),
/// so save-load-save is byte-stable.
ImageBuffer load_ppm(const std::string& path);
void save_ppm(const ImageBuffer& img, const std::string& path);

} // namespace tokmark
