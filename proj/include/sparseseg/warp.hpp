#pragma once

// Backward warping through a dense 2D displacement field:
//   out(y, x) = in(y + dy(y, x), x + dx(y, x))
// bilinear interpolation, zero outside the image.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "volume.hpp"

namespace sparseseg {

/// Displacement in pixels: channel 0 = dy, channel 1 = dx, each H x W row-major.
struct DisplacementField {
    int h = 0;
    int w = 0;
    std::vector<float> field;  // 2 * h * w

    DisplacementField() = default;
    DisplacementField(int rows, int cols, float dy = 0.0F, float dx = 0.0F)
        : h(rows), w(cols), field(2 * static_cast<std::size_t>(rows) * cols) {
        std::fill(field.begin(), field.begin() + static_cast<std::ptrdiff_t>(plane()), dy);
        std::fill(field.begin() + static_cast<std::ptrdiff_t>(plane()), field.end(), dx);
    }

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    float dy(int y, int x) const { return field[static_cast<std::size_t>(y) * w + x]; }
    float dx(int y, int x) const { return field[plane() + static_cast<std::size_t>(y) * w + x]; }
    float& dy(int y, int x) { return field[static_cast<std::size_t>(y) * w + x]; }
    float& dx(int y, int x) { return field[plane() + static_cast<std::size_t>(y) * w + x]; }

    void validate() const {
        if (field.size() != 2 * plane()) throw std::invalid_argument("DisplacementField: size mismatch");
        for (float v : field)
            if (!std::isfinite(v)) throw std::invalid_argument("DisplacementField: non-finite displacement");
    }
};

enum class WarpMode { bilinear, label };

/// Bilinear sample with zero padding outside [0,h) x [0,w).
template <class T>
double sample_bilinear(std::span<const T> img, int h, int w, double sy, double sx) {
    const double fy = std::floor(sy);
    const double fx = std::floor(sx);
    const int y0 = static_cast<int>(fy);
    const int x0 = static_cast<int>(fx);
    const double a = sy - fy;
    const double b = sx - fx;
    auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return static_cast<double>(img[static_cast<std::size_t>(y) * w + x]);
    };
    // Exact-integer positions reproduce the input bit for bit.
    if (a == 0.0 && b == 0.0) return px(y0, x0);
    return (1 - a) * (1 - b) * px(y0, x0) + (1 - a) * b * px(y0, x0 + 1) + a * (1 - b) * px(y0 + 1, x0) +
           a * b * px(y0 + 1, x0 + 1);
}

inline Image2D warp(const Image2D& image, const DisplacementField& f) {
    if (image.h != f.h || image.w != f.w) throw std::invalid_argument("warp: shape mismatch");
    Image2D out(image.h, image.w);
    const std::span<const float> src(image.pixels);
    for (int y = 0; y < image.h; ++y)
        for (int x = 0; x < image.w; ++x)
            out.at(y, x) = static_cast<float>(sample_bilinear(src, image.h, image.w, y + f.dy(y, x), x + f.dx(y, x)));
    return out;
}

/// Label warp: bilinear on {0,1} then threshold at 0.5.
inline SliceMask warp(const SliceMask& mask, const DisplacementField& f) {
    if (mask.h != f.h || mask.w != f.w) throw std::invalid_argument("warp: shape mismatch");
    SliceMask out(mask.h, mask.w, mask.slice_index);
    const std::span<const std::uint8_t> src(mask.pixels);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            out.at(y, x) = sample_bilinear(src, mask.h, mask.w, y + f.dy(y, x), x + f.dx(y, x)) >= 0.5 ? 1 : 0;
    return out;
}

/// Image-valued warp in either mode (label mode thresholds at 0.5).
inline Image2D warp(const Image2D& image, const DisplacementField& f, WarpMode mode) {
    Image2D out = warp(image, f);
    if (mode == WarpMode::label)
        for (auto& v : out.pixels) v = v >= 0.5F ? 1.0F : 0.0F;
    return out;
}

/// Warps one plane and, when requested, writes d(out)/d(dy) and d(out)/d(dx).
template <class T>
void warp_with_grad(std::span<const T> img, std::span<const T> dy, std::span<const T> dx, int h, int w,
                    std::span<T> out, std::span<T> d_dy, std::span<T> d_dx) {
    auto px = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return static_cast<double>(img[static_cast<std::size_t>(y) * w + x]);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * w + x;
            const double sy = y + static_cast<double>(dy[i]);
            const double sx = x + static_cast<double>(dx[i]);
            const double fy = std::floor(sy);
            const double fx = std::floor(sx);
            const int y0 = static_cast<int>(fy);
            const int x0 = static_cast<int>(fx);
            const double a = sy - fy;
            const double b = sx - fx;
            const double i00 = px(y0, x0), i01 = px(y0, x0 + 1), i10 = px(y0 + 1, x0), i11 = px(y0 + 1, x0 + 1);
            out[i] = static_cast<T>((1 - a) * (1 - b) * i00 + (1 - a) * b * i01 + a * (1 - b) * i10 + a * b * i11);
            if (!d_dy.empty()) {
                d_dy[i] = static_cast<T>((1 - b) * (i10 - i00) + b * (i11 - i01));
                d_dx[i] = static_cast<T>((1 - a) * (i01 - i00) + a * (i11 - i10));
            }
        }
    }
}

}  // namespace sparseseg
