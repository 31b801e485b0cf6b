#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "volume.hpp"

namespace sparseseg {

/// Per-volume z-score. Constant volumes map to zeros.
inline Volume normalize(const Volume& volume) {
    const auto& v = volume.voxels();
    double mean = 0.0;
    for (float x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (float x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    const double sd = std::sqrt(var);

    std::vector<float> out(v.size(), 0.0F);
    if (sd > 1e-12 * std::max(1.0, std::abs(mean))) {
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>((v[i] - mean) / sd);
    }
    return Volume(volume.shape(), std::move(out), volume.spacing(), volume.case_id());
}

enum class Transform2D { identity, rot90, rot180, rot270, flip_h, flip_v };

inline constexpr std::array<Transform2D, 6> kAllTransforms = {
    Transform2D::identity, Transform2D::rot90,  Transform2D::rot180,
    Transform2D::rot270,   Transform2D::flip_h, Transform2D::flip_v};

template <class Rng>
Transform2D draw_transform(Rng& rng) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(kAllTransforms.size()) - 1);
    return kAllTransforms[static_cast<std::size_t>(pick(rng))];
}

/// Output shape (rows, cols) of `t` applied to an h x w grid.
inline std::pair<int, int> transformed_shape(Transform2D t, int h, int w) {
    if (t == Transform2D::rot90 || t == Transform2D::rot270) return {w, h};
    return {h, w};
}

/// Applies a right-angle rotation (counter-clockwise) or flip to a row-major grid.
template <class T>
std::vector<T> apply_transform(Transform2D t, std::span<const T> in, int h, int w) {
    const auto [oh, ow] = transformed_shape(t, h, w);
    std::vector<T> out(in.size());
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            int sy = y;
            int sx = x;
            switch (t) {
                case Transform2D::identity: break;
                case Transform2D::rot90: sy = x; sx = w - 1 - y; break;
                case Transform2D::rot180: sy = h - 1 - y; sx = w - 1 - x; break;
                case Transform2D::rot270: sy = h - 1 - x; sx = y; break;
                case Transform2D::flip_h: sx = w - 1 - x; break;
                case Transform2D::flip_v: sy = h - 1 - y; break;
            }
            out[static_cast<std::size_t>(y) * ow + x] = in[static_cast<std::size_t>(sy) * w + sx];
        }
    }
    return out;
}

inline Image2D apply_transform(Transform2D t, const Image2D& img) {
    const auto [oh, ow] = transformed_shape(t, img.h, img.w);
    Image2D out;
    out.h = oh;
    out.w = ow;
    out.pixels = apply_transform<float>(t, img.pixels, img.h, img.w);
    return out;
}

inline SliceMask apply_transform(Transform2D t, const SliceMask& m) {
    const auto [oh, ow] = transformed_shape(t, m.h, m.w);
    SliceMask out;
    out.h = oh;
    out.w = ow;
    out.slice_index = m.slice_index;
    out.pixels = apply_transform<std::uint8_t>(t, m.pixels, m.h, m.w);
    return out;
}

/// Draws one transform from the seed and applies it to image and label alike.
inline std::pair<Image2D, SliceMask> augment(const Image2D& slice, const SliceMask& label, std::uint64_t rng_seed) {
    if (slice.h != label.h || slice.w != label.w) throw std::invalid_argument("augment: shape mismatch");
    std::mt19937_64 rng(rng_seed);
    const Transform2D t = draw_transform(rng);
    return {apply_transform(t, slice), apply_transform(t, label)};
}

}  // namespace sparseseg
