#pragma once

// Volume overlap and surface metrics on binary 3D masks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "volume.hpp"

namespace sparseseg {

class MetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
};

namespace detail {

inline void require_same_shape(const DenseLabelVolume& a, const DenseLabelVolume& b, const char* what) {
    if (!(a.shape == b.shape) || a.masks.size() != b.masks.size())
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

/// Max filter of radius r along one axis (stride/len describe the axis).
inline void dilate_axis(std::vector<std::uint8_t>& m, const Shape3& s, int axis, int r) {
    const int len = axis == 0 ? s.n : axis == 1 ? s.h : s.w;
    const std::size_t stride = axis == 0 ? s.slice_pixels() : axis == 1 ? static_cast<std::size_t>(s.w) : 1;
    std::vector<std::uint8_t> line(len), out(len);
    for (std::size_t base = 0; base < m.size(); ++base) {
        // Visit each line once, from its first element.
        const std::size_t pos = (base / stride) % static_cast<std::size_t>(len);
        if (pos != 0) continue;
        int last = -1 - r;  // most recent foreground index seen
        for (int i = 0; i < len; ++i) line[i] = m[base + i * stride];
        for (int i = 0; i < len; ++i) out[i] = 0;
        for (int i = 0; i < len; ++i) {
            if (line[i]) last = i;
            if (i - last <= r) out[i] = 1;
        }
        last = len + r;
        for (int i = len - 1; i >= 0; --i) {
            if (line[i]) last = i;
            if (last - i <= r) out[i] = 1;
        }
        for (int i = 0; i < len; ++i) m[base + i * stride] = out[i];
    }
}

}  // namespace detail

inline Confusion confusion(const DenseLabelVolume& pred, const DenseLabelVolume& gt) {
    detail::require_same_shape(pred, gt, "confusion");
    Confusion c;
    for (std::size_t i = 0; i < pred.masks.size(); ++i) {
        const bool p = pred.masks[i] != 0, g = gt.masks[i] != 0;
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

/// Foreground voxels with at least one background 6-neighbour (outside the volume
/// counts as background), dilated by a Chebyshev band of radius band_px.
inline DenseLabelVolume boundary_extract(const DenseLabelVolume& mask, int band_px) {
    if (band_px < 0) throw std::invalid_argument("boundary_extract: negative band");
    const Shape3& s = mask.shape;
    DenseLabelVolume out(s, mask.source);
    for (int n = 0; n < s.n; ++n) {
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                if (!mask.at(n, y, x)) continue;
                const bool interior = n > 0 && n + 1 < s.n && y > 0 && y + 1 < s.h && x > 0 && x + 1 < s.w &&
                                      mask.at(n - 1, y, x) && mask.at(n + 1, y, x) && mask.at(n, y - 1, x) &&
                                      mask.at(n, y + 1, x) && mask.at(n, y, x - 1) && mask.at(n, y, x + 1);
                if (!interior) out.at(n, y, x) = 1;
            }
        }
    }
    if (band_px > 0)
        for (int axis = 0; axis < 3; ++axis) detail::dilate_axis(out.masks, s, axis, band_px);
    return out;
}

/// max(1, round(0.02 * voxel-space diagonal)).
inline int default_band_px(const Shape3& s) {
    const double diag = std::sqrt(static_cast<double>(s.n) * s.n + static_cast<double>(s.h) * s.h +
                                  static_cast<double>(s.w) * s.w);
    return std::max(1, static_cast<int>(std::lround(0.02 * diag)));
}

inline double b_iou(const DenseLabelVolume& pred, const DenseLabelVolume& gt, int band_px) {
    detail::require_same_shape(pred, gt, "b_iou");
    const auto bp = boundary_extract(pred, band_px);
    const auto bg = boundary_extract(gt, band_px);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < bp.masks.size(); ++i) {
        inter += bp.masks[i] & bg.masks[i];
        uni += bp.masks[i] | bg.masks[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline double dsc(const DenseLabelVolume& pred, const DenseLabelVolume& gt) {
    const Confusion c = confusion(pred, gt);
    const std::size_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(den);
}

inline double ravd(const DenseLabelVolume& pred, const DenseLabelVolume& gt) {
    const Confusion c = confusion(pred, gt);
    if (c.tp + c.fn == 0) throw MetricError("ravd: empty ground truth");
    return std::abs(static_cast<double>(c.fp) - static_cast<double>(c.fn)) / static_cast<double>(c.tp + c.fn);
}

namespace detail {

/// Exact 1D squared distance transform (lower envelope of parabolas) on a grid
/// with spacing h. f holds squared distances; inf marks "no site".
inline void edt_1d(std::vector<double>& f, double h, std::vector<int>& v, std::vector<double>& z,
                   std::vector<double>& d) {
    const int n = static_cast<int>(f.size());
    const double inf = std::numeric_limits<double>::infinity();
    auto meet = [&](int q, int p) {
        const double a = q * h, b = p * h;
        return ((f[q] + a * a) - (f[p] + b * b)) / (2.0 * (a - b));
    };
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        double s = -inf;
        while (k >= 0) {
            s = meet(q, v[k]);
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : s;
        z[k + 1] = inf;
    }
    if (k < 0) return;  // no sites on this line
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q * h) ++j;
        const double dq = (q - v[j]) * h;
        d[q] = dq * dq + f[v[j]];
    }
    for (int q = 0; q < n; ++q) f[q] = d[q];
}

}  // namespace detail

/// Squared Euclidean distance (mm^2) from every voxel to the nearest site voxel.
inline std::vector<double> squared_distance_transform(const DenseLabelVolume& sites, const Spacing& spacing_mm) {
    const Shape3& s = sites.shape;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(s.voxels());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = sites.masks[i] ? 0.0 : inf;
    const int lens[3] = {s.n, s.h, s.w};
    const std::size_t strides[3] = {s.slice_pixels(), static_cast<std::size_t>(s.w), 1};
    for (int axis = 2; axis >= 0; --axis) {
        const int len = lens[axis];
        const std::size_t stride = strides[axis];
        std::vector<double> f(len), d(len), z(len + 1);
        std::vector<int> v(len);
        for (std::size_t base = 0; base < dist.size(); ++base) {
            if ((base / stride) % static_cast<std::size_t>(len) != 0) continue;
            for (int i = 0; i < len; ++i) f[i] = dist[base + i * stride];
            detail::edt_1d(f, spacing_mm[axis], v, z, d);
            for (int i = 0; i < len; ++i) dist[base + i * stride] = f[i];
        }
    }
    return dist;
}

/// Average symmetric surface distance in mm between the raw (band 0) surfaces.
inline double assd(const DenseLabelVolume& pred, const DenseLabelVolume& gt, const Spacing& spacing_mm) {
    detail::require_same_shape(pred, gt, "assd");
    const auto sp = boundary_extract(pred, 0);
    const auto sg = boundary_extract(gt, 0);
    if (sp.foreground() == 0 || sg.foreground() == 0) throw MetricError("assd: empty mask");
    const auto dp = squared_distance_transform(sp, spacing_mm);
    const auto dg = squared_distance_transform(sg, spacing_mm);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < sp.masks.size(); ++i) {
        if (sp.masks[i]) {
            sum += std::sqrt(dg[i]);
            ++count;
        }
        if (sg.masks[i]) {
            sum += std::sqrt(dp[i]);
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

}  // namespace sparseseg
