#pragma once

// Brute-force reference implementations used as test oracles. Deliberately
// naive: direct enumeration, no shared code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include <sparseseg/volume.hpp>

namespace oracle {

using sparseseg::DenseLabelVolume;
using sparseseg::Shape3;
using Voxel = std::tuple<int, int, int>;

inline DenseLabelVolume random_mask(Shape3 s, std::mt19937_64& rng, double p = 0.3) {
    std::bernoulli_distribution coin(p);
    DenseLabelVolume m(s);
    for (auto& v : m.masks) v = coin(rng) ? 1 : 0;
    return m;
}

/// Random blob-like mask: union of a few random boxes.
inline DenseLabelVolume random_boxes(Shape3 s, std::mt19937_64& rng, int boxes = 3) {
    DenseLabelVolume m(s);
    std::uniform_int_distribution<int> zn(0, s.n - 1), zh(0, s.h - 1), zw(0, s.w - 1);
    for (int b = 0; b < boxes; ++b) {
        int n0 = zn(rng), n1 = zn(rng), y0 = zh(rng), y1 = zh(rng), x0 = zw(rng), x1 = zw(rng);
        if (n0 > n1) std::swap(n0, n1);
        if (y0 > y1) std::swap(y0, y1);
        if (x0 > x1) std::swap(x0, x1);
        for (int n = n0; n <= n1; ++n)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) m.at(n, y, x) = 1;
    }
    return m;
}

struct Counts {
    long tp = 0, fp = 0, fn = 0;
};

inline Counts count(const DenseLabelVolume& p, const DenseLabelVolume& g) {
    Counts c;
    for (int n = 0; n < p.shape.n; ++n)
        for (int y = 0; y < p.shape.h; ++y)
            for (int x = 0; x < p.shape.w; ++x) {
                const int a = p.at(n, y, x), b = g.at(n, y, x);
                c.tp += a && b;
                c.fp += a && !b;
                c.fn += !a && b;
            }
    return c;
}

inline double dsc(const DenseLabelVolume& p, const DenseLabelVolume& g) {
    const Counts c = count(p, g);
    if (2 * c.tp + c.fp + c.fn == 0) return 1.0;
    return 2.0 * c.tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

inline double ravd(const DenseLabelVolume& p, const DenseLabelVolume& g) {
    const Counts c = count(p, g);
    return std::abs(static_cast<double>(c.fp - c.fn)) / static_cast<double>(c.tp + c.fn);
}

inline bool fg(const DenseLabelVolume& m, int n, int y, int x) {
    if (n < 0 || y < 0 || x < 0 || n >= m.shape.n || y >= m.shape.h || x >= m.shape.w) return false;
    return m.at(n, y, x) != 0;
}

inline std::set<Voxel> surface(const DenseLabelVolume& m) {
    std::set<Voxel> out;
    const int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    for (int n = 0; n < m.shape.n; ++n)
        for (int y = 0; y < m.shape.h; ++y)
            for (int x = 0; x < m.shape.w; ++x) {
                if (!fg(m, n, y, x)) continue;
                for (const auto& o : d)
                    if (!fg(m, n + o[0], y + o[1], x + o[2])) {
                        out.insert({n, y, x});
                        break;
                    }
            }
    return out;
}

inline std::set<Voxel> band(const DenseLabelVolume& m, int r) {
    const auto s = surface(m);
    std::set<Voxel> out;
    for (int n = 0; n < m.shape.n; ++n)
        for (int y = 0; y < m.shape.h; ++y)
            for (int x = 0; x < m.shape.w; ++x)
                for (const auto& [a, b, c] : s)
                    if (std::abs(a - n) <= r && std::abs(b - y) <= r && std::abs(c - x) <= r) {
                        out.insert({n, y, x});
                        break;
                    }
    return out;
}

inline double b_iou(const DenseLabelVolume& p, const DenseLabelVolume& g, int r) {
    const auto bp = band(p, r), bg = band(g, r);
    std::set<Voxel> inter, uni = bp;
    for (const auto& v : bg) {
        if (bp.count(v)) inter.insert(v);
        uni.insert(v);
    }
    return uni.empty() ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

inline double assd(const DenseLabelVolume& p, const DenseLabelVolume& g, const sparseseg::Spacing& sp) {
    const auto a = surface(p), b = surface(g);
    auto nearest = [&](const Voxel& v, const std::set<Voxel>& other) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& o : other) {
            const double dz = (std::get<0>(v) - std::get<0>(o)) * sp[0];
            const double dy = (std::get<1>(v) - std::get<1>(o)) * sp[1];
            const double dx = (std::get<2>(v) - std::get<2>(o)) * sp[2];
            best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
        }
        return best;
    };
    double sum = 0.0;
    for (const auto& v : a) sum += nearest(v, b);
    for (const auto& v : b) sum += nearest(v, a);
    return sum / static_cast<double>(a.size() + b.size());
}

/// Integer shift of a 2D mask: out(y, x) = in(y + dy, x + dx), zero outside.
inline std::vector<std::uint8_t> shift(const std::vector<std::uint8_t>& in, int h, int w, int dy, int dx) {
    std::vector<std::uint8_t> out(in.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int sy = y + dy, sx = x + dx;
            if (sy >= 0 && sy < h && sx >= 0 && sx < w) out[y * w + x] = in[sy * w + sx];
        }
    return out;
}

}  // namespace oracle
