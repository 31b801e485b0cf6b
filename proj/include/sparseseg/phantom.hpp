#pragma once

// Synthetic volumetric phantoms: one bright ellipse per slice whose centre and
// radii drift smoothly along z, under noise and a multiplicative bias field.
// The label is the analytic ellipse mask.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "volume.hpp"

namespace sparseseg {

struct PhantomConfig {
    int count = 20;
    Shape3 shape{17, 64, 64};
    double noise_sigma = 0.15;
    double max_drift_px = 2.0;
    std::array<double, 2> radius_range_px{10.0, 18.0};
    std::uint64_t seed = 0;

    // Appearance beyond the required fields.
    double contrast_falloff = 0.6;   // object contrast at the outermost slice is (1 - falloff)
    double bias_strength = 0.25;     // amplitude of the linear multiplicative bias field
    double edge_sharpness = 6.0;     // logistic slope of the object profile at the boundary
    double radius_shrink = 0.45;     // max relative radius loss at the outermost slice
    double object_texture = 0.25;    // relative amplitude of the pattern carried inside the object
    std::optional<double> translation_px_per_slice;  // rigid x-translation instead of smooth drift
    Spacing spacing_mm{3.0, 0.625, 0.625};
};

inline void to_json(nlohmann::json& j, const PhantomConfig& c) {
    j = nlohmann::json{{"count", c.count},
                       {"shape", {c.shape.n, c.shape.h, c.shape.w}},
                       {"noise_sigma", c.noise_sigma},
                       {"max_drift_px", c.max_drift_px},
                       {"radius_range_px", c.radius_range_px},
                       {"seed", c.seed},
                       {"contrast_falloff", c.contrast_falloff},
                       {"bias_strength", c.bias_strength},
                       {"edge_sharpness", c.edge_sharpness},
                       {"radius_shrink", c.radius_shrink},
                       {"object_texture", c.object_texture},
                       {"spacing_mm", c.spacing_mm}};
    if (c.translation_px_per_slice) j["translation_px_per_slice"] = *c.translation_px_per_slice;
}

inline void from_json(const nlohmann::json& j, PhantomConfig& c) {
    c.count = j.value("count", c.count);
    if (j.contains("shape")) c.shape = {j["shape"][0].get<int>(), j["shape"][1].get<int>(), j["shape"][2].get<int>()};
    c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
    c.max_drift_px = j.value("max_drift_px", c.max_drift_px);
    if (j.contains("radius_range_px")) c.radius_range_px = j["radius_range_px"].get<std::array<double, 2>>();
    c.seed = j.value("seed", c.seed);
    c.contrast_falloff = j.value("contrast_falloff", c.contrast_falloff);
    c.bias_strength = j.value("bias_strength", c.bias_strength);
    c.edge_sharpness = j.value("edge_sharpness", c.edge_sharpness);
    c.radius_shrink = j.value("radius_shrink", c.radius_shrink);
    c.object_texture = j.value("object_texture", c.object_texture);
    if (j.contains("spacing_mm")) c.spacing_mm = j["spacing_mm"].get<Spacing>();
    if (j.contains("translation_px_per_slice") && !j["translation_px_per_slice"].is_null())
        c.translation_px_per_slice = j["translation_px_per_slice"].get<double>();
}

struct PhantomCase {
    Volume volume;
    DenseLabelVolume labels;
};

/// Per-slice ellipse geometry of one phantom.
struct EllipseTrack {
    std::vector<double> cy, cx, ry, rx;
};

namespace detail {

inline bool track_inside(const EllipseTrack& t, const Shape3& s, double margin) {
    for (std::size_t z = 0; z < t.cy.size(); ++z) {
        if (t.cy[z] - t.ry[z] < margin || t.cy[z] + t.ry[z] > s.h - 1 - margin) return false;
        if (t.cx[z] - t.rx[z] < margin || t.cx[z] + t.rx[z] > s.w - 1 - margin) return false;
    }
    return true;
}

}  // namespace detail

/// Draws the ellipse track. Per-slice change of centre and radii never exceeds
/// max_drift_px; if the object would leave the field of view the drift amplitude
/// is clamped until it fits.
template <class Rng>
EllipseTrack draw_track(const PhantomConfig& cfg, Rng& rng) {
    const Shape3& s = cfg.shape;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double zc = central_slice_index(s.n);
    const double half = std::max(1.0, s.n / 2.0);

    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    double r_hi = std::min(cfg.radius_range_px[1], 0.5 * std::min(s.h, s.w) - 3.0);
    double r_lo = std::min(cfg.radius_range_px[0], r_hi);
    const double ry0 = uniform(r_lo, r_hi);
    const double rx0 = uniform(r_lo, r_hi);
    const double cy0 = (s.h - 1) / 2.0 + uniform(-s.h / 10.0, s.h / 10.0);
    const double cx0 = (s.w - 1) / 2.0 + uniform(-s.w / 10.0, s.w / 10.0);

    const double drift = std::max(0.0, cfg.max_drift_px);
    const double omega_y = uniform(0.15, 0.35);
    const double omega_x = uniform(0.15, 0.35);
    const double phase_y = uniform(0.0, 2.0 * std::numbers::pi);
    const double phase_x = uniform(0.0, 2.0 * std::numbers::pi);
    double amp_y = drift / omega_y * uniform(0.5, 1.0);
    double amp_x = drift / omega_x * uniform(0.5, 1.0);
    // |d/dz r0 (1 - k u^2)| <= 2 r0 k / half at the ends.
    auto shrink_for = [&](double r0) {
        if (drift == 0.0) return 0.0;
        return std::min(cfg.radius_shrink, drift * half / (2.0 * r0)) * uniform(0.6, 1.0);
    };
    const double ky = shrink_for(ry0);
    const double kx = shrink_for(rx0);
    std::optional<double> shift = cfg.translation_px_per_slice;
    if (shift) {
        if (std::abs(*shift) > drift) throw std::invalid_argument("phantom: translation exceeds max_drift_px");
    }

    EllipseTrack t;
    for (int attempt = 0; attempt < 64; ++attempt) {
        t = {};
        for (int z = 0; z < s.n; ++z) {
            const double u = (z - zc) / half;
            if (shift) {
                t.cy.push_back(cy0);
                t.cx.push_back(cx0 + *shift * (z - zc));
                t.ry.push_back(ry0);
                t.rx.push_back(rx0);
            } else {
                // sin(phase) subtracted so the central slice sits at (cy0, cx0).
                t.cy.push_back(cy0 + amp_y * (std::sin(omega_y * (z - zc) + phase_y) - std::sin(phase_y)));
                t.cx.push_back(cx0 + amp_x * (std::sin(omega_x * (z - zc) + phase_x) - std::sin(phase_x)));
                t.ry.push_back(ry0 * (1.0 - ky * u * u));
                t.rx.push_back(rx0 * (1.0 - kx * u * u));
            }
        }
        if (detail::track_inside(t, s, 1.0)) return t;
        amp_y *= 0.7;
        amp_x *= 0.7;
        if (shift) *shift *= 0.7;
    }
    throw std::runtime_error("phantom: object does not fit in the field of view");
}

/// Noiseless object profile in [0,1]; >= 0.5 exactly on the analytic ellipse.
inline float object_profile(double y, double x, const EllipseTrack& t, int z, double sharpness) {
    const double dy = (y - t.cy[z]) / t.ry[z];
    const double dx = (x - t.cx[z]) / t.rx[z];
    const double rho = std::sqrt(dy * dy + dx * dx);
    return static_cast<float>(1.0 / (1.0 + std::exp(-sharpness * (1.0 - rho) * std::max(t.ry[z], t.rx[z]) / 4.0)));
}

inline PhantomCase generate_phantom(const PhantomConfig& cfg, int case_index) {
    const Shape3& s = cfg.shape;
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(case_index), 0x5eedU};
    std::mt19937_64 rng(seq);
    const EllipseTrack track = draw_track(cfg, rng);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const double by = (unit(rng) * 2.0 - 1.0) * cfg.bias_strength;
    const double bx = (unit(rng) * 2.0 - 1.0) * cfg.bias_strength;
    // Translation phantoms keep intensities fixed along z so slices differ only by the shift.
    const bool pure_shift = cfg.translation_px_per_slice.has_value();
    const double bz = pure_shift ? 0.0 * unit(rng) : (unit(rng) * 2.0 - 1.0) * cfg.bias_strength;
    const double background = 0.2 + 0.1 * unit(rng);
    const double tex_freq = 0.15 + 0.1 * unit(rng);
    const double tex_phase = unit(rng) * 2.0 * std::numbers::pi;
    const double obj_freq = 0.35 + 0.15 * unit(rng);
    const double obj_phase = unit(rng) * 2.0 * std::numbers::pi;

    const int zc_i = central_slice_index(s.n);
    const double zc = zc_i;
    const double half = std::max(1.0, s.n / 2.0);

    char name[32];
    std::snprintf(name, sizeof(name), "case_%03d", case_index);
    Volume vol(s, cfg.spacing_mm, name);
    DenseLabelVolume lab(s, LabelSource::manual);
    for (int z = 0; z < s.n; ++z) {
        const double u = (z - zc) / half;
        const double contrast = pure_shift ? 1.0 : 1.0 - cfg.contrast_falloff * u * u;
        for (int y = 0; y < s.h; ++y) {
            for (int x = 0; x < s.w; ++x) {
                const float obj = object_profile(y, x, track, z, cfg.edge_sharpness);
                lab.at(z, y, x) = obj >= 0.5F ? 1 : 0;
                const double bias = 1.0 + by * (y / double(s.h) - 0.5) + bx * (x / double(s.w) - 0.5) +
                                    bz * (z / double(s.n) - 0.5);
                const double tx = pure_shift ? x - (track.cx[z] - track.cx[zc_i]) : x;
                const double texture = 0.05 * std::sin(tex_freq * (tx + 0.7 * y) + tex_phase);
                // Interior pattern in object coordinates, so it moves with the object.
                const double oy = y - track.cy[z], ox = x - track.cx[z];
                const double inner = 1.0 + cfg.object_texture * std::sin(obj_freq * (ox - 0.6 * oy) + obj_phase) *
                                                std::cos(obj_freq * (0.8 * oy + 0.3 * ox));
                const double clean = background + texture + contrast * inner * obj;
                vol.at(z, y, x) = static_cast<float>(bias * clean + cfg.noise_sigma * noise(rng));
            }
        }
    }
    return {std::move(vol), std::move(lab)};
}

inline std::vector<PhantomCase> generate_phantom_dataset(const PhantomConfig& cfg) {
    if (cfg.count < 1) throw std::invalid_argument("phantom: count must be >= 1");
    std::vector<PhantomCase> out;
    out.reserve(static_cast<std::size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) out.push_back(generate_phantom(cfg, i));
    return out;
}

inline std::vector<PhantomCase> generate_phantom_dataset(int count, Shape3 shape, std::uint64_t seed) {
    PhantomConfig cfg;
    cfg.count = count;
    cfg.shape = shape;
    cfg.seed = seed;
    return generate_phantom_dataset(cfg);
}

}  // namespace sparseseg
