#pragma once

// Consistency-based fusion of two pseudo-label sets:
//   consistent   = semi AND ssl
//   inconsistent = (semi OR ssl) AND NOT consistent

#include <optional>
#include <stdexcept>
#include <string>

#include "volume.hpp"

namespace sparseseg {

struct FusedLabels {
    DenseLabelVolume consistent;    // source = fused_certain
    DenseLabelVolume inconsistent;  // source = fused_uncertain
};

enum class FusionMode { intersection, union_, consistency };

inline const char* to_string(FusionMode m) {
    switch (m) {
        case FusionMode::intersection: return "intersection";
        case FusionMode::union_: return "union";
        case FusionMode::consistency: return "consistency";
    }
    return "consistency";
}

inline FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "intersection") return FusionMode::intersection;
    if (s == "union") return FusionMode::union_;
    if (s == "consistency") return FusionMode::consistency;
    throw std::invalid_argument("unknown fusion mode: " + s);
}

/// Central-slice bypass: when `central_slice` is given, both outputs are empty
/// there (the manual label is used for that slice).
inline FusedLabels fuse_mode(const DenseLabelVolume& semi, const DenseLabelVolume& ssl, FusionMode mode,
                             std::optional<int> central_slice = std::nullopt) {
    if (!(semi.shape == ssl.shape)) throw std::invalid_argument("fuse: shape mismatch");
    semi.validate();
    ssl.validate();
    FusedLabels out{DenseLabelVolume(semi.shape, LabelSource::fused_certain),
                    DenseLabelVolume(semi.shape, LabelSource::fused_uncertain)};
    const std::size_t plane = semi.shape.slice_pixels();
    for (std::size_t i = 0; i < semi.masks.size(); ++i) {
        if (central_slice && static_cast<int>(i / plane) == *central_slice) continue;
        const std::uint8_t a = semi.masks[i];
        const std::uint8_t b = ssl.masks[i];
        switch (mode) {
            case FusionMode::intersection: out.consistent.masks[i] = a & b; break;
            case FusionMode::union_: out.consistent.masks[i] = a | b; break;
            case FusionMode::consistency:
                out.consistent.masks[i] = a & b;
                out.inconsistent.masks[i] = a ^ b;
                break;
        }
    }
    return out;
}

inline FusedLabels fuse(const DenseLabelVolume& semi, const DenseLabelVolume& ssl,
                        std::optional<int> central_slice = std::nullopt) {
    return fuse_mode(semi, ssl, FusionMode::consistency, central_slice);
}

}  // namespace sparseseg
