#pragma once

// Core data model: volumes, slice masks, dense label volumes.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sparseseg {

struct Shape3 {
    int n = 0;  // slices
    int h = 0;  // rows
    int w = 0;  // cols

    std::size_t voxels() const { return static_cast<std::size_t>(n) * h * w; }
    std::size_t slice_pixels() const { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape3&) const = default;
};

/// Physical voxel size in millimeters, ordered (z, y, x).
using Spacing = std::array<double, 3>;

/// Row-major 2D float image.
struct Image2D {
    int h = 0;
    int w = 0;
    std::vector<float> pixels;

    Image2D() = default;
    Image2D(int rows, int cols, float fill = 0.0F)
        : h(rows), w(cols), pixels(static_cast<std::size_t>(rows) * cols, fill) {}

    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }
    bool operator==(const Image2D&) const = default;
};

/// Binary 2D mask for one slice of a volume.
struct SliceMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> pixels;
    int slice_index = 0;

    SliceMask() = default;
    SliceMask(int rows, int cols, int index = 0)
        : h(rows), w(cols), pixels(static_cast<std::size_t>(rows) * cols, 0), slice_index(index) {}

    std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * w + x]; }

    std::size_t foreground() const {
        std::size_t count = 0;
        for (auto p : pixels) count += p;
        return count;
    }

    void validate() const {
        if (pixels.size() != static_cast<std::size_t>(h) * w)
            throw std::invalid_argument("SliceMask: pixel count does not match shape");
        for (auto p : pixels)
            if (p > 1) throw std::invalid_argument("SliceMask: values must be 0 or 1");
    }
    bool operator==(const SliceMask&) const = default;
};

/// 3D scalar image indexed [slice][row][col] with physical spacing.
class Volume {
public:
    Volume() = default;

    Volume(Shape3 shape, std::vector<float> voxels, Spacing spacing_mm, std::string case_id = {})
        : shape_(shape), voxels_(std::move(voxels)), spacing_(spacing_mm), case_id_(std::move(case_id)) {
        validate();
    }

    Volume(Shape3 shape, Spacing spacing_mm, std::string case_id = {})
        : Volume(shape, std::vector<float>(shape.voxels(), 0.0F), spacing_mm, std::move(case_id)) {}

    const Shape3& shape() const { return shape_; }
    const Spacing& spacing() const { return spacing_; }
    const std::string& case_id() const { return case_id_; }
    void set_case_id(std::string id) { case_id_ = std::move(id); }

    const std::vector<float>& voxels() const { return voxels_; }
    std::vector<float>& voxels() { return voxels_; }

    float at(int n, int y, int x) const { return voxels_[index(n, y, x)]; }
    float& at(int n, int y, int x) { return voxels_[index(n, y, x)]; }

    std::size_t index(int n, int y, int x) const {
        return (static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x;
    }

    Image2D slice(int n) const {
        Image2D out(shape_.h, shape_.w);
        const auto first = voxels_.begin() + static_cast<std::ptrdiff_t>(n * shape_.slice_pixels());
        std::copy(first, first + static_cast<std::ptrdiff_t>(shape_.slice_pixels()), out.pixels.begin());
        return out;
    }

    void validate() const {
        if (shape_.n < 3 || shape_.h < 8 || shape_.w < 8)
            throw std::invalid_argument("Volume: shape must satisfy N>=3, H>=8, W>=8");
        if (voxels_.size() != shape_.voxels())
            throw std::invalid_argument("Volume: voxel count does not match shape");
        for (double s : spacing_)
            if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("Volume: spacing must be positive");
        for (float v : voxels_)
            if (!std::isfinite(v)) throw std::invalid_argument("Volume: non-finite intensity");
    }

    bool operator==(const Volume&) const = default;

private:
    Shape3 shape_{};
    std::vector<float> voxels_;
    Spacing spacing_{1.0, 1.0, 1.0};
    std::string case_id_;
};

/// Zero-based central slice; the higher middle for even counts.
inline int central_slice_index(const Volume& volume) { return volume.shape().n / 2; }
inline int central_slice_index(int slice_count) { return slice_count / 2; }

struct SparseAnnotatedVolume {
    Volume volume;
    SliceMask central_label;

    SparseAnnotatedVolume() = default;
    SparseAnnotatedVolume(Volume v, SliceMask label) : volume(std::move(v)), central_label(std::move(label)) {
        validate();
    }

    void validate() const {
        central_label.validate();
        if (central_label.slice_index != central_slice_index(volume))
            throw std::invalid_argument("SparseAnnotatedVolume: label is not on the central slice");
        if (central_label.h != volume.shape().h || central_label.w != volume.shape().w)
            throw std::invalid_argument("SparseAnnotatedVolume: label shape does not match slice shape");
    }
};

enum class LabelSource { manual, semi, ssl, fused_certain, fused_uncertain, predicted };

inline const char* to_string(LabelSource s) {
    switch (s) {
        case LabelSource::manual: return "manual";
        case LabelSource::semi: return "semi";
        case LabelSource::ssl: return "ssl";
        case LabelSource::fused_certain: return "fused_certain";
        case LabelSource::fused_uncertain: return "fused_uncertain";
        case LabelSource::predicted: return "predicted";
    }
    return "manual";
}

inline LabelSource label_source_from_string(const std::string& s) {
    if (s == "manual") return LabelSource::manual;
    if (s == "semi") return LabelSource::semi;
    if (s == "ssl") return LabelSource::ssl;
    if (s == "fused_certain") return LabelSource::fused_certain;
    if (s == "fused_uncertain") return LabelSource::fused_uncertain;
    if (s == "predicted") return LabelSource::predicted;
    throw std::invalid_argument("unknown label source: " + s);
}

/// Binary label for every slice of a volume.
struct DenseLabelVolume {
    Shape3 shape{};
    std::vector<std::uint8_t> masks;
    LabelSource source = LabelSource::manual;

    DenseLabelVolume() = default;
    explicit DenseLabelVolume(Shape3 s, LabelSource src = LabelSource::manual)
        : shape(s), masks(s.voxels(), 0), source(src) {}

    std::size_t index(int n, int y, int x) const {
        return (static_cast<std::size_t>(n) * shape.h + y) * shape.w + x;
    }
    std::uint8_t at(int n, int y, int x) const { return masks[index(n, y, x)]; }
    std::uint8_t& at(int n, int y, int x) { return masks[index(n, y, x)]; }

    SliceMask slice(int n) const {
        SliceMask out(shape.h, shape.w, n);
        const auto first = masks.begin() + static_cast<std::ptrdiff_t>(n * shape.slice_pixels());
        std::copy(first, first + static_cast<std::ptrdiff_t>(shape.slice_pixels()), out.pixels.begin());
        return out;
    }

    void set_slice(const SliceMask& m) {
        if (m.h != shape.h || m.w != shape.w) throw std::invalid_argument("DenseLabelVolume: slice shape mismatch");
        std::copy(m.pixels.begin(), m.pixels.end(),
                  masks.begin() + static_cast<std::ptrdiff_t>(m.slice_index * shape.slice_pixels()));
    }

    std::size_t foreground() const {
        std::size_t count = 0;
        for (auto p : masks) count += p;
        return count;
    }

    std::size_t slice_foreground(int n) const {
        std::size_t count = 0;
        const std::size_t base = n * shape.slice_pixels();
        for (std::size_t i = 0; i < shape.slice_pixels(); ++i) count += masks[base + i];
        return count;
    }

    void validate() const {
        if (masks.size() != shape.voxels()) throw std::invalid_argument("DenseLabelVolume: size mismatch");
        for (auto p : masks)
            if (p > 1) throw std::invalid_argument("DenseLabelVolume: values must be 0 or 1");
    }

    bool operator==(const DenseLabelVolume&) const = default;
};

/// Sparse view of a densely labeled volume: keeps only the central slice label.
inline SparseAnnotatedVolume sparsify(const Volume& volume, const DenseLabelVolume& labels) {
    if (!(labels.shape == volume.shape())) throw std::invalid_argument("sparsify: shape mismatch");
    return SparseAnnotatedVolume(volume, labels.slice(central_slice_index(volume)));
}

}  // namespace sparseseg
