#pragma once

// Raw volume/mask files with JSON sidecars.
//   <case>.vol  little-endian float32, C-order [n][h][w]; sidecar <case>.vol.json
//   <case>.msk  uint8 in {0,1}, same ordering;           sidecar <case>.msk.json

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "volume.hpp"

namespace sparseseg {

namespace fs = std::filesystem;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("missing sidecar: " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed sidecar " + path.string() + ": " + e.what());
    }
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::vector<char> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw IoError("short write to " + path.string());
}

inline std::uint32_t to_le(std::uint32_t v) {
    if constexpr (std::endian::native == std::endian::big) {
        return ((v & 0xFFU) << 24) | ((v & 0xFF00U) << 8) | ((v >> 8) & 0xFF00U) | (v >> 24);
    }
    return v;
}

inline fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

inline Shape3 shape_from_json(const nlohmann::json& j, const fs::path& where) {
    if (!j.contains("shape") || !j["shape"].is_array() || j["shape"].size() != 3)
        throw IoError("sidecar lacks a 3-element shape: " + where.string());
    return {j["shape"][0].get<int>(), j["shape"][1].get<int>(), j["shape"][2].get<int>()};
}

inline Spacing spacing_from_json(const nlohmann::json& j) {
    Spacing s{1.0, 1.0, 1.0};
    if (j.contains("spacing_mm")) {
        const auto& a = j["spacing_mm"];
        if (!a.is_array() || a.size() != 3) throw IoError("spacing_mm must have 3 entries");
        s = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
    }
    return s;
}

}  // namespace detail

inline fs::path sidecar_path(const fs::path& data_path) { return detail::sidecar(data_path); }

inline void save_volume(const Volume& volume, const fs::path& path) {
    const auto& v = volume.voxels();
    std::vector<std::uint32_t> raw(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) raw[i] = detail::to_le(std::bit_cast<std::uint32_t>(v[i]));
    detail::write_bytes(path, raw.data(), raw.size() * sizeof(std::uint32_t));

    const auto& s = volume.shape();
    nlohmann::json j;
    j["shape"] = {s.n, s.h, s.w};
    j["spacing_mm"] = {volume.spacing()[0], volume.spacing()[1], volume.spacing()[2]};
    j["dtype"] = "float32";
    if (!volume.case_id().empty()) j["case_id"] = volume.case_id();
    detail::write_json(detail::sidecar(path), j);
}

inline Volume load_volume(const fs::path& path) {
    const auto meta = detail::read_json(detail::sidecar(path));
    if (meta.value("dtype", std::string{}) != "float32")
        throw IoError("volume sidecar dtype must be float32: " + path.string());
    const Shape3 shape = detail::shape_from_json(meta, path);
    const auto bytes = detail::read_bytes(path);
    if (bytes.size() != shape.voxels() * sizeof(float))
        throw IoError("byte count of " + path.string() + " does not match sidecar shape");

    std::vector<float> voxels(shape.voxels());
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        std::uint32_t raw = 0;
        std::memcpy(&raw, bytes.data() + i * sizeof(raw), sizeof(raw));
        voxels[i] = std::bit_cast<float>(detail::to_le(raw));
    }
    std::string id = meta.value("case_id", path.stem().string());
    return Volume(shape, std::move(voxels), detail::spacing_from_json(meta), std::move(id));
}

inline void save_mask(const DenseLabelVolume& mask, const fs::path& path, const Spacing& spacing_mm = {1.0, 1.0, 1.0}) {
    mask.validate();
    detail::write_bytes(path, mask.masks.data(), mask.masks.size());
    nlohmann::json j;
    j["shape"] = {mask.shape.n, mask.shape.h, mask.shape.w};
    j["spacing_mm"] = {spacing_mm[0], spacing_mm[1], spacing_mm[2]};
    j["dtype"] = "uint8";
    j["source"] = to_string(mask.source);
    detail::write_json(detail::sidecar(path), j);
}

struct LoadedMask {
    DenseLabelVolume labels;
    Spacing spacing_mm{1.0, 1.0, 1.0};
};

inline LoadedMask load_mask_with_spacing(const fs::path& path) {
    const auto meta = detail::read_json(detail::sidecar(path));
    if (meta.value("dtype", std::string{}) != "uint8")
        throw IoError("mask sidecar dtype must be uint8: " + path.string());
    const Shape3 shape = detail::shape_from_json(meta, path);
    const auto bytes = detail::read_bytes(path);
    if (bytes.size() != shape.voxels())
        throw IoError("byte count of " + path.string() + " does not match sidecar shape");

    LoadedMask out;
    out.labels = DenseLabelVolume(shape, label_source_from_string(meta.value("source", std::string{"manual"})));
    std::transform(bytes.begin(), bytes.end(), out.labels.masks.begin(),
                   [](char c) { return static_cast<std::uint8_t>(c); });
    try {
        out.labels.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    out.spacing_mm = detail::spacing_from_json(meta);
    return out;
}

inline DenseLabelVolume load_mask(const fs::path& path) { return load_mask_with_spacing(path).labels; }

}  // namespace sparseseg
