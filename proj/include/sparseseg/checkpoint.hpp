#pragma once

// Network checkpoints: <name>.bin holds float32 parameters followed by
// non-trainable buffers; <name>.json is the manifest.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "unet.hpp"

namespace sparseseg {

struct CheckpointInfo {
    nlohmann::json config;  // stage configuration, including "net"
    int epoch = 0;
    std::uint64_t rng_seed = 0;
    std::vector<double> loss_history;
};

inline std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& weights) {
    auto p = weights;
    p.replace_extension(".json");
    return p;
}

inline void save_checkpoint(const UNet<float>& net, const CheckpointInfo& info, const std::filesystem::path& weights) {
    if (weights.has_parent_path()) std::filesystem::create_directories(weights.parent_path());
    const auto& st = net.store();
    std::vector<std::uint32_t> blob;
    blob.reserve(st.values.size() + st.buffers.size());
    for (float v : st.values) blob.push_back(detail::to_le(std::bit_cast<std::uint32_t>(v)));
    for (float v : st.buffers) blob.push_back(detail::to_le(std::bit_cast<std::uint32_t>(v)));
    detail::write_bytes(weights, blob.data(), blob.size() * sizeof(std::uint32_t));

    nlohmann::json m;
    m["config"] = info.config;
    m["config"]["net"] = net.config();
    m["epoch"] = info.epoch;
    m["rng_seed"] = info.rng_seed;
    m["loss_history"] = info.loss_history;
    m["parameter_count"] = st.values.size();
    m["buffer_count"] = st.buffers.size();
    m["dtype"] = "float32";
    detail::write_json(checkpoint_manifest_path(weights), m);
}

struct LoadedCheckpoint {
    UNet<float> net;
    CheckpointInfo info;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& weights) {
    const auto m = detail::read_json(checkpoint_manifest_path(weights));
    LoadedCheckpoint out;
    out.info.config = m.at("config");
    out.info.epoch = m.value("epoch", 0);
    out.info.rng_seed = m.value("rng_seed", std::uint64_t{0});
    out.info.loss_history = m.value("loss_history", std::vector<double>{});
    out.net = UNet<float>(m.at("config").at("net").get<SegNetConfig>());
    auto& st = out.net.store();
    if (m.value("parameter_count", std::size_t{0}) != st.values.size() ||
        m.value("buffer_count", std::size_t{0}) != st.buffers.size())
        throw IoError("checkpoint: manifest does not match the network layout: " + weights.string());
    const auto bytes = detail::read_bytes(weights);
    if (bytes.size() != (st.values.size() + st.buffers.size()) * sizeof(float))
        throw IoError("checkpoint: byte count does not match manifest: " + weights.string());
    auto word = [&](std::size_t i) {
        std::uint32_t raw = 0;
        std::memcpy(&raw, bytes.data() + i * sizeof(raw), sizeof(raw));
        return std::bit_cast<float>(detail::to_le(raw));
    };
    for (std::size_t i = 0; i < st.values.size(); ++i) st.values[i] = word(i);
    for (std::size_t i = 0; i < st.buffers.size(); ++i) st.buffers[i] = word(st.values.size() + i);
    return out;
}

}  // namespace sparseseg
