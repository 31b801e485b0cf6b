#pragma once

// Target segmentation network: trained on manual central labels plus fused
// pseudo labels with the certainty-weighted loss, then applied slice-wise.

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "fusion.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "preprocess.hpp"
#include "training.hpp"
#include "unet.hpp"
#include "volume.hpp"

namespace sparseseg {

struct TargetTrainConfig {
    TargetLossConfig loss{};
    int epochs = 100;
    bool augment = true;
    SegNetConfig net{};
};

inline void to_json(nlohmann::json& j, const TargetTrainConfig& c) {
    j = nlohmann::json{{"loss", c.loss}, {"epochs", c.epochs}, {"augment", c.augment}, {"net", c.net}};
}
inline void from_json(const nlohmann::json& j, TargetTrainConfig& c) {
    if (j.contains("loss")) c.loss = j["loss"].get<TargetLossConfig>();
    c.epochs = j.value("epochs", c.epochs);
    c.augment = j.value("augment", c.augment);
    if (j.contains("net")) c.net = j["net"].get<SegNetConfig>();
}

/// Adam at 1e-4, halved every 30 epochs, batch 4.
inline OptimizerSettings default_target_optimizer(std::uint64_t seed = 0) {
    OptimizerSettings o;
    o.lr = 1e-4;
    o.batch_size = 4;
    o.decay_every = 30;
    o.decay_factor = 0.5;
    o.seed = seed;
    return o;
}

/// One supervised 2D training sample.
struct TrainingSlice {
    std::size_t volume = 0;
    int slice = 0;
    std::vector<std::uint8_t> certain;
    std::vector<std::uint8_t> uncertain;  // empty vector = no uncertain supervision
    bool manual = false;
};

struct TargetCase {
    Volume volume;
    SliceMask central;
    std::optional<FusedLabels> fused;
};

struct TargetTrainResult {
    UNet<float> net;
    std::vector<double> loss_history;
};

namespace detail {

inline Transform2D draw_shape_preserving(std::mt19937_64& rng, int h, int w) {
    Transform2D t = draw_transform(rng);
    if (h != w && (t == Transform2D::rot90 || t == Transform2D::rot270)) t = Transform2D::rot180;
    return t;
}

}  // namespace detail

/// Shuffled mini-batches drawn uniformly over the given slices, certainty-weighted loss.
inline TargetTrainResult train_on_slices(std::span<const Volume> volumes, std::span<const TrainingSlice> slices,
                                         const TargetTrainConfig& cfg, const OptimizerSettings& opt,
                                         const std::function<void(int, double)>& on_epoch = {}) {
    if (slices.empty()) throw std::invalid_argument("train_target: no training slices");
    cfg.loss.validate();
    TargetTrainResult res;
    res.net = UNet<float>(cfg.net, opt.seed);
    Adam<float> adam(res.net.parameter_count(), opt);
    std::mt19937_64 rng(opt.seed ^ 0x7a3c5e1fULL);

    std::vector<std::size_t> order(slices.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch_size));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_with(order, rng);
        const double lr = step_lr(opt, epoch);
        double sum = 0.0;
        std::size_t nb = 0;
        for (auto [b0, b1] : batch_ranges(order.size(), batch)) {
            std::vector<Image2D> imgs;
            std::vector<std::uint8_t> certain, uncertain, central;
            for (std::size_t k = b0; k < b1; ++k) {
                const TrainingSlice& s = slices[order[k]];
                const Volume& v = volumes[s.volume];
                const int h = v.shape().h, w = v.shape().w;
                const Transform2D t =
                    cfg.augment ? detail::draw_shape_preserving(rng, h, w) : Transform2D::identity;
                imgs.push_back(apply_transform(t, v.slice(s.slice)));
                const auto c = apply_transform<std::uint8_t>(t, s.certain, h, w);
                certain.insert(certain.end(), c.begin(), c.end());
                if (s.uncertain.empty() || s.manual) {
                    uncertain.insert(uncertain.end(), c.size(), 0);
                } else {
                    const auto u = apply_transform<std::uint8_t>(t, s.uncertain, h, w);
                    uncertain.insert(uncertain.end(), u.begin(), u.end());
                }
                central.push_back(s.manual ? 1 : 0);
            }
            std::vector<const Image2D*> ptrs;
            for (const auto& im : imgs) ptrs.push_back(&im);
            const Tensor<float> x = stack_images(ptrs);
            UNet<float>::Tape tape;
            const Tensor<float>& logits = res.net.forward_train(x, tape);
            const std::vector<float> prob = foreground_probability(logits);
            std::vector<float> dprob(prob.size(), 0.0F);
            const auto v = target_loss<float>(prob, certain, central, uncertain, x.plane(), cfg.loss, dprob);
            res.net.zero_grad();
            res.net.backward(tape, logits_grad_from_prob<float>(logits, prob, dprob));
            adam.step(res.net.store(), lr);
            sum += v.total;
            ++nb;
        }
        res.loss_history.push_back(sum / static_cast<double>(nb));
        if (on_epoch) on_epoch(epoch, res.loss_history.back());
    }
    return res;
}

/// Central slices with manual labels; non-central slices with consistent
/// (certain) and inconsistent (uncertain) pseudo labels.
inline std::vector<TrainingSlice> target_slices(std::span<const TargetCase> data, bool require_fused = true) {
    std::vector<TrainingSlice> out;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& d = data[i];
        const int c = central_slice_index(d.volume);
        if (d.central.slice_index != c) throw std::invalid_argument("train_target: label is not on the central slice");
        out.push_back({i, c, d.central.pixels, {}, true});
        if (!d.fused) {
            if (require_fused) throw std::invalid_argument("train_target: missing fused labels for " + d.volume.case_id());
            continue;
        }
        if (!(d.fused->consistent.shape == d.volume.shape()) || !(d.fused->inconsistent.shape == d.volume.shape()))
            throw std::invalid_argument("train_target: fused label shape mismatch");
        for (int n = 0; n < d.volume.shape().n; ++n) {
            if (n == c) continue;
            out.push_back({i, n, d.fused->consistent.slice(n).pixels, d.fused->inconsistent.slice(n).pixels, false});
        }
    }
    return out;
}

inline TargetTrainResult train_target(std::span<const TargetCase> data, const TargetTrainConfig& cfg,
                                      const OptimizerSettings& opt,
                                      const std::function<void(int, double)>& on_epoch = {}) {
    if (data.empty()) throw std::invalid_argument("train_target: empty dataset");
    std::vector<Volume> volumes;
    for (const auto& d : data) volumes.push_back(d.volume);
    const auto slices = target_slices(data, true);
    return train_on_slices(volumes, slices, cfg, opt, on_epoch);
}

/// Manual labels on `annotated` slice indices of each volume (FS-LCS and its slice-budget variants).
inline std::vector<TrainingSlice> manual_slices(std::span<const DenseLabelVolume> labels,
                                                const std::function<std::vector<int>(int)>& annotated) {
    std::vector<TrainingSlice> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        for (int n : annotated(labels[i].shape.n)) out.push_back({i, n, labels[i].slice(n).pixels, {}, true});
    return out;
}

/// k annotated slice positions spread evenly over the volume, always including the central slice.
inline std::vector<int> evenly_spaced_slices(int n_slices, int k) {
    const int c = central_slice_index(n_slices);
    k = std::clamp(k, 1, n_slices);
    std::vector<int> out{c};
    if (k == 1) return out;
    // Spread the remaining k-1 positions over the open interval (0, N-1) by even quantiles,
    // snapping each to the nearest slice not yet taken.
    for (int j = 1; j < k; ++j) {
        const double pos = (n_slices - 1) * static_cast<double>(j) / static_cast<double>(k);
        int best = -1;
        double best_d = 1e300;
        for (int n = 0; n < n_slices; ++n) {
            if (std::find(out.begin(), out.end(), n) != out.end()) continue;
            const double d = std::abs(n - pos);
            if (d < best_d) {
                best_d = d;
                best = n;
            }
        }
        out.push_back(best);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Per-slice argmax over the whole volume (reflect-padded to the network divisor).
inline DenseLabelVolume infer_volume(const UNet<float>& net, const Volume& volume) {
    const auto& s = volume.shape();
    DenseLabelVolume out(s, LabelSource::predicted);
    const Tensor<float> logits = predict_padded(net, volume_tensor(volume));
    for (int n = 0; n < s.n; ++n) {
        const auto lab = argmax_labels(logits, n);
        std::copy(lab.begin(), lab.end(), out.masks.begin() + static_cast<std::ptrdiff_t>(n * s.slice_pixels()));
    }
    return out;
}

}  // namespace sparseseg
