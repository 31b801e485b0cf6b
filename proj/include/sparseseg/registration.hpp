#pragma once

// Self-supervised slice-to-slice registration and central-slice label propagation.
// The network maps (moving, fixed) to a displacement field; training minimizes
//   mean (warp(moving, field) - fixed)^2 + lambda * mean |grad field|^2
// over all adjacent slice pairs in both directions. No labels are consumed.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "optim.hpp"
#include "training.hpp"
#include "unet.hpp"
#include "volume.hpp"
#include "warp.hpp"

namespace sparseseg {

struct RegistrationConfig {
    double smoothness = 0.01;
    int epochs = 100;
    SegNetConfig net = SegNetConfig::registration();
};

inline void to_json(nlohmann::json& j, const RegistrationConfig& c) {
    j = nlohmann::json{{"smoothness", c.smoothness}, {"epochs", c.epochs}, {"net", c.net}};
}
inline void from_json(const nlohmann::json& j, RegistrationConfig& c) {
    c.smoothness = j.value("smoothness", c.smoothness);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("net")) {
        c.net = j["net"].get<SegNetConfig>();
    }
    c.net.in_channels = 2;
    c.net.out_channels = 2;
}

struct RegLossValue {
    double similarity = 0.0;
    double smoothness = 0.0;
    double total = 0.0;
};

/// pair: (B, 2, H, W) with channel 0 moving, channel 1 fixed; field: (B, 2, H, W) = (dy, dx).
/// Writes d(total)/d(field) into dfield when non-null.
template <class T>
RegLossValue registration_loss(const Tensor<T>& pair, const Tensor<T>& field, double lambda, Tensor<T>* dfield) {
    if (pair.c != 2 || field.c != 2 || pair.n != field.n || pair.h != field.h || pair.w != field.w)
        throw std::invalid_argument("registration_loss: shape mismatch");
    const int h = field.h, w = field.w;
    const std::size_t hw = field.plane();
    const double n_sim = static_cast<double>(field.n) * static_cast<double>(hw);
    const double n_smooth = 2.0 * n_sim;
    if (dfield) dfield->resize(field.n, 2, h, w);

    RegLossValue v;
    std::vector<T> warped(hw), gy(hw), gx(hw);
    for (int i = 0; i < field.n; ++i) {
        const std::span<const T> mov(pair.channel(i, 0), hw);
        const std::span<const T> fix(pair.channel(i, 1), hw);
        const std::span<const T> fy(field.channel(i, 0), hw);
        const std::span<const T> fx(field.channel(i, 1), hw);
        warp_with_grad<T>(mov, fy, fx, h, w, warped, dfield ? std::span<T>(gy) : std::span<T>{},
                          dfield ? std::span<T>(gx) : std::span<T>{});
        for (std::size_t j = 0; j < hw; ++j) {
            const double r = static_cast<double>(warped[j]) - fix[j];
            v.similarity += r * r;
            if (dfield) {
                const double s = 2.0 * r / n_sim;
                dfield->channel(i, 0)[j] += static_cast<T>(s * gy[j]);
                dfield->channel(i, 1)[j] += static_cast<T>(s * gx[j]);
            }
        }
        for (int c = 0; c < 2; ++c) {
            const T* f = field.channel(i, c);
            T* g = dfield ? dfield->channel(i, c) : nullptr;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t j = static_cast<std::size_t>(y) * w + x;
                    if (y + 1 < h) {
                        const double d = static_cast<double>(f[j + w]) - f[j];
                        v.smoothness += d * d;
                        if (g) {
                            g[j + w] += static_cast<T>(lambda * 2.0 * d / n_smooth);
                            g[j] -= static_cast<T>(lambda * 2.0 * d / n_smooth);
                        }
                    }
                    if (x + 1 < w) {
                        const double d = static_cast<double>(f[j + 1]) - f[j];
                        v.smoothness += d * d;
                        if (g) {
                            g[j + 1] += static_cast<T>(lambda * 2.0 * d / n_smooth);
                            g[j] -= static_cast<T>(lambda * 2.0 * d / n_smooth);
                        }
                    }
                }
            }
        }
    }
    v.similarity /= n_sim;
    v.smoothness /= n_smooth;
    v.total = v.similarity + lambda * v.smoothness;
    return v;
}

struct RegistrationResult {
    UNet<float> net;
    std::vector<double> loss_history;  // mean batch loss per epoch
    double initial_loss = 0.0;         // loss of the untrained (identity) model over all pairs
};

struct SlicePair {
    const Image2D* moving = nullptr;
    const Image2D* fixed = nullptr;
};

inline Tensor<float> stack_pairs(std::span<const SlicePair> pairs) {
    const int h = pairs.front().moving->h;
    const int w = pairs.front().moving->w;
    Tensor<float> t(static_cast<int>(pairs.size()), 2, h, w);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        std::copy(pairs[i].moving->pixels.begin(), pairs[i].moving->pixels.end(), t.channel(static_cast<int>(i), 0));
        std::copy(pairs[i].fixed->pixels.begin(), pairs[i].fixed->pixels.end(), t.channel(static_cast<int>(i), 1));
    }
    return t;
}

inline RegistrationResult train_registration(std::span<const Volume> dataset, const OptimizerSettings& opt,
                                             const RegistrationConfig& cfg = {},
                                             const std::function<void(int, double)>& on_epoch = {}) {
    if (dataset.empty()) throw std::invalid_argument("train_registration: empty dataset");
    RegistrationResult res;
    res.net = UNet<float>(cfg.net, opt.seed);
    Adam<float> adam(res.net.parameter_count(), opt);
    std::mt19937_64 rng(opt.seed ^ 0xa5a5a5a5ULL);

    std::vector<std::vector<Image2D>> slices;
    for (const auto& v : dataset) {
        slices.emplace_back();
        for (int n = 0; n < v.shape().n; ++n) slices.back().push_back(v.slice(n));
    }
    std::vector<SlicePair> pairs;
    for (const auto& vs : slices) {
        for (std::size_t n = 0; n + 1 < vs.size(); ++n) {
            pairs.push_back({&vs[n], &vs[n + 1]});
            pairs.push_back({&vs[n + 1], &vs[n]});
        }
    }
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch_size));

    {
        // Zero-initialised heads make this the identity-transform loss.
        double sum = 0.0;
        std::size_t count = 0;
        for (auto [b0, b1] : batch_ranges(pairs.size(), batch)) {
            const Tensor<float> x = stack_pairs(std::span(pairs).subspan(b0, b1 - b0));
            const Tensor<float> field = res.net.predict(x);
            sum += registration_loss<float>(x, field, cfg.smoothness, nullptr).total * static_cast<double>(b1 - b0);
            count += b1 - b0;
        }
        res.initial_loss = sum / static_cast<double>(count);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_with(pairs, rng);
        double sum = 0.0;
        std::size_t nb = 0;
        const double lr = step_lr(opt, epoch);
        for (auto [b0, b1] : batch_ranges(pairs.size(), batch)) {
            const Tensor<float> x = stack_pairs(std::span(pairs).subspan(b0, b1 - b0));
            UNet<float>::Tape tape;
            const Tensor<float>& field = res.net.forward_train(x, tape);
            Tensor<float> dfield;
            const auto v = registration_loss(x, field, cfg.smoothness, &dfield);
            res.net.zero_grad();
            res.net.backward(tape, dfield);
            adam.step(res.net.store(), lr);
            sum += v.total;
            ++nb;
        }
        res.loss_history.push_back(sum / static_cast<double>(nb));
        if (on_epoch) on_epoch(epoch, res.loss_history.back());
    }
    return res;
}

/// Fields mapping each moving slice onto its fixed slice, inference mode.
inline std::vector<DisplacementField> estimate_fields(const UNet<float>& net, std::span<const SlicePair> pairs) {
    std::vector<DisplacementField> out;
    if (pairs.empty()) return out;
    const Tensor<float> field = predict_padded(net, stack_pairs(pairs));
    for (int i = 0; i < field.n; ++i) {
        DisplacementField f(field.h, field.w);
        std::copy(field.sample(i), field.sample(i) + field.sample_stride(), f.field.begin());
        out.push_back(std::move(f));
    }
    return out;
}

using FieldEstimator = std::function<DisplacementField(const Image2D& moving, const Image2D& fixed)>;

/// Chains label warps outward from the central slice. Each step registers the
/// original slice S_n (moving) onto S_{n+-1} (fixed) and warps the current label.
inline DenseLabelVolume propagate_labels(const SparseAnnotatedVolume& item, const FieldEstimator& estimate) {
    item.validate();
    const Volume& v = item.volume;
    const int n_slices = v.shape().n;
    const int c = item.central_label.slice_index;
    DenseLabelVolume out(v.shape(), LabelSource::ssl);
    out.set_slice(item.central_label);

    SliceMask cur = item.central_label;
    for (int n = c; n + 1 < n_slices; ++n) {
        cur = warp(cur, estimate(v.slice(n), v.slice(n + 1)));
        cur.slice_index = n + 1;
        out.set_slice(cur);
    }
    cur = item.central_label;
    for (int n = c; n >= 1; --n) {
        cur = warp(cur, estimate(v.slice(n), v.slice(n - 1)));
        cur.slice_index = n - 1;
        out.set_slice(cur);
    }
    return out;
}

inline DenseLabelVolume propagate_labels(const UNet<float>& reg_net, const SparseAnnotatedVolume& item) {
    item.validate();
    const Volume& v = item.volume;
    const int n_slices = v.shape().n;
    const int c = item.central_label.slice_index;
    std::vector<Image2D> slices;
    for (int n = 0; n < n_slices; ++n) slices.push_back(v.slice(n));

    // Fields depend only on image pairs, so all chain steps share one batched pass.
    std::vector<SlicePair> pairs;
    for (int n = c; n + 1 < n_slices; ++n) pairs.push_back({&slices[n], &slices[n + 1]});
    for (int n = c; n >= 1; --n) pairs.push_back({&slices[n], &slices[n - 1]});
    const auto fields = estimate_fields(reg_net, pairs);

    std::size_t k = 0;
    return propagate_labels(item, [&](const Image2D&, const Image2D&) { return fields[k++]; });
}

}  // namespace sparseseg
