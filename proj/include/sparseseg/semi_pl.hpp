#pragma once

// Self-training pseudo-label generator. Phase 1 fits the labelled central
// slices for K1 epochs; from K1 on, pseudo labels for every non-central slice
// are regenerated before each epoch and mixed in with weight alpha(t).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "losses.hpp"
#include "optim.hpp"
#include "training.hpp"
#include "unet.hpp"
#include "volume.hpp"

namespace sparseseg {

struct SemiEpochLog {
    int epoch = 0;
    double alpha = 0.0;
    double labeled_loss = 0.0;
    double unlabeled_loss = 0.0;
};

struct SemiTrainState {
    UNet<float> net;
    UNet<float> k1_checkpoint;  // weights at the end of the supervised phase
    int epoch = 0;
    std::map<std::string, DenseLabelVolume> pseudo_labels;
    std::uint64_t rng_seed = 0;
    std::vector<SemiEpochLog> history;
};

/// Argmax labels for every non-central slice; the central slice is left empty
/// (the manual label supersedes it). Inference-mode batch normalization.
inline DenseLabelVolume generate_pseudo_labels(const UNet<float>& net, const Volume& volume) {
    const auto& s = volume.shape();
    DenseLabelVolume out(s, LabelSource::semi);
    const int c = central_slice_index(volume);
    const Tensor<float> logits = predict_padded(net, volume_tensor(volume));
    for (int n = 0; n < s.n; ++n) {
        if (n == c) continue;
        const auto lab = argmax_labels(logits, n);
        std::copy(lab.begin(), lab.end(), out.masks.begin() + static_cast<std::ptrdiff_t>(n * s.slice_pixels()));
    }
    return out;
}

struct SemiTrainOptions {
    SegNetConfig net{};
    std::function<void(const SemiEpochLog&)> on_epoch;
};

namespace detail {

struct SliceRef {
    std::size_t item = 0;
    int slice = 0;
};

}  // namespace detail

/// Runs both phases. total_epochs == K1 never activates the pseudo-label term.
inline SemiTrainState train_semi(std::span<const SparseAnnotatedVolume> dataset, const SemiLossConfig& cfg,
                                 const OptimizerSettings& opt, int total_epochs, const SemiTrainOptions& options = {}) {
    if (dataset.empty()) throw std::invalid_argument("train_semi: empty dataset");
    cfg.validate();
    if (total_epochs < 1) throw std::invalid_argument("train_semi: total_epochs must be positive");
    for (const auto& item : dataset) item.validate();

    SemiTrainState state;
    state.rng_seed = opt.seed;
    state.net = UNet<float>(options.net, opt.seed);
    Adam<float> adam(state.net.parameter_count(), opt);
    std::mt19937_64 rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);

    std::vector<Image2D> slices_cache;
    std::vector<std::vector<std::size_t>> slice_slot(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& v = dataset[i].volume;
        for (int n = 0; n < v.shape().n; ++n) {
            slice_slot[i].push_back(slices_cache.size());
            slices_cache.push_back(v.slice(n));
        }
    }
    const std::size_t pixels = dataset.front().volume.shape().slice_pixels();
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opt.batch_size));

    for (int t = 0; t < total_epochs; ++t) {
        const bool mixed = t >= cfg.K1;
        if (t == cfg.K1) state.k1_checkpoint = state.net;
        if (mixed) {
            for (const auto& item : dataset)
                state.pseudo_labels[item.volume.case_id()] = generate_pseudo_labels(state.net, item.volume);
        }

        std::vector<detail::SliceRef> pool;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const int c = central_slice_index(dataset[i].volume);
            if (!mixed) {
                pool.push_back({i, c});
                continue;
            }
            for (int n = 0; n < dataset[i].volume.shape().n; ++n) pool.push_back({i, n});
        }
        shuffle_with(pool, rng);

        SemiEpochLog log;
        log.epoch = t;
        log.alpha = alpha_schedule(t, cfg);
        std::size_t batches = 0;
        const double lr = step_lr(opt, t);
        for (auto [b0, b1] : batch_ranges(pool.size(), batch)) {
            std::vector<const Image2D*> imgs;
            std::vector<std::size_t> lab_idx, unl_idx;
            std::vector<std::uint8_t> lab_t, unl_t;
            for (std::size_t k = b0; k < b1; ++k) {
                const auto& ref = pool[k];
                const auto& item = dataset[ref.item];
                imgs.push_back(&slices_cache[slice_slot[ref.item][static_cast<std::size_t>(ref.slice)]]);
                if (ref.slice == item.central_label.slice_index) {
                    lab_idx.push_back(k - b0);
                    lab_t.insert(lab_t.end(), item.central_label.pixels.begin(), item.central_label.pixels.end());
                } else {
                    unl_idx.push_back(k - b0);
                    const auto& pl = state.pseudo_labels.at(item.volume.case_id());
                    const auto first = pl.masks.begin() + static_cast<std::ptrdiff_t>(ref.slice * pixels);
                    unl_t.insert(unl_t.end(), first, first + static_cast<std::ptrdiff_t>(pixels));
                }
            }
            const Tensor<float> x = stack_images(imgs);
            UNet<float>::Tape tape;
            const Tensor<float>& logits = state.net.forward_train(x, tape);
            const std::vector<float> prob = foreground_probability(logits);

            auto gather = [&](const std::vector<std::size_t>& idx) {
                std::vector<float> out;
                out.reserve(idx.size() * pixels);
                for (auto i : idx) out.insert(out.end(), prob.begin() + i * pixels, prob.begin() + (i + 1) * pixels);
                return out;
            };
            const std::vector<float> lab_p = gather(lab_idx);
            const std::vector<float> unl_p = gather(unl_idx);
            std::vector<float> lab_g(lab_p.size(), 0.0F), unl_g(unl_p.size(), 0.0F);
            const auto v = semi_loss<float>({lab_p, lab_t, pixels}, {unl_p, unl_t, pixels}, t, cfg, lab_g, unl_g);

            std::vector<float> dprob(prob.size(), 0.0F);
            for (std::size_t k = 0; k < lab_idx.size(); ++k)
                std::copy(lab_g.begin() + k * pixels, lab_g.begin() + (k + 1) * pixels,
                          dprob.begin() + lab_idx[k] * pixels);
            for (std::size_t k = 0; k < unl_idx.size(); ++k)
                std::copy(unl_g.begin() + k * pixels, unl_g.begin() + (k + 1) * pixels,
                          dprob.begin() + unl_idx[k] * pixels);

            state.net.zero_grad();
            state.net.backward(tape, logits_grad_from_prob<float>(logits, prob, dprob));
            adam.step(state.net.store(), lr);

            log.labeled_loss += v.labeled;
            log.unlabeled_loss += v.unlabeled;
            ++batches;
        }
        if (batches > 0) {
            log.labeled_loss /= static_cast<double>(batches);
            log.unlabeled_loss /= static_cast<double>(batches);
        }
        state.history.push_back(log);
        state.epoch = t + 1;
        if (options.on_epoch) options.on_epoch(log);
    }
    if (total_epochs <= cfg.K1) state.k1_checkpoint = state.net;
    // Final refresh so the returned labels reflect the final weights.
    for (const auto& item : dataset)
        state.pseudo_labels[item.volume.case_id()] = generate_pseudo_labels(state.net, item.volume);
    return state;
}

}  // namespace sparseseg
