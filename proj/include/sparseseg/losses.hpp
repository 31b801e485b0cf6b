#pragma once

// Segmentation losses on foreground-probability maps and the unlabeled-weight ramp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace sparseseg {

inline constexpr double kProbEpsilon = 1e-7;

struct SemiLossConfig {
    double gamma = 1.0;
    double sigma = 1.0;
    double alpha_f = 3.0;
    int K1 = 50;
    int K2 = 100;
    bool dice_per_image = true;

    void validate() const {
        if (!(K1 < K2)) throw std::invalid_argument("SemiLossConfig: K1 must be < K2");
        if (!(alpha_f > 0.0)) throw std::invalid_argument("SemiLossConfig: alpha_f must be > 0");
        if (!(sigma > 0.0)) throw std::invalid_argument("SemiLossConfig: sigma must be > 0");
        if (gamma < 0.0) throw std::invalid_argument("SemiLossConfig: gamma must be >= 0");
    }
};

struct TargetLossConfig {
    double gamma_certain = 1.0;
    double gamma_uncertain = 0.1;
    double beta = 0.5;
    double sigma = 1.0;
    bool dice_per_image = true;

    void validate() const {
        if (gamma_certain < 0.0 || gamma_uncertain < 0.0 || beta < 0.0)
            throw std::invalid_argument("TargetLossConfig: weights must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const SemiLossConfig& c) {
    j = nlohmann::json{{"gamma", c.gamma}, {"sigma", c.sigma}, {"alpha_f", c.alpha_f},
                       {"K1", c.K1},       {"K2", c.K2},       {"dice_per_image", c.dice_per_image}};
}
inline void from_json(const nlohmann::json& j, SemiLossConfig& c) {
    c.gamma = j.value("gamma", c.gamma);
    c.sigma = j.value("sigma", c.sigma);
    c.alpha_f = j.value("alpha_f", c.alpha_f);
    c.K1 = j.value("K1", c.K1);
    c.K2 = j.value("K2", c.K2);
    c.dice_per_image = j.value("dice_per_image", c.dice_per_image);
}
inline void to_json(nlohmann::json& j, const TargetLossConfig& c) {
    j = nlohmann::json{{"gamma_certain", c.gamma_certain}, {"gamma_uncertain", c.gamma_uncertain},
                       {"beta", c.beta}, {"sigma", c.sigma}, {"dice_per_image", c.dice_per_image}};
}
inline void from_json(const nlohmann::json& j, TargetLossConfig& c) {
    c.gamma_certain = j.value("gamma_certain", c.gamma_certain);
    c.gamma_uncertain = j.value("gamma_uncertain", c.gamma_uncertain);
    c.beta = j.value("beta", c.beta);
    c.sigma = j.value("sigma", c.sigma);
    c.dice_per_image = j.value("dice_per_image", c.dice_per_image);
}

namespace detail {
template <class T>
void check_same_size(std::span<const T> pred, std::span<const std::uint8_t> target) {
    if (pred.size() != target.size()) throw std::invalid_argument("loss: prediction/target shape mismatch");
}
}  // namespace detail

/// 1 - (2 sum(p t) + sigma) / (sum p + sum t + sigma).
template <class T>
double dice_loss(std::span<const T> pred, std::span<const std::uint8_t> target, double sigma = 1.0) {
    detail::check_same_size(pred, target);
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<double>(pred[i]) * target[i];
        sp += pred[i];
        st += target[i];
    }
    return 1.0 - (2.0 * inter + sigma) / (sp + st + sigma);
}

/// Adds scale * d(dice_loss)/d(pred) into grad.
template <class T>
void dice_loss_grad(std::span<const T> pred, std::span<const std::uint8_t> target, double sigma, double scale,
                    std::span<T> grad) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        inter += static_cast<double>(pred[i]) * target[i];
        sp += pred[i];
        st += target[i];
    }
    const double den = sp + st + sigma;
    const double num = 2.0 * inter + sigma;
    for (std::size_t i = 0; i < pred.size(); ++i)
        grad[i] += static_cast<T>(scale * -(2.0 * target[i] * den - num) / (den * den));
}

/// Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].
template <class T>
double ce_loss(std::span<const T> pred, std::span<const std::uint8_t> target, double eps = kProbEpsilon) {
    detail::check_same_size(pred, target);
    if (pred.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), eps, 1.0 - eps);
        sum -= target[i] ? std::log(p) : std::log(1.0 - p);
    }
    return sum / static_cast<double>(pred.size());
}

template <class T>
void ce_loss_grad(std::span<const T> pred, std::span<const std::uint8_t> target, double scale, std::span<T> grad,
                  double eps = kProbEpsilon) {
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = pred[i];
        if (p < eps || p > 1.0 - eps) continue;  // clamp is flat there
        grad[i] += static_cast<T>(scale * inv_n * (target[i] ? -1.0 / p : 1.0 / (1.0 - p)));
    }
}

/// Unlabeled-term weight: 0 before K1, linear ramp to alpha_f at K2, alpha_f after.
inline double alpha_schedule(int epoch, const SemiLossConfig& cfg) {
    if (epoch < cfg.K1) return 0.0;
    if (epoch >= cfg.K2) return cfg.alpha_f;
    return cfg.alpha_f * static_cast<double>(epoch - cfg.K1) / static_cast<double>(cfg.K2 - cfg.K1);
}

/// A stack of equally sized probability maps and their binary targets.
template <class T>
struct SliceBatch {
    std::span<const T> prob;
    std::span<const std::uint8_t> target;
    std::size_t pixels = 0;

    std::size_t count() const { return pixels == 0 ? 0 : prob.size() / pixels; }
    bool empty() const { return count() == 0; }
    std::span<const T> prob_at(std::size_t i) const { return prob.subspan(i * pixels, pixels); }
    std::span<const std::uint8_t> target_at(std::size_t i) const { return target.subspan(i * pixels, pixels); }
};

/// Dice + gamma * CE over a batch. Dice is averaged per image or pooled over the
/// whole batch; CE is the pixel mean over the batch. Empty batches contribute 0.
/// When `grad` is non-empty, adds scale * d(term)/d(prob) into it.
template <class T>
double dice_ce_term(const SliceBatch<T>& b, double gamma, double sigma, bool per_image, double scale = 1.0,
                    std::span<T> grad = {}) {
    if (b.empty()) return 0.0;
    detail::check_same_size(b.prob, b.target);
    const std::size_t n = b.count();
    double dice = 0.0;
    if (per_image) {
        for (std::size_t i = 0; i < n; ++i) {
            dice += dice_loss(b.prob_at(i), b.target_at(i), sigma);
            if (!grad.empty())
                dice_loss_grad(b.prob_at(i), b.target_at(i), sigma, scale / static_cast<double>(n),
                               grad.subspan(i * b.pixels, b.pixels));
        }
        dice /= static_cast<double>(n);
    } else {
        dice = dice_loss(b.prob, b.target, sigma);
        if (!grad.empty()) dice_loss_grad(b.prob, b.target, sigma, scale, grad);
    }
    const double ce = ce_loss(b.prob, b.target);
    if (!grad.empty() && gamma != 0.0) ce_loss_grad(b.prob, b.target, scale * gamma, grad);
    return dice + gamma * ce;
}

struct SemiLossValue {
    double labeled = 0.0;
    double unlabeled = 0.0;
    double alpha = 0.0;
    double total = 0.0;
};

/// [Dice + gamma CE](labeled) + alpha(t) [Dice + gamma CE](pseudo-labeled).
template <class T>
SemiLossValue semi_loss(const SliceBatch<T>& labeled, const SliceBatch<T>& pseudo, int epoch,
                        const SemiLossConfig& cfg, std::span<T> grad_labeled = {}, std::span<T> grad_pseudo = {}) {
    if (labeled.empty() && pseudo.empty()) throw std::invalid_argument("semi_loss: both batches are empty");
    SemiLossValue v;
    v.alpha = alpha_schedule(epoch, cfg);
    v.labeled = dice_ce_term(labeled, cfg.gamma, cfg.sigma, cfg.dice_per_image, 1.0, grad_labeled);
    v.unlabeled = dice_ce_term(pseudo, cfg.gamma, cfg.sigma, cfg.dice_per_image, v.alpha,
                               v.alpha == 0.0 ? std::span<T>{} : grad_pseudo);
    v.total = v.labeled + v.alpha * v.unlabeled;
    return v;
}

struct TargetLossValue {
    double certain = 0.0;
    double uncertain = 0.0;
    double total = 0.0;
};

/// L_certain + beta * L_uncertain.
///   prob / y_certain / y_uncertain: `count` stacked maps of `pixels` each
///   is_central: one flag per map; central maps carry the manual label in
///   y_certain and must have an empty y_uncertain.
/// The uncertain term is evaluated on non-central maps only.
template <class T>
TargetLossValue target_loss(std::span<const T> prob, std::span<const std::uint8_t> y_certain,
                            std::span<const std::uint8_t> is_central, std::span<const std::uint8_t> y_uncertain,
                            std::size_t pixels, const TargetLossConfig& cfg, std::span<T> grad = {}) {
    if (prob.size() != y_certain.size() || prob.size() != y_uncertain.size())
        throw std::invalid_argument("target_loss: shape mismatch");
    if (pixels == 0 || prob.size() % pixels != 0) throw std::invalid_argument("target_loss: bad pixel count");
    const std::size_t n = prob.size() / pixels;
    if (is_central.size() != n) throw std::invalid_argument("target_loss: one central flag per slice required");

    std::vector<T> unc_prob;
    std::vector<std::uint8_t> unc_target;
    std::vector<std::size_t> unc_index;
    for (std::size_t i = 0; i < n; ++i) {
        const auto u = y_uncertain.subspan(i * pixels, pixels);
        if (is_central[i]) {
            if (std::any_of(u.begin(), u.end(), [](std::uint8_t v) { return v != 0; }))
                throw std::invalid_argument("target_loss: uncertain labels supplied for a central slice");
            continue;
        }
        const auto p = prob.subspan(i * pixels, pixels);
        unc_prob.insert(unc_prob.end(), p.begin(), p.end());
        unc_target.insert(unc_target.end(), u.begin(), u.end());
        unc_index.push_back(i);
    }

    TargetLossValue v;
    SliceBatch<T> cert{prob, y_certain, pixels};
    v.certain = dice_ce_term(cert, cfg.gamma_certain, cfg.sigma, cfg.dice_per_image, 1.0, grad);

    SliceBatch<T> unc{unc_prob, unc_target, pixels};
    std::vector<T> unc_grad(grad.empty() || cfg.beta == 0.0 ? 0 : unc_prob.size(), T(0));
    v.uncertain = dice_ce_term(unc, cfg.gamma_uncertain, cfg.sigma, cfg.dice_per_image, cfg.beta,
                               std::span<T>(unc_grad));
    if (!unc_grad.empty()) {
        for (std::size_t k = 0; k < unc_index.size(); ++k)
            for (std::size_t j = 0; j < pixels; ++j) grad[unc_index[k] * pixels + j] += unc_grad[k * pixels + j];
    }
    v.total = v.certain + cfg.beta * v.uncertain;
    return v;
}

}  // namespace sparseseg
