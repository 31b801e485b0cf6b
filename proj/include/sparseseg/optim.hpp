#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "layers.hpp"

namespace sparseseg {

struct OptimizerSettings {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 4;
    int decay_every = 0;      // epochs between lr halvings; 0 disables
    double decay_factor = 0.5;
    std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const OptimizerSettings& o) {
    j = nlohmann::json{{"lr", o.lr},
                       {"beta1", o.beta1},
                       {"beta2", o.beta2},
                       {"eps", o.eps},
                       {"batch_size", o.batch_size},
                       {"decay_every", o.decay_every},
                       {"decay_factor", o.decay_factor},
                       {"seed", o.seed}};
}
inline void from_json(const nlohmann::json& j, OptimizerSettings& o) {
    o.lr = j.value("lr", o.lr);
    o.beta1 = j.value("beta1", o.beta1);
    o.beta2 = j.value("beta2", o.beta2);
    o.eps = j.value("eps", o.eps);
    o.batch_size = j.value("batch_size", o.batch_size);
    o.decay_every = j.value("decay_every", o.decay_every);
    o.decay_factor = j.value("decay_factor", o.decay_factor);
    o.seed = j.value("seed", o.seed);
}

/// Step decay: lr * factor^floor(epoch / every).
inline double step_lr(const OptimizerSettings& o, int epoch) {
    if (o.decay_every <= 0) return o.lr;
    return o.lr * std::pow(o.decay_factor, epoch / o.decay_every);
}

/// Adaptive-moment optimizer over a flat parameter store.
template <class T>
class Adam {
public:
    Adam() = default;
    Adam(std::size_t n, const OptimizerSettings& s) : s_(s), m_(n, 0.0), v_(n, 0.0) {}

    void step(ParamStore<T>& store, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < store.values.size(); ++i) {
            const double g = store.grads[i];
            m_[i] = s_.beta1 * m_[i] + (1.0 - s_.beta1) * g;
            v_[i] = s_.beta2 * v_[i] + (1.0 - s_.beta2) * g * g;
            const double mhat = m_[i] / c1;
            const double vhat = v_[i] / c2;
            store.values[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + s_.eps));
        }
    }

    long steps() const { return t_; }

private:
    OptimizerSettings s_{};
    std::vector<double> m_, v_;
    long t_ = 0;
};

}  // namespace sparseseg
