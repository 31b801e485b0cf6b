#pragma once

// Finite-difference check of network parameter gradients.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <sparseseg/unet.hpp>

namespace gradcheck {

using sparseseg::Tensor;
using sparseseg::UNet;

template <class T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Tensor<T> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(nd(rng));
    return t;
}

/// Relative error of d(sum(out * r))/d(theta) for a sample of parameters.
inline double network_grad_error(UNet<double>& net, const Tensor<double>& x, std::mt19937_64& rng,
                                 int samples) {
    UNet<double>::Tape tape;
    const Tensor<double> out = net.forward_train(x, tape, false);
    Tensor<double> r = random_tensor<double>(out.n, out.c, out.h, out.w, rng);
    net.zero_grad();
    net.backward(tape, r);
    const std::vector<double> grads = net.store().grads;

    auto loss = [&]() {
        UNet<double>::Tape t;
        const auto& o = net.forward_train(x, t, false);
        double s = 0.0;
        for (std::size_t i = 0; i < o.data.size(); ++i) s += o.data[i] * r.data[i];
        return s;
    };
    auto& vals = net.store().values;
    std::uniform_int_distribution<std::size_t> pick(0, vals.size() - 1);
    const double h = 1e-5;
    double worst = 0.0;
    for (int k = 0; k < samples; ++k) {
        const std::size_t i = pick(rng);
        const double orig = vals[i];
        vals[i] = orig + h;
        const double up = loss();
        vals[i] = orig - h;
        const double down = loss();
        vals[i] = orig;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-4}));
    }
    return worst;
}

}  // namespace gradcheck
