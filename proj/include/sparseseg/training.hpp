#pragma once

// Glue between images and the network: batching, two-class softmax,
// probability-gradient back-propagation to logits, argmax labelling, padding.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "tensor.hpp"
#include "unet.hpp"
#include "volume.hpp"

namespace sparseseg {

/// Foreground probability softmax(z)[1] = 1 / (1 + exp(z0 - z1)) per pixel.
template <class T>
std::vector<T> foreground_probability(const Tensor<T>& logits) {
    std::vector<T> p(static_cast<std::size_t>(logits.n) * logits.plane());
    for (int i = 0; i < logits.n; ++i) {
        const T* z0 = logits.channel(i, 0);
        const T* z1 = logits.channel(i, 1);
        T* out = p.data() + i * logits.plane();
        for (std::size_t j = 0; j < logits.plane(); ++j)
            out[j] = static_cast<T>(1.0 / (1.0 + std::exp(static_cast<double>(z0[j]) - static_cast<double>(z1[j]))));
    }
    return p;
}

/// Chain rule through the two-class softmax: dL/dz1 = dL/dp p(1-p), dL/dz0 = -dL/dz1.
template <class T>
Tensor<T> logits_grad_from_prob(const Tensor<T>& logits, std::span<const T> prob, std::span<const T> dprob) {
    Tensor<T> g(logits.n, logits.c, logits.h, logits.w);
    for (int i = 0; i < logits.n; ++i) {
        T* g0 = g.channel(i, 0);
        T* g1 = g.channel(i, 1);
        const std::size_t base = i * logits.plane();
        for (std::size_t j = 0; j < logits.plane(); ++j) {
            const T p = prob[base + j];
            const T d = dprob[base + j] * p * (T(1) - p);
            g1[j] = d;
            g0[j] = -d;
        }
    }
    return g;
}

/// Per-pixel argmax over two channels; exact ties go to channel 0.
template <class T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits, int sample) {
    std::vector<std::uint8_t> out(logits.plane());
    const T* z0 = logits.channel(sample, 0);
    const T* z1 = logits.channel(sample, 1);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = z1[j] > z0[j] ? 1 : 0;
    return out;
}

/// Stacks 2D images into a (B, 1, H, W) tensor.
inline Tensor<float> stack_images(std::span<const Image2D* const> images) {
    const int h = images.front()->h;
    const int w = images.front()->w;
    Tensor<float> t(static_cast<int>(images.size()), 1, h, w);
    for (std::size_t i = 0; i < images.size(); ++i)
        std::copy(images[i]->pixels.begin(), images[i]->pixels.end(), t.sample(static_cast<int>(i)));
    return t;
}

inline int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

/// Reflect-pads every plane of `x` on the bottom/right up to multiples of `divisor`.
template <class T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& x, int divisor) {
    const int h = (x.h + divisor - 1) / divisor * divisor;
    const int w = (x.w + divisor - 1) / divisor * divisor;
    if (h == x.h && w == x.w) return x;
    Tensor<T> out(x.n, x.c, h, w);
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx)
                    out.at(i, c, y, xx) = x.at(i, c, reflect_index(y, x.h), reflect_index(xx, x.w));
    return out;
}

template <class T>
Tensor<T> crop(const Tensor<T>& x, int h, int w) {
    if (x.h == h && x.w == w) return x;
    Tensor<T> out(x.n, x.c, h, w);
    for (int i = 0; i < x.n; ++i)
        for (int c = 0; c < x.c; ++c)
            for (int y = 0; y < h; ++y)
                std::copy(x.channel(i, c) + static_cast<std::size_t>(y) * x.w,
                          x.channel(i, c) + static_cast<std::size_t>(y) * x.w + w,
                          out.channel(i, c) + static_cast<std::size_t>(y) * w);
    return out;
}

/// Inference with reflect padding to the network's divisor, cropped back.
template <class T>
Tensor<T> predict_padded(const UNet<T>& net, const Tensor<T>& x) {
    const Tensor<T> padded = reflect_pad_to_multiple(x, net.config().divisor());
    return crop(net.predict(padded), x.h, x.w);
}

/// All slices of a volume as a (N, 1, H, W) tensor.
inline Tensor<float> volume_tensor(const Volume& v) {
    const auto& s = v.shape();
    Tensor<float> t(s.n, 1, s.h, s.w);
    std::copy(v.voxels().begin(), v.voxels().end(), t.data.begin());
    return t;
}

/// Deterministic in-place shuffle.
template <class T>
void shuffle_with(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(items[i - 1], items[pick(rng)]);
    }
}

/// Splits [0, n) into consecutive batches.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t b = 0; b < n; b += batch) out.emplace_back(b, std::min(n, b + batch));
    return out;
}

}  // namespace sparseseg
