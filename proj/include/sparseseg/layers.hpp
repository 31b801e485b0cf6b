#pragma once

// Layer primitives with explicit backward passes. Parameters live in a flat
// ParamStore; layers only remember offsets into it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace sparseseg {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct ParamStore {
    std::vector<T> values;
    std::vector<T> grads;
    std::vector<T> buffers;  // non-trainable state (batch-norm running statistics)

    std::size_t allocate(std::size_t count, T fill = T(0)) {
        const std::size_t off = values.size();
        values.resize(off + count, fill);
        grads.resize(off + count, T(0));
        return off;
    }
    std::size_t allocate_buffer(std::size_t count, T fill = T(0)) {
        const std::size_t off = buffers.size();
        buffers.resize(off + count, fill);
        return off;
    }
    void zero_grad() { std::fill(grads.begin(), grads.end(), T(0)); }
    std::size_t size() const { return values.size(); }
};

/// Square-kernel convolution, stride 1, zero padding k/2 (output size == input size).
template <class T>
struct Conv2d {
    int cin = 0, cout = 0, k = 3;
    bool has_bias = true;
    std::size_t w_off = 0, b_off = 0;

    Conv2d() = default;
    Conv2d(ParamStore<T>& store, int in, int out, int kernel, bool bias)
        : cin(in), cout(out), k(kernel), has_bias(bias) {
        w_off = store.allocate(static_cast<std::size_t>(out) * in * kernel * kernel);
        if (bias) b_off = store.allocate(static_cast<std::size_t>(out));
    }

    std::size_t patch() const { return static_cast<std::size_t>(cin) * k * k; }

    template <class Rng>
    void init_he(ParamStore<T>& store, Rng& rng, double gain = 2.0) const {
        std::normal_distribution<double> nd(0.0, std::sqrt(gain / static_cast<double>(patch())));
        for (std::size_t i = 0; i < static_cast<std::size_t>(cout) * patch(); ++i)
            store.values[w_off + i] = static_cast<T>(nd(rng));
    }

    void im2col(const T* x, int h, int w, T* col) const {
        const int pad = k / 2;
        for (int ci = 0; ci < cin; ++ci) {
            const T* src = x + static_cast<std::size_t>(ci) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    T* dst = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * h * w;
                    const int dy = ky - pad;
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    for (int y = 0; y < h; ++y) {
                        T* row = dst + static_cast<std::size_t>(y) * w;
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) {
                            std::fill(row, row + w, T(0));
                            continue;
                        }
                        std::fill(row, row + x0, T(0));
                        const T* srow = src + static_cast<std::size_t>(sy) * w + dx;
                        std::copy(srow + x0, srow + x1, row + x0);
                        std::fill(row + x1, row + w, T(0));
                    }
                }
            }
        }
    }

    void col2im(const T* col, int h, int w, T* dx_out) const {
        const int pad = k / 2;
        for (int ci = 0; ci < cin; ++ci) {
            T* dst = dx_out + static_cast<std::size_t>(ci) * h * w;
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const T* src = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * h * w;
                    const int dy = ky - pad;
                    const int dx = kx - pad;
                    const int x0 = std::max(0, -dx);
                    const int x1 = std::min(w, w - dx);
                    for (int y = 0; y < h; ++y) {
                        const int sy = y + dy;
                        if (sy < 0 || sy >= h) continue;
                        const T* row = src + static_cast<std::size_t>(y) * w;
                        T* drow = dst + static_cast<std::size_t>(sy) * w + dx;
                        for (int xx = x0; xx < x1; ++xx) drow[xx] += row[xx];
                    }
                }
            }
        }
    }

    void forward(const ParamStore<T>& store, const Tensor<T>& x, Tensor<T>& y) const {
        y.resize(x.n, cout, x.h, x.w);
        const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
        Eigen::Map<const RowMat<T>> W(store.values.data() + w_off, cout, static_cast<Eigen::Index>(patch()));
        std::vector<T> col(k == 1 ? 0 : patch() * x.plane());
        for (int i = 0; i < x.n; ++i) {
            const T* cp = x.sample(i);
            if (k != 1) {
                im2col(x.sample(i), x.h, x.w, col.data());
                cp = col.data();
            }
            Eigen::Map<const RowMat<T>> C(cp, static_cast<Eigen::Index>(patch()), hw);
            Eigen::Map<RowMat<T>> Y(y.sample(i), cout, hw);
            Y.noalias() = W * C;
            if (has_bias) {
                for (int o = 0; o < cout; ++o) Y.row(o).array() += store.values[b_off + o];
            }
        }
    }

    /// Accumulates parameter gradients; writes dx when requested.
    void backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) const {
        const Eigen::Index hw = static_cast<Eigen::Index>(x.plane());
        const auto P = static_cast<Eigen::Index>(patch());
        Eigen::Map<const RowMat<T>> W(store.values.data() + w_off, cout, P);
        Eigen::Map<RowMat<T>> dW(store.grads.data() + w_off, cout, P);
        std::vector<T> col(k == 1 ? 0 : patch() * x.plane());
        std::vector<T> dcol(patch() * x.plane());
        if (dx) dx->resize(x.n, x.c, x.h, x.w);
        for (int i = 0; i < x.n; ++i) {
            const T* cp = x.sample(i);
            if (k != 1) {
                im2col(x.sample(i), x.h, x.w, col.data());
                cp = col.data();
            }
            Eigen::Map<const RowMat<T>> C(cp, P, hw);
            Eigen::Map<const RowMat<T>> dY(dy.sample(i), cout, hw);
            dW.noalias() += dY * C.transpose();
            if (has_bias) {
                for (int o = 0; o < cout; ++o) store.grads[b_off + o] += dY.row(o).sum();
            }
            if (dx) {
                if (k == 1) {
                    Eigen::Map<RowMat<T>> dX(dx->sample(i), P, hw);
                    dX.noalias() = W.transpose() * dY;
                } else {
                    Eigen::Map<RowMat<T>> dC(dcol.data(), P, hw);
                    dC.noalias() = W.transpose() * dY;
                    col2im(dcol.data(), x.h, x.w, dx->sample(i));
                }
            }
        }
    }
};

/// Per-channel batch normalization with running statistics for inference.
template <class T>
struct BatchNorm2d {
    int channels = 0;
    std::size_t gamma_off = 0, beta_off = 0, mean_off = 0, var_off = 0;
    double eps = 1e-5;
    double momentum = 0.1;

    struct Cache {
        Tensor<T> xhat;
        std::vector<T> inv_std;
    };

    BatchNorm2d() = default;
    BatchNorm2d(ParamStore<T>& store, int c) : channels(c) {
        gamma_off = store.allocate(static_cast<std::size_t>(c), T(1));
        beta_off = store.allocate(static_cast<std::size_t>(c), T(0));
        mean_off = store.allocate_buffer(static_cast<std::size_t>(c), T(0));
        var_off = store.allocate_buffer(static_cast<std::size_t>(c), T(1));
    }

    /// Batch statistics; blends them into `running` (the store's buffers) when given.
    void forward_train(const ParamStore<T>& store, const Tensor<T>& x, Tensor<T>& y, Cache& cache,
                       std::vector<T>* running) const {
        y.resize(x.n, x.c, x.h, x.w);
        cache.xhat.resize(x.n, x.c, x.h, x.w);
        cache.inv_std.assign(static_cast<std::size_t>(channels), T(0));
        const std::size_t hw = x.plane();
        const double m = static_cast<double>(x.n) * static_cast<double>(hw);
        for (int ch = 0; ch < channels; ++ch) {
            double sum = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) sum += p[j];
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - mean) * (p[j] - mean);
            }
            const double var = sq / m;
            const double inv = 1.0 / std::sqrt(var + eps);
            cache.inv_std[ch] = static_cast<T>(inv);
            const T g = store.values[gamma_off + ch];
            const T b = store.values[beta_off + ch];
            const T tmean = static_cast<T>(mean);
            const T tinv = static_cast<T>(inv);
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.channel(i, ch);
                T* xh = cache.xhat.channel(i, ch);
                T* q = y.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) {
                    xh[j] = (p[j] - tmean) * tinv;
                    q[j] = g * xh[j] + b;
                }
            }
            if (running) {
                const double unbiased = m > 1.0 ? sq / (m - 1.0) : var;
                T& rm = (*running)[mean_off + ch];
                T& rv = (*running)[var_off + ch];
                rm = static_cast<T>((1.0 - momentum) * rm + momentum * mean);
                rv = static_cast<T>((1.0 - momentum) * rv + momentum * unbiased);
            }
        }
    }

    void forward_eval(const ParamStore<T>& store, const Tensor<T>& x, Tensor<T>& y) const {
        y.resize(x.n, x.c, x.h, x.w);
        const std::size_t hw = x.plane();
        for (int ch = 0; ch < channels; ++ch) {
            const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(store.buffers[var_off + ch]) + eps));
            const T scale = store.values[gamma_off + ch] * inv;
            const T shift = store.values[beta_off + ch] - store.buffers[mean_off + ch] * scale;
            for (int i = 0; i < x.n; ++i) {
                const T* p = x.channel(i, ch);
                T* q = y.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) q[j] = p[j] * scale + shift;
            }
        }
    }

    /// dy is overwritten in place with dx.
    void backward(ParamStore<T>& store, const Cache& cache, Tensor<T>& dy) const {
        const std::size_t hw = dy.plane();
        const double m = static_cast<double>(dy.n) * static_cast<double>(hw);
        for (int ch = 0; ch < channels; ++ch) {
            double sum_dy = 0.0;
            double sum_dy_xhat = 0.0;
            for (int i = 0; i < dy.n; ++i) {
                const T* g = dy.channel(i, ch);
                const T* xh = cache.xhat.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) {
                    sum_dy += g[j];
                    sum_dy_xhat += static_cast<double>(g[j]) * xh[j];
                }
            }
            store.grads[gamma_off + ch] += static_cast<T>(sum_dy_xhat);
            store.grads[beta_off + ch] += static_cast<T>(sum_dy);
            const double gamma = store.values[gamma_off + ch];
            const double k = gamma * cache.inv_std[ch] / m;
            const T a = static_cast<T>(k * m);
            const T c0 = static_cast<T>(k * sum_dy);
            const T c1 = static_cast<T>(k * sum_dy_xhat);
            for (int i = 0; i < dy.n; ++i) {
                T* g = dy.channel(i, ch);
                const T* xh = cache.xhat.channel(i, ch);
                for (std::size_t j = 0; j < hw; ++j) g[j] = a * g[j] - c0 - xh[j] * c1;
            }
        }
    }
};

template <class T>
void relu_inplace(Tensor<T>& x) {
    for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// Masks the gradient by the post-activation output.
template <class T>
void relu_backward(const Tensor<T>& out, Tensor<T>& grad) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (!(out.data[i] > T(0))) grad.data[i] = T(0);
}

/// 2x2 max pooling, stride 2. Ties resolve to the first element in raster order.
template <class T>
void maxpool2_forward(const Tensor<T>& x, Tensor<T>& y, std::vector<std::uint8_t>& argmax) {
    const int oh = x.h / 2;
    const int ow = x.w / 2;
    y.resize(x.n, x.c, oh, ow);
    argmax.assign(y.size(), 0);
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i) {
        for (int ch = 0; ch < x.c; ++ch) {
            const T* p = x.channel(i, ch);
            for (int yy = 0; yy < oh; ++yy) {
                for (int xx = 0; xx < ow; ++xx, ++o) {
                    const T* base = p + static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
                    T best = base[0];
                    std::uint8_t arg = 0;
                    const T cand[3] = {base[1], base[x.w], base[x.w + 1]};
                    for (std::uint8_t k = 0; k < 3; ++k) {
                        if (cand[k] > best) {
                            best = cand[k];
                            arg = static_cast<std::uint8_t>(k + 1);
                        }
                    }
                    y.data[o] = best;
                    argmax[o] = arg;
                }
            }
        }
    }
}

template <class T>
void maxpool2_backward(const Tensor<T>& dy, const std::vector<std::uint8_t>& argmax, int h, int w, Tensor<T>& dx) {
    dx.resize(dy.n, dy.c, h, w);
    std::size_t o = 0;
    for (int i = 0; i < dy.n; ++i) {
        for (int ch = 0; ch < dy.c; ++ch) {
            T* p = dx.channel(i, ch);
            for (int yy = 0; yy < dy.h; ++yy) {
                for (int xx = 0; xx < dy.w; ++xx, ++o) {
                    const int a = argmax[o];
                    p[static_cast<std::size_t>(2 * yy + a / 2) * w + 2 * xx + a % 2] += dy.data[o];
                }
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution (learned up-sampling). Weights [cin][cout][2][2].
template <class T>
struct UpConv2x2 {
    int cin = 0, cout = 0;
    std::size_t w_off = 0, b_off = 0;

    UpConv2x2() = default;
    UpConv2x2(ParamStore<T>& store, int in, int out) : cin(in), cout(out) {
        w_off = store.allocate(static_cast<std::size_t>(in) * out * 4);
        b_off = store.allocate(static_cast<std::size_t>(out));
    }

    template <class Rng>
    void init_he(ParamStore<T>& store, Rng& rng) const {
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(cin)));
        for (std::size_t i = 0; i < static_cast<std::size_t>(cin) * cout * 4; ++i)
            store.values[w_off + i] = static_cast<T>(nd(rng));
    }

    void forward(const ParamStore<T>& store, const Tensor<T>& x, Tensor<T>& y) const {
        y.resize(x.n, cout, x.h * 2, x.w * 2);
        const auto hw = static_cast<Eigen::Index>(x.plane());
        Eigen::Map<const RowMat<T>> W(store.values.data() + w_off, cin, cout * 4);
        RowMat<T> Z(cout * 4, hw);
        for (int i = 0; i < x.n; ++i) {
            Eigen::Map<const RowMat<T>> X(x.sample(i), cin, hw);
            Z.noalias() = W.transpose() * X;
            for (int o = 0; o < cout; ++o) {
                T* dst = y.channel(i, o);
                const T b = store.values[b_off + o];
                for (int q = 0; q < 4; ++q) {
                    const int dy = q / 2;
                    const int dx = q % 2;
                    for (int yy = 0; yy < x.h; ++yy)
                        for (int xx = 0; xx < x.w; ++xx)
                            dst[static_cast<std::size_t>(2 * yy + dy) * y.w + 2 * xx + dx] =
                                Z(o * 4 + q, static_cast<Eigen::Index>(yy) * x.w + xx) + b;
                }
            }
        }
    }

    void backward(ParamStore<T>& store, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) const {
        dx.resize(x.n, x.c, x.h, x.w);
        const auto hw = static_cast<Eigen::Index>(x.plane());
        Eigen::Map<const RowMat<T>> W(store.values.data() + w_off, cin, cout * 4);
        Eigen::Map<RowMat<T>> dW(store.grads.data() + w_off, cin, cout * 4);
        RowMat<T> dZ(cout * 4, hw);
        for (int i = 0; i < x.n; ++i) {
            for (int o = 0; o < cout; ++o) {
                const T* src = dy.channel(i, o);
                T bsum = T(0);
                for (int q = 0; q < 4; ++q) {
                    const int oy = q / 2;
                    const int ox = q % 2;
                    for (int yy = 0; yy < x.h; ++yy)
                        for (int xx = 0; xx < x.w; ++xx) {
                            const T g = src[static_cast<std::size_t>(2 * yy + oy) * dy.w + 2 * xx + ox];
                            dZ(o * 4 + q, static_cast<Eigen::Index>(yy) * x.w + xx) = g;
                            bsum += g;
                        }
                }
                store.grads[b_off + o] += bsum;
            }
            Eigen::Map<const RowMat<T>> X(x.sample(i), cin, hw);
            dW.noalias() += X * dZ.transpose();
            Eigen::Map<RowMat<T>> dX(dx.sample(i), cin, hw);
            dX.noalias() = W * dZ;
        }
    }
};

template <class T>
void concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out) {
    out.resize(a.n, a.c + b.c, a.h, a.w);
    for (int i = 0; i < a.n; ++i) {
        std::copy(a.sample(i), a.sample(i) + a.sample_stride(), out.sample(i));
        std::copy(b.sample(i), b.sample(i) + b.sample_stride(), out.sample(i) + a.sample_stride());
    }
}

template <class T>
void split_channels(const Tensor<T>& in, int first_c, Tensor<T>& a, Tensor<T>& b) {
    a.resize(in.n, first_c, in.h, in.w);
    b.resize(in.n, in.c - first_c, in.h, in.w);
    for (int i = 0; i < in.n; ++i) {
        std::copy(in.sample(i), in.sample(i) + a.sample_stride(), a.sample(i));
        std::copy(in.sample(i) + a.sample_stride(), in.sample(i) + in.sample_stride(), b.sample(i));
    }
}

}  // namespace sparseseg
