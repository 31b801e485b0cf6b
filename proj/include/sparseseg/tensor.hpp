#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace sparseseg {

/// Dense NCHW tensor.
template <class T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }

    T* sample(int i) { return data.data() + i * sample_stride(); }
    const T* sample(int i) const { return data.data() + i * sample_stride(); }
    T* channel(int i, int ch) { return sample(i) + ch * plane(); }
    const T* channel(int i, int ch) const { return sample(i) + ch * plane(); }

    T& at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
    T at(int i, int ch, int y, int x) const { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }

    void resize(int n_, int c_, int h_, int w_) {
        n = n_;
        c = c_;
        h = h_;
        w = w_;
        data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0));
    }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(n, c, h, w);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
        return out;
    }
};

}  // namespace sparseseg
