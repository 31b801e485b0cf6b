#pragma once

// U-shaped 2D network: a contracting path that doubles the kernel count at
// every down-sampling step, an expanding path of learned 2x up-sampling
// (halving the features) plus skip concatenation, zero-padded 3x3
// convolutions each followed by batch normalization, and a 1x1 head.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "layers.hpp"
#include "tensor.hpp"

namespace sparseseg {

struct SegNetConfig {
    int in_channels = 1;
    int base_kernels = 16;
    int depth = 4;
    int out_channels = 2;
    bool use_batch_norm = true;
    bool zero_init_head = false;  // registration heads start at the identity transform

    static SegNetConfig segmentation() { return {}; }
    static SegNetConfig registration() {
        SegNetConfig c;
        c.in_channels = 2;
        c.out_channels = 2;
        c.zero_init_head = true;
        return c;
    }

    int divisor() const { return 1 << depth; }
    bool operator==(const SegNetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const SegNetConfig& c) {
    j = nlohmann::json{{"in_channels", c.in_channels},   {"base_kernels", c.base_kernels},
                       {"depth", c.depth},               {"out_channels", c.out_channels},
                       {"use_batch_norm", c.use_batch_norm}, {"zero_init_head", c.zero_init_head},
                       {"padding", "zero"}};
}

inline void from_json(const nlohmann::json& j, SegNetConfig& c) {
    c.in_channels = j.value("in_channels", c.in_channels);
    c.base_kernels = j.value("base_kernels", c.base_kernels);
    c.depth = j.value("depth", c.depth);
    c.out_channels = j.value("out_channels", c.out_channels);
    c.use_batch_norm = j.value("use_batch_norm", c.use_batch_norm);
    c.zero_init_head = j.value("zero_init_head", c.zero_init_head);
}

template <class T>
class UNet {
public:
    struct Block {
        Conv2d<T> conv;
        BatchNorm2d<T> bn;
        bool norm = true;
    };

    struct BlockCache {
        typename BatchNorm2d<T>::Cache bn;
        Tensor<T> out;  // post-ReLU activation
    };

    /// Activations recorded by a forward pass, consumed by backward().
    struct Tape {
        Tensor<T> input;
        std::vector<BlockCache> blocks;   // 2 per level: encoder, bottleneck, decoder
        std::vector<Tensor<T>> pooled;    // encoder outputs after pooling
        std::vector<std::vector<std::uint8_t>> argmax;
        std::vector<Tensor<T>> up;        // up-sampled features per decoder level
        std::vector<Tensor<T>> cat;       // concatenated decoder inputs
        Tensor<T> logits;
    };

    UNet() = default;

    explicit UNet(SegNetConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
        if (cfg.depth < 1 || cfg.base_kernels < 1 || cfg.in_channels < 1 || cfg.out_channels < 1)
            throw std::invalid_argument("SegNetConfig: depth, kernels and channels must be positive");
        const bool bn = cfg.use_batch_norm;
        auto make_block = [&](int in, int out) {
            Block b;
            b.norm = bn;
            b.conv = Conv2d<T>(store_, in, out, 3, !bn);
            if (bn) b.bn = BatchNorm2d<T>(store_, out);
            return b;
        };
        int in = cfg.in_channels;
        for (int l = 0; l <= cfg.depth; ++l) {
            const int ch = width(l);
            blocks_.push_back(make_block(in, ch));
            blocks_.push_back(make_block(ch, ch));
            in = ch;
        }
        for (int l = cfg.depth - 1; l >= 0; --l) {
            ups_.emplace_back(store_, width(l + 1), width(l));
            blocks_.push_back(make_block(2 * width(l), width(l)));
            blocks_.push_back(make_block(width(l), width(l)));
        }
        head_ = Conv2d<T>(store_, width(0), cfg.out_channels, 1, true);
        initialize(seed);
    }

    const SegNetConfig& config() const { return cfg_; }
    ParamStore<T>& store() { return store_; }
    const ParamStore<T>& store() const { return store_; }
    std::size_t parameter_count() const { return store_.size(); }
    const Conv2d<T>& head() const { return head_; }

    void zero_grad() { store_.zero_grad(); }

    /// He (fan-in) initialization; zero head when configured.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (const auto& b : blocks_) b.conv.init_he(store_, rng);
        for (const auto& u : ups_) u.init_he(store_, rng);
        if (cfg_.zero_init_head) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(head_.cout) * head_.patch(); ++i)
                store_.values[head_.w_off + i] = T(0);
        } else {
            head_.init_he(store_, rng, 1.0);
        }
        for (int o = 0; o < head_.cout; ++o) store_.values[head_.b_off + o] = T(0);
    }

    void check_input(const Tensor<T>& x) const {
        if (x.c != cfg_.in_channels) throw std::invalid_argument("UNet: input channel count mismatch");
        if (x.h % cfg_.divisor() != 0 || x.w % cfg_.divisor() != 0)
            throw std::invalid_argument("UNet: spatial size must be divisible by 2^depth");
    }

    /// Training-mode pass: batch statistics, running statistics updated.
    const Tensor<T>& forward_train(const Tensor<T>& x, Tape& tape, bool update_running = true) {
        return run(x, tape, true, update_running ? &store_.buffers : nullptr);
    }

    /// Inference-mode pass using running statistics; weights untouched.
    const Tensor<T>& forward_eval(const Tensor<T>& x, Tape& tape) const {
        return run(x, tape, false, nullptr);
    }

    Tensor<T> predict(const Tensor<T>& x) const {
        Tape tape;
        return forward_eval(x, tape);
    }

    /// Accumulates parameter gradients for d(loss)/d(logits) = dlogits.
    /// Valid after forward_train (batch-stat normalization).
    void backward(const Tape& tape, const Tensor<T>& dlogits) {
        const int depth = cfg_.depth;
        Tensor<T> g;
        const Tensor<T>& head_in = tape.blocks.back().out;
        head_.backward(store_, head_in, dlogits, &g);

        std::vector<Tensor<T>> skip_grads(static_cast<std::size_t>(depth));
        for (int d = depth - 1; d >= 0; --d) {
            const int l = depth - 1 - d;
            const std::size_t b0 = static_cast<std::size_t>(2 * (depth + 1) + 2 * d);
            g = block_backward(b0 + 1, tape.blocks[b0].out, tape.blocks[b0 + 1], g);
            g = block_backward(b0, tape.cat[d], tape.blocks[b0], g);
            Tensor<T> gskip, gup;
            split_channels(g, width(l), gskip, gup);
            skip_grads[l] = std::move(gskip);
            const Tensor<T>& below = tape.blocks[static_cast<std::size_t>(2 * depth + 2 * d + 1)].out;
            ups_[d].backward(store_, below, gup, g);
        }
        // bottleneck and encoder
        for (int l = depth; l >= 0; --l) {
            const std::size_t b1 = static_cast<std::size_t>(2 * l);
            if (l < depth) {
                Tensor<T> gp;
                maxpool2_backward(g, tape.argmax[l], tape.blocks[b1 + 1].out.h, tape.blocks[b1 + 1].out.w, gp);
                for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += skip_grads[l].data[i];
                g = std::move(gp);
            }
            const Tensor<T>& in1 = l == 0 ? tape.input : tape.pooled[static_cast<std::size_t>(l - 1)];
            g = block_backward(b1 + 1, tape.blocks[b1].out, tape.blocks[b1 + 1], g);
            g = block_backward(b1, in1, tape.blocks[b1], g, l > 0);
        }
    }

private:
    int width(int level) const { return cfg_.base_kernels << level; }

    void block_forward(std::size_t idx, const Tensor<T>& x, BlockCache& cache, bool train,
                       std::vector<T>* running) const {
        const Block& b = blocks_[idx];
        Tensor<T> z;
        b.conv.forward(store_, x, z);
        if (b.norm) {
            if (train) {
                b.bn.forward_train(store_, z, cache.out, cache.bn, running);
            } else {
                b.bn.forward_eval(store_, z, cache.out);
            }
        } else {
            cache.out = z;
        }
        relu_inplace(cache.out);
    }

    Tensor<T> block_backward(std::size_t idx, const Tensor<T>& x, const BlockCache& cache, Tensor<T> g,
                             bool need_dx = true) {
        const Block& b = blocks_[idx];
        relu_backward(cache.out, g);
        if (b.norm) b.bn.backward(store_, cache.bn, g);
        Tensor<T> dx;
        b.conv.backward(store_, x, g, need_dx ? &dx : nullptr);
        return dx;
    }

    const Tensor<T>& run(const Tensor<T>& x, Tape& tape, bool train, std::vector<T>* running) const {
        check_input(x);
        const int depth = cfg_.depth;
        tape.input = x;
        tape.blocks.assign(blocks_.size(), BlockCache{});
        tape.pooled.assign(static_cast<std::size_t>(depth), Tensor<T>{});
        tape.argmax.assign(static_cast<std::size_t>(depth), {});
        tape.up.assign(static_cast<std::size_t>(depth), Tensor<T>{});
        tape.cat.assign(static_cast<std::size_t>(depth), Tensor<T>{});

        const Tensor<T>* cur = &tape.input;
        for (int l = 0; l <= depth; ++l) {
            const std::size_t b1 = static_cast<std::size_t>(2 * l);
            block_forward(b1, *cur, tape.blocks[b1], train, running);
            block_forward(b1 + 1, tape.blocks[b1].out, tape.blocks[b1 + 1], train, running);
            if (l < depth) {
                maxpool2_forward(tape.blocks[b1 + 1].out, tape.pooled[l], tape.argmax[l]);
                cur = &tape.pooled[l];
            }
        }
        std::size_t bi = static_cast<std::size_t>(2 * (depth + 1));
        const Tensor<T>* below = &tape.blocks[bi - 1].out;
        for (int d = 0; d < depth; ++d) {
            const int l = depth - 1 - d;
            ups_[d].forward(store_, *below, tape.up[d]);
            concat_channels(tape.blocks[static_cast<std::size_t>(2 * l + 1)].out, tape.up[d], tape.cat[d]);
            block_forward(bi, tape.cat[d], tape.blocks[bi], train, running);
            block_forward(bi + 1, tape.blocks[bi].out, tape.blocks[bi + 1], train, running);
            below = &tape.blocks[bi + 1].out;
            bi += 2;
        }
        head_.forward(store_, *below, tape.logits);
        return tape.logits;
    }

    SegNetConfig cfg_{};
    ParamStore<T> store_;
    std::vector<Block> blocks_;
    std::vector<UpConv2x2<T>> ups_;
    Conv2d<T> head_;
};

}  // namespace sparseseg
