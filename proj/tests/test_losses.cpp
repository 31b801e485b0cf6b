#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include <sparseseg/losses.hpp>

#include "grad_check.hpp"
#include "loss_refs.hpp"

using namespace sparseseg;

using lossref::Lab;
using lossref::ref_term;
using lossref::Vec;

namespace {

Vec random_probs(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.02, 0.98);
    Vec v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

Lab random_labels(std::size_t n, std::mt19937_64& rng, double p = 0.4) {
    std::bernoulli_distribution b(p);
    Lab v(n);
    for (auto& x : v) x = b(rng);
    return v;
}

}  // namespace

TEST(Dice, AnalyticExamples) {
    const Lab t{1, 0, 1, 1, 0, 0};
    const Vec p(t.begin(), t.end());
    EXPECT_DOUBLE_EQ(dice_loss<double>(p, t), 0.0);
    EXPECT_DOUBLE_EQ(dice_loss<double>(Vec(100, 0.0), Lab(100, 0)), 0.0);
    EXPECT_DOUBLE_EQ(dice_loss<double>(Vec(100, 1.0), Lab(100, 0)), 1.0 - 1.0 / 101.0);
    EXPECT_THROW(dice_loss<double>(Vec(3, 0.0), Lab(4, 0)), std::invalid_argument);
}

TEST(CrossEntropy, AnalyticExamples) {
    EXPECT_LT(ce_loss<double>(Vec{1, 0, 1}, Lab{1, 0, 1}), 1e-6);
    EXPECT_NEAR(ce_loss<double>(Vec(10, 0.5), Lab{1, 0, 1, 1, 0, 0, 0, 1, 0, 1}), std::log(2.0), 1e-15);
    EXPECT_NEAR(ce_loss<double>(Vec{0.9, 0.9, 0.1, 0.1}, Lab{1, 1, 0, 0}), -std::log(0.9), 1e-15);
    EXPECT_GE(ce_loss<double>(Vec{0.3, 0.7}, Lab{1, 0}), 0.0);
}

TEST(Losses, PermutationInvariant) {
    std::mt19937_64 rng(3);
    auto p = random_probs(64, rng);
    auto t = random_labels(64, rng);
    const double d = dice_loss<double>(p, t), c = ce_loss<double>(p, t);
    std::vector<std::size_t> idx(64);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    Vec p2(64);
    Lab t2(64);
    for (std::size_t i = 0; i < 64; ++i) {
        p2[i] = p[idx[i]];
        t2[i] = t[idx[i]];
    }
    EXPECT_NEAR(dice_loss<double>(p2, t2), d, 1e-14);
    EXPECT_NEAR(ce_loss<double>(p2, t2), c, 1e-14);
}

TEST(AlphaSchedule, Breakpoints) {
    const SemiLossConfig cfg;
    EXPECT_EQ(alpha_schedule(0, cfg), 0.0);
    EXPECT_EQ(alpha_schedule(49, cfg), 0.0);
    EXPECT_EQ(alpha_schedule(50, cfg), 0.0);
    EXPECT_EQ(alpha_schedule(75, cfg), 1.5);
    EXPECT_EQ(alpha_schedule(100, cfg), 3.0);
    EXPECT_EQ(alpha_schedule(10000, cfg), 3.0);
    double prev = 0.0;
    for (int t = 0; t < 200; ++t) {
        const double a = alpha_schedule(t, cfg);
        EXPECT_GE(a, prev);
        EXPECT_LE(a - prev, cfg.alpha_f / (cfg.K2 - cfg.K1) + 1e-15);
        prev = a;
    }
}

TEST(SemiLossConfig, Validation) {
    SemiLossConfig c;
    c.K1 = 100;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.sigma = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.alpha_f = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(SemiLoss, MatchesScalarRecomputation) {
    const std::size_t px = 4;  // 2x2 masks
    const Vec pl{0.9, 0.2, 0.6, 0.1, 0.3, 0.8, 0.7, 0.4};
    const Lab tl{1, 0, 1, 0, 0, 1, 1, 0};
    const Vec pu{0.55, 0.35, 0.15, 0.95};
    const Lab tu{1, 0, 0, 1};
    SemiLossConfig cfg;
    for (int t : {10, 60, 100, 150}) {
        const auto v = semi_loss<double>({pl, tl, px}, {pu, tu, px}, t, cfg);
        const double alpha = t < 50 ? 0.0 : t >= 100 ? 3.0 : 3.0 * (t - 50) / 50.0;
        const double ref = ref_term(pl, tl, px, 1.0, 1.0) + alpha * ref_term(pu, tu, px, 1.0, 1.0);
        EXPECT_NEAR(v.total, ref, 1e-10) << t;
    }
}

TEST(SemiLoss, BeforeK1EqualsLabeledTerm) {
    std::mt19937_64 rng(5);
    const auto pl = random_probs(32, rng), pu = random_probs(48, rng);
    const auto tl = random_labels(32, rng), tu = random_labels(48, rng);
    SemiLossConfig cfg;
    const auto with = semi_loss<double>({pl, tl, 16}, {pu, tu, 16}, 49, cfg);
    const auto without = semi_loss<double>({pl, tl, 16}, {{}, {}, 16}, 49, cfg);
    EXPECT_EQ(with.total, without.total);
    EXPECT_EQ(with.total, with.labeled);
}

TEST(SemiLoss, PerfectPredictionsNearZero) {
    const Lab t{1, 0, 0, 1, 1, 1, 0, 0};
    const Vec p(t.begin(), t.end());
    EXPECT_LT(semi_loss<double>({p, t, 4}, {p, t, 4}, 150, SemiLossConfig{}).total, 1e-5);
}

TEST(SemiLoss, BothEmptyThrows) {
    EXPECT_THROW(semi_loss<double>({{}, {}, 4}, {{}, {}, 4}, 0, SemiLossConfig{}), std::invalid_argument);
}

TEST(SemiLoss, MonotoneInAlpha) {
    std::mt19937_64 rng(8);
    const auto pl = random_probs(16, rng), pu = random_probs(16, rng);
    const auto tl = random_labels(16, rng), tu = random_labels(16, rng);
    double prev = -1;
    for (int t = 40; t <= 120; ++t) {
        const double v = semi_loss<double>({pl, tl, 16}, {pu, tu, 16}, t, SemiLossConfig{}).total;
        EXPECT_GE(v, prev);
        prev = v;
    }
}

TEST(TargetLoss, MatchesScalarRecomputation) {
    // 4x4 slices: one central, two non-central.
    std::mt19937_64 rng(21);
    const std::size_t px = 16;
    const auto p = random_probs(3 * px, rng);
    auto yc = random_labels(3 * px, rng);
    Lab yu = random_labels(3 * px, rng, 0.2);
    for (std::size_t j = 0; j < px; ++j) yu[j] = 0;  // central slice has no uncertain labels
    for (std::size_t j = 0; j < yu.size(); ++j)
        if (yu[j]) yc[j] = 0;  // disjoint, as produced by fusion
    const Lab central{1, 0, 0};
    const TargetLossConfig cfg;
    const auto v = target_loss<double>(p, yc, central, yu, px, cfg);

    const double cert = ref_term(p, yc, px, 1.0, 1.0);
    const double unc = ref_term(Vec(p.begin() + px, p.end()), Lab(yu.begin() + px, yu.end()), px, 0.1, 1.0);
    EXPECT_NEAR(v.certain, cert, 1e-10);
    EXPECT_NEAR(v.uncertain, unc, 1e-10);
    EXPECT_NEAR(v.total, cert + 0.5 * unc, 1e-10);
    EXPECT_DOUBLE_EQ(v.total, v.certain + cfg.beta * v.uncertain);
}

TEST(TargetLoss, BetaZeroIsCertainOnly) {
    std::mt19937_64 rng(4);
    const auto p = random_probs(32, rng);
    const auto yc = random_labels(32, rng), yu = random_labels(32, rng);
    TargetLossConfig cfg;
    cfg.beta = 0.0;
    const Lab central{0, 0};
    const auto v = target_loss<double>(p, yc, central, yu, 16, cfg);
    EXPECT_EQ(v.total, v.certain);
}

TEST(TargetLoss, UncertainMasksDoNotTouchCertainTerm) {
    std::mt19937_64 rng(6);
    const auto p = random_probs(32, rng);
    const auto yc = random_labels(32, rng), yu = random_labels(32, rng);
    const Lab central{0, 0};
    const auto a = target_loss<double>(p, yc, central, yu, 16, TargetLossConfig{});
    const auto b = target_loss<double>(p, yc, central, Lab(32, 0), 16, TargetLossConfig{});
    EXPECT_EQ(a.certain, b.certain);
}

TEST(TargetLoss, EmptyInconsistentSetIsFinite) {
    const Lab yc{1, 1, 0, 0, 0, 0, 0, 0};
    const Vec p{0.9, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    const auto v = target_loss<double>(p, yc, Lab{0, 0}, Lab(8, 0), 4, TargetLossConfig{});
    EXPECT_TRUE(std::isfinite(v.total));
    // Background predicted where the uncertain set is empty: Dice part is sigma/sigma = 0 on slice 2.
    EXPECT_NEAR(dice_loss<double>(Vec(4, 0.0), Lab(4, 0)), 0.0, 0.0);
}

TEST(TargetLoss, UncertainOnCentralSliceThrows) {
    const Lab yu{1, 0, 0, 0};
    EXPECT_THROW(target_loss<double>(Vec(4, 0.5), Lab(4, 0), Lab{1}, yu, 4, TargetLossConfig{}),
                 std::invalid_argument);
}

TEST(LossGradients, MatchFiniteDifferences) {
    std::mt19937_64 rng(99);
    const std::size_t px = 64;  // 8x8
    for (int trial = 0; trial < 3; ++trial) {
        const auto p = random_probs(2 * px, rng);
        const auto t = random_labels(2 * px, rng);
        const auto u = random_labels(2 * px, rng, 0.2);

        auto check = [&](auto value, auto analytic, const char* name) {
            Vec g(p.size(), 0.0);
            analytic(std::span<double>(g));
            const double err = gradcheck::max_rel_error(p, g, value, 1e-5);
            EXPECT_LT(err, 1e-4) << name;
        };
        check([&](const Vec& q) { return dice_loss<double>(q, t); },
              [&](std::span<double> g) { dice_loss_grad<double>(p, t, 1.0, 1.0, g); }, "dice");
        check([&](const Vec& q) { return ce_loss<double>(q, t); },
              [&](std::span<double> g) { ce_loss_grad<double>(p, t, 1.0, g); }, "ce");
        SemiLossConfig sc;
        check(
            [&](const Vec& q) {
                return semi_loss<double>({std::span(q).subspan(0, px), std::span(t).subspan(0, px), px},
                                         {std::span(q).subspan(px), std::span(t).subspan(px), px}, 80, sc)
                    .total;
            },
            [&](std::span<double> g) {
                semi_loss<double>({std::span(p).subspan(0, px), std::span(t).subspan(0, px), px},
                                  {std::span(p).subspan(px), std::span(t).subspan(px), px}, 80, sc, g.subspan(0, px),
                                  g.subspan(px));
            },
            "semi");
        const Lab central{1, 0};
        Lab uu = u;
        std::fill(uu.begin(), uu.begin() + px, 0);
        for (bool per_image : {true, false}) {
            TargetLossConfig tc;
            tc.dice_per_image = per_image;
            check([&](const Vec& q) { return target_loss<double>(q, t, central, uu, px, tc).total; },
                  [&](std::span<double> g) { target_loss<double>(p, t, central, uu, px, tc, g); }, "target");
        }
    }
}
