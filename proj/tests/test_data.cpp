#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include <sparseseg/io.hpp>
#include <sparseseg/phantom.hpp>
#include <sparseseg/preprocess.hpp>
#include <sparseseg/volume.hpp>

using namespace sparseseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("sparseseg_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Volume, CentralSliceIndex) {
    EXPECT_EQ(central_slice_index(17), 8);
    EXPECT_EQ(central_slice_index(3), 1);
    EXPECT_EQ(central_slice_index(4), 2);
    EXPECT_EQ(central_slice_index(Volume({5, 8, 8}, {1, 1, 1})), 2);
}

TEST(Volume, ValidationRejectsBadInput) {
    EXPECT_THROW(Volume({2, 8, 8}, {1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(Volume({3, 7, 8}, {1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(Volume({3, 8, 8}, {1, 0, 1}), std::invalid_argument);
    std::vector<float> v(3 * 8 * 8, 0.0F);
    v[5] = std::nanf("");
    EXPECT_THROW(Volume({3, 8, 8}, v, {1, 1, 1}), std::invalid_argument);
    EXPECT_THROW(Volume({3, 8, 8}, std::vector<float>(10), {1, 1, 1}), std::invalid_argument);
}

TEST(Volume, SparseAnnotationMustSitOnCentralSlice) {
    Volume v({5, 8, 8}, {1, 1, 1});
    EXPECT_NO_THROW(SparseAnnotatedVolume(v, SliceMask(8, 8, 2)));
    EXPECT_THROW(SparseAnnotatedVolume(v, SliceMask(8, 8, 1)), std::invalid_argument);
    EXPECT_THROW(SparseAnnotatedVolume(v, SliceMask(8, 9, 2)), std::invalid_argument);
    SliceMask bad(8, 8, 2);
    bad.pixels[0] = 2;
    EXPECT_THROW(SparseAnnotatedVolume(v, bad), std::invalid_argument);
}

TEST(Io, VolumeRoundTripIsBitExact) {
    const auto dir = temp_dir("io_vol");
    std::mt19937_64 rng(1);
    std::normal_distribution<float> nd;
    std::vector<float> data(3 * 8 * 9);
    for (auto& x : data) x = nd(rng);
    data[0] = -0.0F;
    data[1] = std::numeric_limits<float>::denorm_min();
    const Volume v({3, 8, 9}, data, {2.5, 0.7, 0.8}, "abc");
    save_volume(v, dir / "abc.vol");
    const Volume back = load_volume(dir / "abc.vol");
    EXPECT_EQ(back.shape(), v.shape());
    EXPECT_EQ(back.spacing(), v.spacing());
    EXPECT_EQ(back.case_id(), "abc");
    EXPECT_EQ(std::memcmp(back.voxels().data(), v.voxels().data(), data.size() * sizeof(float)), 0);
}

TEST(Io, MaskRoundTripKeepsSource) {
    const auto dir = temp_dir("io_msk");
    DenseLabelVolume m({3, 8, 8}, LabelSource::ssl);
    m.at(1, 2, 3) = 1;
    save_mask(m, dir / "m.msk", {3, 1, 1});
    const auto back = load_mask_with_spacing(dir / "m.msk");
    EXPECT_EQ(back.labels, m);
    EXPECT_EQ(back.labels.source, LabelSource::ssl);
    EXPECT_EQ((back.spacing_mm), (Spacing{3, 1, 1}));
}

TEST(Io, MissingSidecarAndByteMismatchAreErrors) {
    const auto dir = temp_dir("io_err");
    const Volume v({3, 8, 8}, {1, 1, 1}, "x");
    save_volume(v, dir / "x.vol");
    fs::remove(sidecar_path(dir / "x.vol"));
    EXPECT_THROW(load_volume(dir / "x.vol"), IoError);

    save_volume(v, dir / "y.vol");
    std::ofstream(dir / "y.vol", std::ios::binary | std::ios::app) << "extra";
    EXPECT_THROW(load_volume(dir / "y.vol"), IoError);

    DenseLabelVolume m({3, 8, 8});
    save_mask(m, dir / "z.msk");
    std::ofstream(dir / "z.msk", std::ios::binary | std::ios::trunc) << "short";
    EXPECT_THROW(load_mask(dir / "z.msk"), IoError);
}

TEST(Preprocess, NormalizeIsZScore) {
    std::vector<float> d(3 * 8 * 8);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(i % 7) * 2.0F + 5.0F;
    const auto n = normalize(Volume({3, 8, 8}, d, {1, 1, 1}));
    double mean = 0, var = 0;
    for (float x : n.voxels()) mean += x;
    mean /= d.size();
    for (float x : n.voxels()) var += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(var / d.size(), 1.0, 1e-5);

    const auto c = normalize(Volume({3, 8, 8}, std::vector<float>(192, 4.0F), {1, 1, 1}));
    for (float x : c.voxels()) EXPECT_EQ(x, 0.0F);
}

TEST(Preprocess, TransformsArePermutationsAndInvertible) {
    Image2D img(8, 10);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i);
    const auto r90 = apply_transform(Transform2D::rot90, img);
    EXPECT_EQ(r90.h, 10);
    EXPECT_EQ(r90.w, 8);
    const auto back = apply_transform(Transform2D::rot270, r90);
    EXPECT_EQ(back, img);
    EXPECT_EQ(apply_transform(Transform2D::rot180, apply_transform(Transform2D::rot180, img)), img);
    EXPECT_EQ(apply_transform(Transform2D::flip_h, apply_transform(Transform2D::flip_h, img)), img);
    EXPECT_EQ(apply_transform(Transform2D::rot90, apply_transform(Transform2D::rot90, img)),
              apply_transform(Transform2D::rot180, img));
}

TEST(Preprocess, AugmentKeepsImageAndLabelAligned) {
    Image2D img(8, 8);
    SliceMask m(8, 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            const bool on = y < 3 && x > 4;
            m.at(y, x) = on;
            img.at(y, x) = on ? 1.0F : 0.0F;
        }
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto [ai, am] = augment(img, m, seed);
        EXPECT_EQ(am.slice_index, 3);
        for (std::size_t i = 0; i < ai.pixels.size(); ++i) EXPECT_EQ(ai.pixels[i] > 0.5F, am.pixels[i] == 1);
    }
}

TEST(Phantom, DeterministicAndShaped) {
    PhantomConfig cfg;
    cfg.count = 2;
    const auto a = generate_phantom_dataset(cfg);
    const auto b = generate_phantom_dataset(cfg);
    ASSERT_EQ(a.size(), 2U);
    EXPECT_EQ(a[0].volume, b[0].volume);
    EXPECT_EQ(a[1].labels, b[1].labels);
    EXPECT_EQ(a[0].volume.shape(), (Shape3{17, 64, 64}));
    EXPECT_EQ(a[0].volume.case_id(), "case_000");
    EXPECT_NE(a[0].volume, a[1].volume);
    for (int n = 0; n < 17; ++n) EXPECT_GT(a[0].labels.slice_foreground(n), 0U);
}

TEST(Phantom, MaskIsProfileThreshold) {
    PhantomConfig cfg;
    std::mt19937_64 rng(9);
    const auto track = draw_track(cfg, rng);
    for (int z : {0, 8, 16})
        for (int y = 0; y < 64; y += 3)
            for (int x = 0; x < 64; x += 3) {
                const double dy = (y - track.cy[z]) / track.ry[z], dx = (x - track.cx[z]) / track.rx[z];
                const bool inside = dy * dy + dx * dx <= 1.0;
                EXPECT_EQ(object_profile(y, x, track, z, cfg.edge_sharpness) >= 0.5F, inside);
            }
}

TEST(Phantom, DriftBoundedPerSlice) {
    PhantomConfig cfg;
    cfg.max_drift_px = 1.5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        const auto t = draw_track(cfg, rng);
        for (std::size_t z = 1; z < t.cy.size(); ++z) {
            EXPECT_LE(std::abs(t.cy[z] - t.cy[z - 1]), 1.5 + 1e-9);
            EXPECT_LE(std::abs(t.cx[z] - t.cx[z - 1]), 1.5 + 1e-9);
            EXPECT_LE(std::abs(t.ry[z] - t.ry[z - 1]), 1.5 + 1e-9);
            EXPECT_LE(std::abs(t.rx[z] - t.rx[z - 1]), 1.5 + 1e-9);
        }
    }
}

TEST(Phantom, ZeroDriftGivesConstantLabels) {
    PhantomConfig cfg;
    cfg.count = 1;
    cfg.max_drift_px = 0.0;
    const auto p = generate_phantom(cfg, 0);
    for (int n = 1; n < 17; ++n) EXPECT_EQ(p.labels.slice(n).pixels, p.labels.slice(0).pixels);
}

TEST(Phantom, TranslationMovesObjectAlongX) {
    PhantomConfig cfg;
    cfg.translation_px_per_slice = 1.0;
    cfg.max_drift_px = 1.0;
    const auto p = generate_phantom(cfg, 0);
    for (int n = 1; n < 17; ++n) {
        const auto prev = p.labels.slice(n - 1), cur = p.labels.slice(n);
        for (int y = 0; y < 64; ++y)
            for (int x = 1; x < 64; ++x) EXPECT_EQ(cur.at(y, x), prev.at(y, x - 1));
    }
}

TEST(Phantom, ConfigJsonRoundTrip) {
    PhantomConfig cfg;
    cfg.count = 7;
    cfg.translation_px_per_slice = 0.5;
    const PhantomConfig back = nlohmann::json(cfg).get<PhantomConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(cfg).dump());
}
