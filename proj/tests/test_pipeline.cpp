#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include <sparseseg/experiment.hpp>
#include <sparseseg/semi_pl.hpp>
#include <sparseseg/target.hpp>

using namespace sparseseg;
namespace fs = std::filesystem;

namespace {

PhantomConfig tiny_phantom(int count = 3) {
    PhantomConfig cfg;
    cfg.count = count;
    cfg.shape = {5, 16, 16};
    cfg.radius_range_px = {3.0, 5.0};
    cfg.max_drift_px = 0.5;
    return cfg;
}

SegNetConfig tiny_net() {
    SegNetConfig n;
    n.base_kernels = 4;
    n.depth = 2;
    return n;
}

std::vector<SparseAnnotatedVolume> tiny_items() {
    std::vector<SparseAnnotatedVolume> out;
    for (const auto& p : generate_phantom_dataset(tiny_phantom()))
        out.push_back(sparsify(normalize(p.volume), p.labels));
    return out;
}

ExperimentConfig tiny_experiment(const std::string& out) {
    ExperimentConfig c;
    c.seed = 5;
    c.out_dir = (fs::temp_directory_path() / out).string();
    c.phantom = tiny_phantom(5);
    c.test_fraction = 0.4;
    c.net = tiny_net();
    c.semi.K1 = 1;
    c.semi.K2 = 2;
    c.semi_epochs = 3;
    c.registration.epochs = 1;
    c.registration.net.base_kernels = 4;
    c.registration.net.depth = 2;
    c.target.epochs = 2;
    c.alpha_values = {1.0, 3.0};
    c.slice_budgets = {2, 3};
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(SemiPl, SupervisedOnlyWhenEpochsEqualK1) {
    const auto items = tiny_items();
    SemiLossConfig cfg;
    cfg.K1 = 3;
    cfg.K2 = 6;
    OptimizerSettings o = default_target_optimizer(1);
    o.lr = 1e-3;
    const auto st = train_semi(items, cfg, o, 3, {tiny_net(), {}});
    ASSERT_EQ(st.history.size(), 3U);
    for (const auto& h : st.history) {
        EXPECT_EQ(h.alpha, 0.0);
        EXPECT_EQ(h.unlabeled_loss, 0.0);
    }
    EXPECT_EQ(st.k1_checkpoint.store().values, st.net.store().values);
}

TEST(SemiPl, PseudoLabelsBinaryWithEmptyCentre) {
    const auto items = tiny_items();
    SemiLossConfig cfg;
    cfg.K1 = 1;
    cfg.K2 = 3;
    OptimizerSettings o = default_target_optimizer(2);
    o.lr = 1e-3;
    const auto st = train_semi(items, cfg, o, 3, {tiny_net(), {}});
    EXPECT_GT(st.history[2].alpha, 0.0);
    for (const auto& it : items) {
        const auto& pl = st.pseudo_labels.at(it.volume.case_id());
        EXPECT_NO_THROW(pl.validate());
        EXPECT_EQ(pl.source, LabelSource::semi);
        EXPECT_EQ(pl.slice_foreground(central_slice_index(it.volume)), 0U);
    }
}

TEST(SemiPl, DeterministicForFixedSeed) {
    const auto items = tiny_items();
    SemiLossConfig cfg;
    cfg.K1 = 1;
    cfg.K2 = 2;
    const auto o = default_target_optimizer(3);
    const auto a = train_semi(items, cfg, o, 2, {tiny_net(), {}});
    const auto b = train_semi(items, cfg, o, 2, {tiny_net(), {}});
    EXPECT_EQ(a.net.store().values, b.net.store().values);
    EXPECT_EQ(a.pseudo_labels, b.pseudo_labels);
}

TEST(SemiPl, RejectsBadInput) {
    EXPECT_THROW(train_semi({}, SemiLossConfig{}, OptimizerSettings{}, 3), std::invalid_argument);
    SemiLossConfig bad;
    bad.K1 = 5;
    bad.K2 = 5;
    EXPECT_THROW(train_semi(tiny_items(), bad, OptimizerSettings{}, 3), std::invalid_argument);
}

TEST(Target, EvenlySpacedSlices) {
    EXPECT_EQ(evenly_spaced_slices(17, 1), (std::vector<int>{8}));
    for (int k = 1; k <= 17; ++k) {
        const auto s = evenly_spaced_slices(17, k);
        EXPECT_EQ(s.size(), static_cast<std::size_t>(k));
        EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
        EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), s.size());
        EXPECT_TRUE(std::find(s.begin(), s.end(), 8) != s.end());
    }
    EXPECT_EQ(evenly_spaced_slices(5, 9).size(), 5U);
}

TEST(Target, MissingFusedLabelsThrow) {
    const auto items = tiny_items();
    std::vector<TargetCase> data;
    for (const auto& it : items) data.push_back({it.volume, it.central_label, std::nullopt});
    EXPECT_THROW(train_target(data, TargetTrainConfig{}, default_target_optimizer()), std::invalid_argument);
    EXPECT_NO_THROW(target_slices(data, false));
}

TEST(Target, ZeroBetaMatchesCertainOnlyTraining) {
    const auto items = tiny_items();
    std::vector<Volume> vols;
    std::vector<TrainingSlice> with_u, without_u;
    std::mt19937_64 rng(4);
    std::bernoulli_distribution coin(0.3);
    for (std::size_t i = 0; i < items.size(); ++i) {
        vols.push_back(items[i].volume);
        const int c = items[i].central_label.slice_index;
        for (int n = 0; n < 5; ++n) {
            TrainingSlice s{i, n, items[i].central_label.pixels, {}, n == c};
            without_u.push_back(s);
            if (n != c) {
                s.uncertain.resize(256);
                for (auto& u : s.uncertain) u = coin(rng);
            }
            with_u.push_back(s);
        }
    }
    TargetTrainConfig cfg;
    cfg.epochs = 2;
    cfg.net = tiny_net();
    cfg.loss.beta = 0.0;
    const auto o = default_target_optimizer(6);
    const auto a = train_on_slices(vols, with_u, cfg, o);
    const auto b = train_on_slices(vols, without_u, cfg, o);
    EXPECT_EQ(a.net.store().values, b.net.store().values);
    EXPECT_EQ(a.loss_history, b.loss_history);
}

TEST(Target, TrainingReducesLoss) {
    const auto items = tiny_items();
    std::vector<Volume> vols;
    std::vector<DenseLabelVolume> gt;
    for (const auto& p : generate_phantom_dataset(tiny_phantom())) {
        vols.push_back(normalize(p.volume));
        gt.push_back(p.labels);
    }
    const auto slices = manual_slices(gt, [](int n) {
        std::vector<int> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), 0);
        return all;
    });
    TargetTrainConfig cfg;
    cfg.epochs = 15;
    cfg.net = tiny_net();
    auto o = default_target_optimizer(7);
    o.lr = 3e-3;
    const auto r = train_on_slices(vols, slices, cfg, o);
    ASSERT_EQ(r.loss_history.size(), 15U);
    EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Experiment, FiveFoldPartition) {
    const auto folds = split_dataset(50, SplitStrategy::five_fold, 1);
    ASSERT_EQ(folds.size(), 5U);
    std::multiset<std::size_t> seen;
    for (const auto& f : folds) {
        EXPECT_EQ(f.test.size(), 10U);
        EXPECT_EQ(f.train.size(), 40U);
        seen.insert(f.test.begin(), f.test.end());
        std::set<std::size_t> all(f.train.begin(), f.train.end());
        for (auto t : f.test) EXPECT_EQ(all.count(t), 0U);
    }
    EXPECT_EQ(seen.size(), 50U);
    EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()).size(), 50U);

    for (const auto& f : split_dataset(23, SplitStrategy::five_fold, 2)) {
        EXPECT_GE(f.test.size(), 4U);
        EXPECT_LE(f.test.size(), 5U);
    }
}

TEST(Experiment, FixedSplitIsSeededAndSized) {
    const auto a = split_dataset(100, SplitStrategy::fixed_80_20, 3);
    ASSERT_EQ(a.size(), 1U);
    EXPECT_EQ(a[0].train.size(), 80U);
    EXPECT_EQ(a[0].test.size(), 20U);
    EXPECT_EQ(split_dataset(100, SplitStrategy::fixed_80_20, 3)[0].test, a[0].test);
    EXPECT_NE(split_dataset(100, SplitStrategy::fixed_80_20, 4)[0].test, a[0].test);
    const auto b = split_dataset(30, SplitStrategy::fixed_80_20, 3, 1.0 / 3.0);
    EXPECT_EQ(b[0].test.size(), 10U);
    EXPECT_THROW(split_dataset(3, SplitStrategy::five_fold, 0), std::invalid_argument);
    EXPECT_THROW(split_dataset(10, SplitStrategy::fixed_80_20, 0, 1.5), std::invalid_argument);
}

TEST(Experiment, ConfigJsonRoundTrip) {
    ExperimentConfig c = tiny_experiment("unused");
    c.mode = ExperimentMode::fusion_mode_sweep;
    c.split = SplitStrategy::five_fold;
    c.band_px = 3;
    c.fusion = FusionMode::union_;
    const auto back = nlohmann::json(c).get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(c).dump());
    EXPECT_EQ(config_hash(nlohmann::json(back)), config_hash(nlohmann::json(c)));
    for (const char* m : {"pipeline", "fs_lcs", "fs", "semi_pl_only", "self_pl_only", "alpha_sweep",
                          "slice_budget_sweep", "fusion_mode_sweep"})
        EXPECT_EQ(to_string(experiment_mode_from_string(m)), std::string(m));
    EXPECT_THROW(experiment_mode_from_string("nope"), std::invalid_argument);
}

TEST(Experiment, SeedPropagationGivesDistinctStreams) {
    ExperimentConfig c;
    c.seed = 9;
    const auto p = propagate_seed(c);
    EXPECT_EQ(p.phantom.seed, 9U);
    const std::set<std::uint64_t> s{p.semi_opt.seed, p.reg_opt.seed, p.target_opt.seed};
    EXPECT_EQ(s.size(), 3U);
}

TEST(Experiment, StageErrorsNameTheStage) {
    try {
        run_stage("fuse", [] { return fuse(DenseLabelVolume({3, 8, 8}), DenseLabelVolume({4, 8, 8})); });
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "fuse");
    }
    ExperimentConfig c = tiny_experiment("missing_data");
    c.data_dir = (fs::temp_directory_path() / "sparseseg_does_not_exist").string();
    try {
        run_pipeline(c);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "load_data");
    }
}

TEST(Experiment, PipelineRunIsReproducible) {
    auto c = tiny_experiment("sparseseg_repro_a");
    fs::remove_all(c.out_dir);
    const auto a = run_pipeline(c);
    const auto first = slurp(fs::path(c.out_dir) / "report.json");
    fs::remove_all(c.out_dir);
    const auto b = run_pipeline(c);
    EXPECT_EQ(slurp(fs::path(c.out_dir) / "report.json"), first);
    EXPECT_EQ(a.per_case.size(), 2U);
    EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / "manifest.json"));
    EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / "fold_0" / "pipeline_target.bin"));
    for (const auto& m : a.per_case) {
        EXPECT_GE(m.dsc, 0.0);
        EXPECT_LE(m.dsc, 1.0);
    }
}

TEST(Experiment, EveryModeRuns) {
    for (auto mode : {ExperimentMode::fs_lcs, ExperimentMode::fs, ExperimentMode::semi_pl_only,
                      ExperimentMode::self_pl_only}) {
        auto c = tiny_experiment(std::string("sparseseg_mode_") + to_string(mode));
        c.mode = mode;
        c.save_artifacts = false;
        const auto r = run_pipeline(c);
        EXPECT_EQ(r.method, to_string(mode));
        EXPECT_EQ(r.summary.at("dsc").count, 2);
    }
    for (auto mode : {ExperimentMode::alpha_sweep, ExperimentMode::slice_budget_sweep,
                      ExperimentMode::fusion_mode_sweep}) {
        auto c = tiny_experiment(std::string("sparseseg_mode_") + to_string(mode));
        c.mode = mode;
        c.save_artifacts = false;
        const auto rows = run_sweep(c);
        EXPECT_EQ(rows.size(), mode == ExperimentMode::fusion_mode_sweep ? 3U : 2U);
        EXPECT_TRUE(fs::exists(fs::path(c.out_dir) / (std::string(to_string(mode)) + ".csv")));
    }
}

TEST(Experiment, LoadCasesRoundTrip) {
    const auto dir = fs::temp_directory_path() / "sparseseg_cases";
    fs::remove_all(dir);
    const auto cases = phantom_cases(tiny_phantom(2));
    save_cases(cases, dir);
    const auto back = load_cases(dir);
    ASSERT_EQ(back.size(), 2U);
    EXPECT_EQ(back[0].volume, cases[0].volume);
    EXPECT_EQ(back[1].gt.masks, cases[1].gt.masks);
    fs::remove_all(dir);
    fs::create_directories(dir);
    EXPECT_THROW(load_cases(dir), IoError);
}
