#pragma once

// Experiment runner: data splits, baselines, the full pipeline and sweeps.
// Every stage persists its artifacts under the output directory.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "fusion.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "phantom.hpp"
#include "preprocess.hpp"
#include "registration.hpp"
#include "report.hpp"
#include "semi_pl.hpp"
#include "target.hpp"
#include "training.hpp"
#include "volume.hpp"

namespace sparseseg {

enum class ExperimentMode {
    pipeline,
    fs_lcs,
    fs,
    semi_pl_only,
    self_pl_only,
    alpha_sweep,
    slice_budget_sweep,
    fusion_mode_sweep
};

enum class SplitStrategy { five_fold, fixed_80_20 };

inline const char* to_string(ExperimentMode m) {
    switch (m) {
        case ExperimentMode::pipeline: return "pipeline";
        case ExperimentMode::fs_lcs: return "fs_lcs";
        case ExperimentMode::fs: return "fs";
        case ExperimentMode::semi_pl_only: return "semi_pl_only";
        case ExperimentMode::self_pl_only: return "self_pl_only";
        case ExperimentMode::alpha_sweep: return "alpha_sweep";
        case ExperimentMode::slice_budget_sweep: return "slice_budget_sweep";
        case ExperimentMode::fusion_mode_sweep: return "fusion_mode_sweep";
    }
    return "pipeline";
}

inline ExperimentMode experiment_mode_from_string(const std::string& s) {
    for (auto m : {ExperimentMode::pipeline, ExperimentMode::fs_lcs, ExperimentMode::fs, ExperimentMode::semi_pl_only,
                   ExperimentMode::self_pl_only, ExperimentMode::alpha_sweep, ExperimentMode::slice_budget_sweep,
                   ExperimentMode::fusion_mode_sweep})
        if (s == to_string(m)) return m;
    throw std::invalid_argument("unknown experiment mode: " + s);
}

inline bool is_sweep(ExperimentMode m) {
    return m == ExperimentMode::alpha_sweep || m == ExperimentMode::slice_budget_sweep ||
           m == ExperimentMode::fusion_mode_sweep;
}

inline const char* to_string(SplitStrategy s) { return s == SplitStrategy::five_fold ? "five_fold" : "fixed_80_20"; }

inline SplitStrategy split_strategy_from_string(const std::string& s) {
    if (s == "five_fold") return SplitStrategy::five_fold;
    if (s == "fixed_80_20") return SplitStrategy::fixed_80_20;
    throw std::invalid_argument("unknown split strategy: " + s);
}

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::string data_dir;  // empty: generate phantoms from `phantom`
    std::string out_dir = "runs/experiment";
    ExperimentMode mode = ExperimentMode::pipeline;
    SplitStrategy split = SplitStrategy::fixed_80_20;
    double test_fraction = 0.2;  // fixed split only
    int fold = -1;               // five_fold: -1 runs every fold

    PhantomConfig phantom{};
    SegNetConfig net{};

    SemiLossConfig semi{};
    int semi_epochs = 120;
    OptimizerSettings semi_opt = default_target_optimizer();

    RegistrationConfig registration{};
    OptimizerSettings reg_opt = [] {
        OptimizerSettings o;
        o.lr = 0.01;
        o.batch_size = 32;
        return o;
    }();

    TargetTrainConfig target{};
    OptimizerSettings target_opt = default_target_optimizer();

    FusionMode fusion = FusionMode::consistency;
    std::optional<int> band_px;

    std::vector<double> alpha_values{0.1, 0.5, 1.0, 3.0, 5.0, 7.0, 9.0};
    std::vector<int> slice_budgets{2, 3, 5, 6, 7};
    std::vector<FusionMode> fusion_modes{FusionMode::intersection, FusionMode::union_, FusionMode::consistency};

    bool save_artifacts = true;
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    j = nlohmann::json{{"seed", c.seed},
                       {"data_dir", c.data_dir},
                       {"out_dir", c.out_dir},
                       {"mode", to_string(c.mode)},
                       {"split", to_string(c.split)},
                       {"test_fraction", c.test_fraction},
                       {"fold", c.fold},
                       {"phantom", c.phantom},
                       {"net", c.net},
                       {"semi", c.semi},
                       {"semi_epochs", c.semi_epochs},
                       {"semi_opt", c.semi_opt},
                       {"registration", c.registration},
                       {"reg_opt", c.reg_opt},
                       {"target", c.target},
                       {"target_opt", c.target_opt},
                       {"fusion", to_string(c.fusion)},
                       {"alpha_values", c.alpha_values},
                       {"slice_budgets", c.slice_budgets},
                       {"save_artifacts", c.save_artifacts}};
    j["band_px"] = c.band_px ? nlohmann::json(*c.band_px) : nlohmann::json();
    j["fusion_modes"] = nlohmann::json::array();
    for (auto m : c.fusion_modes) j["fusion_modes"].push_back(to_string(m));
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c.seed = j.value("seed", c.seed);
    c.data_dir = j.value("data_dir", c.data_dir);
    c.out_dir = j.value("out_dir", c.out_dir);
    if (j.contains("mode")) c.mode = experiment_mode_from_string(j["mode"].get<std::string>());
    if (j.contains("split")) c.split = split_strategy_from_string(j["split"].get<std::string>());
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.fold = j.value("fold", c.fold);
    if (j.contains("phantom")) c.phantom = j["phantom"].get<PhantomConfig>();
    if (j.contains("net")) c.net = j["net"].get<SegNetConfig>();
    if (j.contains("semi")) c.semi = j["semi"].get<SemiLossConfig>();
    c.semi_epochs = j.value("semi_epochs", c.semi_epochs);
    if (j.contains("semi_opt")) c.semi_opt = j["semi_opt"].get<OptimizerSettings>();
    if (j.contains("registration")) c.registration = j["registration"].get<RegistrationConfig>();
    if (j.contains("reg_opt")) c.reg_opt = j["reg_opt"].get<OptimizerSettings>();
    if (j.contains("target")) c.target = j["target"].get<TargetTrainConfig>();
    if (j.contains("target_opt")) c.target_opt = j["target_opt"].get<OptimizerSettings>();
    if (j.contains("fusion")) c.fusion = fusion_mode_from_string(j["fusion"].get<std::string>());
    if (j.contains("band_px") && j["band_px"].is_number_integer()) c.band_px = j["band_px"].get<int>();
    c.alpha_values = j.value("alpha_values", c.alpha_values);
    c.slice_budgets = j.value("slice_budgets", c.slice_budgets);
    if (j.contains("fusion_modes")) {
        c.fusion_modes.clear();
        for (const auto& m : j["fusion_modes"]) c.fusion_modes.push_back(fusion_mode_from_string(m.get<std::string>()));
    }
    c.save_artifacts = j.value("save_artifacts", c.save_artifacts);
}

/// Seeds every stochastic component from the experiment seed. The target net
/// keeps the experiment config's `net` shape.
inline ExperimentConfig propagate_seed(ExperimentConfig c) {
    c.phantom.seed = c.seed;
    c.semi_opt.seed = c.seed * 1000003ULL + 11;
    c.reg_opt.seed = c.seed * 1000003ULL + 23;
    c.target_opt.seed = c.seed * 1000003ULL + 37;
    c.target.net = c.net;
    return c;
}

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

template <class F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

/// A labeled case: image plus dense ground truth. Training only ever sees the
/// central slice of `gt` unless running the fully supervised baseline.
struct Case {
    Volume volume;
    DenseLabelVolume gt;
};

inline std::vector<Case> phantom_cases(const PhantomConfig& cfg) {
    std::vector<Case> out;
    for (auto& p : generate_phantom_dataset(cfg)) out.push_back({std::move(p.volume), std::move(p.labels)});
    return out;
}

/// <dir>/<case>.vol with <dir>/<case>.msk ground truth, sorted by name.
inline std::vector<Case> load_cases(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> vols;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.path().extension() == ".vol") vols.push_back(e.path());
    std::sort(vols.begin(), vols.end());
    std::vector<Case> out;
    for (const auto& p : vols) {
        auto mask_path = p;
        mask_path.replace_extension(".msk");
        Case c{load_volume(p), load_mask(mask_path)};
        if (!(c.gt.shape == c.volume.shape())) throw IoError("mask shape does not match volume: " + p.string());
        c.gt.source = LabelSource::manual;
        out.push_back(std::move(c));
    }
    if (out.empty()) throw IoError("no .vol files in " + dir.string());
    return out;
}

inline void save_cases(const std::vector<Case>& cases, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& c : cases) {
        save_volume(c.volume, dir / (c.volume.case_id() + ".vol"));
        save_mask(c.gt, dir / (c.volume.case_id() + ".msk"), c.volume.spacing());
    }
}

struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// five_fold: 5 disjoint test folds (sizes differ by at most one) over a seeded
/// permutation; fixed_80_20: one seeded hold-out of round(test_fraction * n) cases.
inline std::vector<Fold> split_dataset(std::size_t n_cases, SplitStrategy strategy, std::uint64_t seed,
                                       double test_fraction = 0.2) {
    std::vector<std::size_t> perm(n_cases);
    for (std::size_t i = 0; i < n_cases; ++i) perm[i] = i;
    std::mt19937_64 rng(seed ^ 0x51ed270b7f4a7c15ULL);
    shuffle_with(perm, rng);

    std::vector<Fold> folds;
    if (strategy == SplitStrategy::five_fold) {
        if (n_cases < 5) throw std::invalid_argument("split_dataset: five_fold needs at least 5 cases");
        std::size_t start = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            const std::size_t size = n_cases / 5 + (k < n_cases % 5 ? 1 : 0);
            Fold f;
            for (std::size_t i = 0; i < n_cases; ++i)
                (i >= start && i < start + size ? f.test : f.train).push_back(perm[i]);
            start += size;
            std::sort(f.train.begin(), f.train.end());
            std::sort(f.test.begin(), f.test.end());
            folds.push_back(std::move(f));
        }
        return folds;
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw std::invalid_argument("split_dataset: test_fraction must lie in (0,1)");
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n_cases)));
    if (n_test == 0 || n_test >= n_cases) throw std::invalid_argument("split_dataset: too few cases");
    Fold f;
    for (std::size_t i = 0; i < n_cases; ++i) (i < n_test ? f.test : f.train).push_back(perm[i]);
    std::sort(f.train.begin(), f.train.end());
    std::sort(f.test.begin(), f.test.end());
    folds.push_back(std::move(f));
    return folds;
}

/// FNV-1a over the compact JSON dump.
inline std::string config_hash(const nlohmann::json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

inline constexpr const char* kStageVersion = "1";

inline void write_manifest(const std::filesystem::path& dir, const nlohmann::json& config, std::uint64_t seed,
                           const std::vector<std::string>& stages) {
    std::filesystem::create_directories(dir);
    nlohmann::json m{{"config_hash", config_hash(config)}, {"seed", seed}, {"config", config}};
    for (const auto& s : stages) m["stage_versions"][s] = kStageVersion;
    detail::write_json(dir / "manifest.json", m);
}

inline void save_mask_set(const std::vector<DenseLabelVolume>& masks, const std::vector<const Case*>& cases,
                          const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < masks.size(); ++i)
        save_mask(masks[i], dir / (cases[i]->volume.case_id() + ".msk"), cases[i]->volume.spacing());
}

/// Runs the stages of one train/test split. Pseudo labels are computed lazily and
/// shared by every method evaluated on the fold.
class FoldRunner {
public:
    FoldRunner(const ExperimentConfig& cfg, std::vector<const Case*> train, std::vector<const Case*> test,
               std::filesystem::path dir)
        : cfg_(cfg), train_(std::move(train)), test_(std::move(test)), dir_(std::move(dir)) {
        if (train_.empty() || test_.empty()) throw std::invalid_argument("FoldRunner: empty split");
    }

    const std::vector<DenseLabelVolume>& semi_labels() { return semi_labels(cfg_.semi); }

    /// Semi-supervised pseudo labels; cached per loss configuration (alpha sweep).
    const std::vector<DenseLabelVolume>& semi_labels(const SemiLossConfig& loss) {
        const std::string key = nlohmann::json(loss).dump();
        if (auto it = semi_.find(key); it != semi_.end()) return it->second;
        return run_stage("train_semi", [&]() -> const std::vector<DenseLabelVolume>& {
            std::vector<SparseAnnotatedVolume> items;
            for (const Case* c : train_) items.push_back(sparsify(c->volume, c->gt));
            SemiTrainOptions opt;
            opt.net = cfg_.net;
            const SemiTrainState st = train_semi(items, loss, cfg_.semi_opt, cfg_.semi_epochs, opt);
            std::vector<DenseLabelVolume> labels;
            for (const Case* c : train_) labels.push_back(st.pseudo_labels.at(c->volume.case_id()));
            const std::string tag =
                key == nlohmann::json(cfg_.semi).dump() ? "semi" : "semi_alpha_" + format_number(loss.alpha_f);
            if (cfg_.save_artifacts) {
                std::vector<double> hist;
                for (const auto& h : st.history) hist.push_back(h.labeled_loss + h.alpha * h.unlabeled_loss);
                save_checkpoint(st.net, {nlohmann::json{{"semi", loss}}, st.epoch, st.rng_seed, hist},
                                dir_ / (tag + ".bin"));
                save_mask_set(labels, train_, dir_ / (tag + "_labels"));
                std::ofstream csv(dir_ / (tag + "_epochs.csv"));
                csv << "epoch,alpha,labeled_loss,unlabeled_loss\n" << std::setprecision(17);
                for (const auto& h : st.history)
                    csv << h.epoch << ',' << h.alpha << ',' << h.labeled_loss << ',' << h.unlabeled_loss << '\n';
            }
            return semi_.emplace(key, std::move(labels)).first->second;
        });
    }

    const std::vector<DenseLabelVolume>& ssl_labels() {
        if (ssl_) return *ssl_;
        return run_stage("train_registration", [&]() -> const std::vector<DenseLabelVolume>& {
            std::vector<Volume> vols;
            for (const Case* c : train_) vols.push_back(c->volume);
            const RegistrationResult reg = train_registration(vols, cfg_.reg_opt, cfg_.registration);
            if (cfg_.save_artifacts)
                save_checkpoint(reg.net,
                                {nlohmann::json{{"registration", cfg_.registration}}, cfg_.registration.epochs,
                                 cfg_.reg_opt.seed, reg.loss_history},
                                dir_ / "registration.bin");
            std::vector<DenseLabelVolume> labels;
            run_stage("propagate", [&] {
                for (const Case* c : train_) labels.push_back(propagate_labels(reg.net, sparsify(c->volume, c->gt)));
                return 0;
            });
            if (cfg_.save_artifacts) save_mask_set(labels, train_, dir_ / "ssl_labels");
            ssl_ = std::move(labels);
            return *ssl_;
        });
    }

    /// Target net on fused semi + ssl labels.
    MetricsReport pipeline(FusionMode mode, const std::string& method) {
        const auto& semi = semi_labels();
        const auto& ssl = ssl_labels();
        std::vector<FusedLabels> fused = run_stage("fuse", [&] {
            std::vector<FusedLabels> out;
            for (std::size_t i = 0; i < train_.size(); ++i)
                out.push_back(fuse_mode(semi[i], ssl[i], mode, central_slice_index(train_[i]->volume)));
            return out;
        });
        if (cfg_.save_artifacts) {
            std::vector<DenseLabelVolume> cert, unc;
            for (const auto& f : fused) {
                cert.push_back(f.consistent);
                unc.push_back(f.inconsistent);
            }
            save_mask_set(cert, train_, dir_ / (method + "_fused_certain"));
            save_mask_set(unc, train_, dir_ / (method + "_fused_uncertain"));
        }
        return target_from_fused(std::move(fused), method);
    }

    /// Target net supervised by a single generator's labels, all treated as certain.
    MetricsReport single_source(const std::vector<DenseLabelVolume>& labels, const std::string& method) {
        std::vector<FusedLabels> fused;
        for (std::size_t i = 0; i < train_.size(); ++i)
            fused.push_back(fuse_mode(labels[i], labels[i], FusionMode::intersection,
                                      central_slice_index(train_[i]->volume)));
        return target_from_fused(std::move(fused), method);
    }

    /// Manual labels on k evenly spaced slices per volume (k = 1: central slice only).
    MetricsReport fs_lcs(int k, const std::string& method) {
        std::vector<DenseLabelVolume> gts;
        for (const Case* c : train_) gts.push_back(c->gt);
        const auto slices = manual_slices(gts, [k](int n) { return evenly_spaced_slices(n, k); });
        return train_and_evaluate(slices, method);
    }

    /// Fully supervised upper bound: every slice's ground truth.
    MetricsReport fs(const std::string& method) {
        std::vector<DenseLabelVolume> gts;
        for (const Case* c : train_) gts.push_back(c->gt);
        const auto slices = manual_slices(gts, [](int n) {
            std::vector<int> all(n);
            for (int i = 0; i < n; ++i) all[i] = i;
            return all;
        });
        return train_and_evaluate(slices, method);
    }

    /// Accuracy of a label set on the training cases (non-central slices).
    double training_label_dsc(const std::vector<DenseLabelVolume>& labels) const {
        double sum = 0.0;
        for (std::size_t i = 0; i < train_.size(); ++i) {
            DenseLabelVolume a = labels[i], b = train_[i]->gt;
            const int c = central_slice_index(train_[i]->volume);
            const std::size_t plane = a.shape.slice_pixels();
            std::fill_n(a.masks.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, 0);
            std::fill_n(b.masks.begin() + static_cast<std::ptrdiff_t>(c * plane), plane, 0);
            sum += dsc(a, b);
        }
        return sum / static_cast<double>(train_.size());
    }

    const std::filesystem::path& dir() const { return dir_; }

private:
    static std::string format_number(double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    }

    MetricsReport target_from_fused(std::vector<FusedLabels> fused, const std::string& method) {
        std::vector<TargetCase> data;
        for (std::size_t i = 0; i < train_.size(); ++i) {
            const Case* c = train_[i];
            data.push_back({c->volume, c->gt.slice(central_slice_index(c->volume)), std::move(fused[i])});
        }
        const auto slices = target_slices(data, true);
        return train_and_evaluate(slices, method);
    }

    MetricsReport train_and_evaluate(const std::vector<TrainingSlice>& slices, const std::string& method) {
        std::vector<Volume> vols;
        for (const Case* c : train_) vols.push_back(c->volume);
        const TargetTrainResult res =
            run_stage("train_target", [&] { return train_on_slices(vols, slices, cfg_.target, cfg_.target_opt); });
        if (cfg_.save_artifacts)
            save_checkpoint(res.net,
                            {nlohmann::json{{"target", cfg_.target}, {"method", method}}, cfg_.target.epochs,
                             cfg_.target_opt.seed, res.loss_history},
                            dir_ / (method + "_target.bin"));
        return run_stage("evaluate", [&] {
            MetricsReport rep;
            rep.method = method;
            std::vector<DenseLabelVolume> preds;
            for (const Case* c : test_) {
                preds.push_back(infer_volume(res.net, c->volume));
                rep.per_case.push_back(
                    evaluate_case(c->volume.case_id(), preds.back(), c->gt, c->volume.spacing(), cfg_.band_px));
            }
            if (cfg_.save_artifacts) save_mask_set(preds, test_, dir_ / (method + "_pred"));
            rep.summarize();
            return rep;
        });
    }

    ExperimentConfig cfg_;
    std::vector<const Case*> train_;
    std::vector<const Case*> test_;
    std::filesystem::path dir_;
    std::map<std::string, std::vector<DenseLabelVolume>> semi_;
    std::optional<std::vector<DenseLabelVolume>> ssl_;
};

/// Runs one non-sweep method on a fold.
inline MetricsReport run_method(FoldRunner& runner, ExperimentMode mode, const ExperimentConfig& cfg) {
    switch (mode) {
        case ExperimentMode::pipeline: return runner.pipeline(cfg.fusion, "pipeline");
        case ExperimentMode::fs_lcs: return runner.fs_lcs(1, "fs_lcs");
        case ExperimentMode::fs: return runner.fs("fs");
        case ExperimentMode::semi_pl_only: return runner.single_source(runner.semi_labels(), "semi_pl_only");
        case ExperimentMode::self_pl_only: return runner.single_source(runner.ssl_labels(), "self_pl_only");
        default: throw std::invalid_argument("run_method: sweep modes go through run_sweep");
    }
}

inline void append_cases(MetricsReport& into, const MetricsReport& from) {
    into.method = from.method;
    into.per_case.insert(into.per_case.end(), from.per_case.begin(), from.per_case.end());
}

struct PreparedExperiment {
    ExperimentConfig cfg;
    std::vector<Case> cases;
    std::vector<Fold> folds;
    std::vector<std::size_t> fold_ids;  // folds to run
};

inline PreparedExperiment prepare_experiment(const ExperimentConfig& raw) {
    PreparedExperiment p;
    p.cfg = propagate_seed(raw);
    p.cases = run_stage("load_data", [&] {
        auto cases = p.cfg.data_dir.empty() ? phantom_cases(p.cfg.phantom) : load_cases(p.cfg.data_dir);
        for (auto& c : cases) c.volume = normalize(c.volume);
        return cases;
    });
    p.folds = run_stage("split", [&] {
        return split_dataset(p.cases.size(), p.cfg.split, p.cfg.seed, p.cfg.test_fraction);
    });
    if (p.cfg.fold >= 0) {
        if (static_cast<std::size_t>(p.cfg.fold) >= p.folds.size())
            throw StageError("split", "fold index out of range");
        p.fold_ids.push_back(static_cast<std::size_t>(p.cfg.fold));
    } else {
        for (std::size_t k = 0; k < p.folds.size(); ++k) p.fold_ids.push_back(k);
    }
    return p;
}

inline FoldRunner make_runner(const PreparedExperiment& p, std::size_t k) {
    std::vector<const Case*> train, test;
    for (auto i : p.folds[k].train) train.push_back(&p.cases[i]);
    for (auto i : p.folds[k].test) test.push_back(&p.cases[i]);
    return FoldRunner(p.cfg, std::move(train), std::move(test),
                      std::filesystem::path(p.cfg.out_dir) / ("fold_" + std::to_string(k)));
}

inline void write_report(const MetricsReport& r, const std::filesystem::path& dir, const std::string& stem) {
    std::filesystem::create_directories(dir);
    detail::write_json(dir / (stem + ".json"), to_json(r));
    std::ofstream(dir / (stem + "_per_case.csv")) << per_case_csv(r);
}

/// Runs cfg.mode (a non-sweep mode) over the selected folds, writing report.json.
inline MetricsReport run_pipeline(const ExperimentConfig& raw) {
    if (is_sweep(raw.mode)) throw std::invalid_argument("run_pipeline: use run_sweep for sweep modes");
    const PreparedExperiment p = prepare_experiment(raw);
    const std::filesystem::path out(p.cfg.out_dir);
    write_manifest(out, nlohmann::json(p.cfg), p.cfg.seed,
                   {"load_data", "split", "train_semi", "train_registration", "propagate", "fuse", "train_target",
                    "evaluate"});
    MetricsReport all;
    for (auto k : p.fold_ids) {
        FoldRunner runner = make_runner(p, k);
        write_manifest(runner.dir(), nlohmann::json(p.cfg), p.cfg.seed, {to_string(p.cfg.mode)});
        const MetricsReport r = run_method(runner, p.cfg.mode, p.cfg);
        write_report(r, runner.dir(), "report");
        append_cases(all, r);
    }
    all.summarize();
    write_report(all, out, "report");
    return all;
}

struct SweepRow {
    std::string parameter;  // alpha_f, slices or fusion_mode
    std::string value;
    MetricsReport report;
};

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "parameter,value";
    for (const char* m : kMetricNames) os << ',' << m << "_mean," << m << "_sd";
    os << ",n\n";
    for (const auto& r : rows) {
        os << r.parameter << ',' << r.value;
        int n = 0;
        for (const char* m : kMetricNames) {
            const auto& s = r.report.summary.at(m);
            os << ',' << s.mean << ',' << s.sd;
            n = std::max(n, s.count);
        }
        os << ',' << n << '\n';
    }
    return os.str();
}

inline std::vector<SweepRow> run_sweep(const ExperimentConfig& raw) {
    if (!is_sweep(raw.mode)) throw std::invalid_argument("run_sweep: not a sweep mode");
    const PreparedExperiment p = prepare_experiment(raw);
    const std::filesystem::path out(p.cfg.out_dir);
    write_manifest(out, nlohmann::json(p.cfg), p.cfg.seed, {to_string(p.cfg.mode)});

    std::vector<SweepRow> rows;
    auto add = [&](const std::string& param, const std::string& value, const MetricsReport& r) {
        for (auto& row : rows)
            if (row.value == value) {
                append_cases(row.report, r);
                return;
            }
        rows.push_back({param, value, r});
    };
    for (auto k : p.fold_ids) {
        FoldRunner runner = make_runner(p, k);
        switch (p.cfg.mode) {
            case ExperimentMode::alpha_sweep:
                for (double a : p.cfg.alpha_values) {
                    SemiLossConfig loss = p.cfg.semi;
                    loss.alpha_f = a;
                    std::ostringstream v;
                    v << a;
                    add("alpha_f", v.str(), runner.single_source(runner.semi_labels(loss), "semi_alpha_" + v.str()));
                }
                break;
            case ExperimentMode::slice_budget_sweep:
                for (int s : p.cfg.slice_budgets)
                    add("slices", std::to_string(s), runner.fs_lcs(s, "fs_lcs_k" + std::to_string(s)));
                break;
            case ExperimentMode::fusion_mode_sweep:
                for (auto m : p.cfg.fusion_modes)
                    add("fusion_mode", to_string(m), runner.pipeline(m, std::string("fusion_") + to_string(m)));
                break;
            default: break;
        }
    }
    for (auto& r : rows) {
        r.report.summarize();
        write_report(r.report, out, r.report.method);
    }
    std::ofstream(out / (std::string(to_string(p.cfg.mode)) + ".csv")) << sweep_csv(rows);
    return rows;
}

}  // namespace sparseseg
