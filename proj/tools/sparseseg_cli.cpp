// Command-line front end: one verb per pipeline stage plus `pipeline` and `sweep`.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <sparseseg/sparseseg.hpp>

namespace fs = std::filesystem;
using namespace sparseseg;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
};

ExperimentConfig load_config(const Globals& g) {
    ExperimentConfig cfg;
    if (!g.config.empty()) {
        std::ifstream in(g.config);
        if (!in) throw StageError("config", "cannot open " + g.config);
        cfg = nlohmann::json::parse(in).get<ExperimentConfig>();
    }
    if (g.seed) cfg.seed = *g.seed;
    if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
    return propagate_seed(cfg);
}

std::vector<Volume> load_volumes(const fs::path& dir) {
    std::vector<fs::path> paths;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".vol") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    std::vector<Volume> out;
    for (const auto& p : paths) out.push_back(normalize(load_volume(p)));
    if (out.empty()) throw IoError("no .vol files in " + dir.string());
    return out;
}

// Same z-score normalization the pipeline applies.
std::vector<Case> load_normalized_cases(const fs::path& dir) {
    auto cases = load_cases(dir);
    for (auto& c : cases) c.volume = normalize(c.volume);
    return cases;
}

std::vector<SparseAnnotatedVolume> sparse_items(const std::vector<Case>& cases) {
    std::vector<SparseAnnotatedVolume> out;
    for (const auto& c : cases) out.push_back(sparsify(c.volume, c.gt));
    return out;
}

DenseLabelVolume mask_for(const fs::path& dir, const Volume& v) {
    auto m = load_mask(dir / (v.case_id() + ".msk"));
    if (!(m.shape == v.shape())) throw IoError("mask shape mismatch for " + v.case_id());
    return m;
}

void print_summary(const MetricsReport& r) {
    std::cout << std::fixed << std::setprecision(4);
    for (const char* m : kMetricNames) {
        const auto& s = r.summary.at(m);
        std::cout << r.method << ' ' << m << " mean=" << s.mean << " sd=" << s.sd << " n=" << s.count << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-annotation segmentation with fused pseudo labels"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "Experiment configuration (JSON)");
    app.add_option("--seed", g.seed, "Override the configured seed");
    app.add_option("--out-dir", g.out_dir, "Override the output directory");

    // phantom-gen
    auto* gen = app.add_subcommand("phantom-gen", "Generate synthetic phantom volumes with dense masks");
    int gen_count = -1;
    std::vector<int> gen_shape;
    std::optional<double> gen_translation;
    gen->add_option("--count", gen_count, "Number of cases");
    gen->add_option("--shape", gen_shape, "N H W")->expected(3);
    gen->add_option("--translation", gen_translation, "Rigid x-translation per slice in pixels");

    // train-semi
    auto* semi = app.add_subcommand("train-semi", "Train the self-training pseudo-label generator");
    std::string data, out, labels_dir;
    semi->add_option("--data", data, "Case directory")->required();
    semi->add_option("--out", out, "Checkpoint path (.bin)")->required();
    semi->add_option("--labels", labels_dir, "Write pseudo labels here");

    // train-reg
    auto* reg = app.add_subcommand("train-reg", "Train the slice registration network");
    reg->add_option("--data", data, "Volume directory")->required();
    reg->add_option("--out", out, "Checkpoint path (.bin)")->required();

    // propagate
    auto* prop = app.add_subcommand("propagate", "Propagate central-slice labels through registration");
    std::string reg_ckpt;
    prop->add_option("--reg", reg_ckpt, "Registration checkpoint")->required();
    prop->add_option("--data", data, "Case directory")->required();
    prop->add_option("--out", out, "Mask output directory")->required();

    // fuse
    auto* fuse_cmd = app.add_subcommand("fuse", "Fuse two pseudo-label sets");
    std::string semi_dir, ssl_dir, mode_name = "consistency";
    fuse_cmd->add_option("--semi", semi_dir, "Self-training labels")->required();
    fuse_cmd->add_option("--ssl", ssl_dir, "Propagated labels")->required();
    fuse_cmd->add_option("--mode", mode_name, "intersection | union | consistency");
    fuse_cmd->add_option("--out", out, "Output directory (certain/ and uncertain/)")->required();

    // train-target
    auto* tt = app.add_subcommand("train-target", "Train the target network on manual + fused labels");
    std::string fused_dir;
    tt->add_option("--data", data, "Case directory")->required();
    tt->add_option("--fused", fused_dir, "Directory with certain/ and uncertain/ masks")->required();
    tt->add_option("--out", out, "Checkpoint path (.bin)")->required();

    // train-baseline
    auto* tb = app.add_subcommand("train-baseline", "Train a fully supervised baseline");
    std::string kind = "fs_lcs";
    int budget = 1;
    tb->add_option("--data", data, "Case directory")->required();
    tb->add_option("--kind", kind, "fs_lcs | fs");
    tb->add_option("--slices", budget, "Annotated slices per volume for fs_lcs");
    tb->add_option("--out", out, "Checkpoint path (.bin)")->required();

    // infer
    auto* inf = app.add_subcommand("infer", "Segment volumes with a trained network");
    std::string model;
    inf->add_option("--model", model, "Checkpoint")->required();
    inf->add_option("--data", data, "Volume directory")->required();
    inf->add_option("--out", out, "Mask output directory")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score predicted masks against ground truth");
    std::string pred_dir, gt_dir, method = "method";
    bool spacing_from_sidecar = false;
    std::optional<int> band;
    ev->add_option("--pred", pred_dir, "Predicted masks")->required();
    ev->add_option("--gt", gt_dir, "Ground-truth masks")->required();
    ev->add_flag("--spacing-from-sidecar", spacing_from_sidecar, "Use ground-truth sidecar spacing (else 1 mm)");
    ev->add_option("--band", band, "B-IoU band radius in voxels");
    ev->add_option("--method", method, "Method name recorded in the report");
    ev->add_option("--out", out, "Report path (.json)")->required();

    // compare
    auto* cmp = app.add_subcommand("compare", "Paired t-tests between two reports");
    std::vector<std::string> reports;
    cmp->add_option("--reports", reports, "Two report files")->expected(2)->required();
    cmp->add_option("--out", out, "Write comparisons to this JSON file");

    std::string mode;
    auto* pipe = app.add_subcommand("pipeline", "Run the configured experiment mode end to end");
    pipe->add_option("--mode", mode, "pipeline|fs_lcs|fs|semi_pl_only|self_pl_only (overrides config)");
    auto* sweep = app.add_subcommand("sweep", "Run the configured sweep");
    sweep->add_option("--mode", mode, "alpha_sweep|slice_budget_sweep|fusion_mode_sweep (overrides config)");

    CLI11_PARSE(app, argc, argv);

    const std::string verb = app.get_subcommands().front()->get_name();
    try {
        ExperimentConfig cfg = load_config(g);

        if (gen->parsed()) {
            PhantomConfig pc = cfg.phantom;
            if (gen_count > 0) pc.count = gen_count;
            if (gen_shape.size() == 3) pc.shape = {gen_shape[0], gen_shape[1], gen_shape[2]};
            if (gen_translation) pc.translation_px_per_slice = gen_translation;
            save_cases(phantom_cases(pc), cfg.out_dir);
            std::ofstream(fs::path(cfg.out_dir) / "phantom.json") << nlohmann::json(pc).dump(2) << '\n';
            std::cout << "wrote " << pc.count << " phantoms to " << cfg.out_dir << '\n';
        } else if (semi->parsed()) {
            const auto items = sparse_items(load_normalized_cases(data));
            SemiTrainOptions opt;
            opt.net = cfg.net;
            fs::path csv_path = fs::path(out).replace_extension(".csv");
            if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
            std::ofstream csv(csv_path);
            csv << "epoch,alpha,labeled_loss,unlabeled_loss\n" << std::setprecision(17);
            opt.on_epoch = [&](const SemiEpochLog& l) {
                csv << l.epoch << ',' << l.alpha << ',' << l.labeled_loss << ',' << l.unlabeled_loss << '\n';
            };
            const auto st = train_semi(items, cfg.semi, cfg.semi_opt, cfg.semi_epochs, opt);
            std::vector<double> hist;
            for (const auto& h : st.history) hist.push_back(h.labeled_loss + h.alpha * h.unlabeled_loss);
            save_checkpoint(st.net, {nlohmann::json{{"semi", cfg.semi}}, st.epoch, st.rng_seed, hist}, out);
            if (!labels_dir.empty()) {
                fs::create_directories(labels_dir);
                for (const auto& it : items)
                    save_mask(st.pseudo_labels.at(it.volume.case_id()),
                              fs::path(labels_dir) / (it.volume.case_id() + ".msk"), it.volume.spacing());
            }
        } else if (reg->parsed()) {
            const auto vols = load_volumes(data);
            const auto res = train_registration(vols, cfg.reg_opt, cfg.registration, [](int e, double l) {
                std::cout << "epoch " << e << " loss " << l << '\n';
            });
            save_checkpoint(res.net,
                            {nlohmann::json{{"registration", cfg.registration}}, cfg.registration.epochs,
                             cfg.reg_opt.seed, res.loss_history},
                            out);
        } else if (prop->parsed()) {
            const auto net = load_checkpoint(reg_ckpt).net;
            fs::create_directories(out);
            for (const auto& it : sparse_items(load_normalized_cases(data)))
                save_mask(propagate_labels(net, it), fs::path(out) / (it.volume.case_id() + ".msk"),
                          it.volume.spacing());
        } else if (fuse_cmd->parsed()) {
            const FusionMode mode = fusion_mode_from_string(mode_name);
            fs::create_directories(fs::path(out) / "certain");
            fs::create_directories(fs::path(out) / "uncertain");
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(semi_dir))
                if (e.path().extension() == ".msk") files.push_back(e.path().filename());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                const auto a = load_mask_with_spacing(fs::path(semi_dir) / f);
                const auto b = load_mask(fs::path(ssl_dir) / f);
                const auto fused = fuse_mode(a.labels, b, mode, central_slice_index(a.labels.shape.n));
                save_mask(fused.consistent, fs::path(out) / "certain" / f, a.spacing_mm);
                save_mask(fused.inconsistent, fs::path(out) / "uncertain" / f, a.spacing_mm);
            }
        } else if (tt->parsed()) {
            std::vector<TargetCase> cases;
            for (auto& c : load_normalized_cases(data)) {
                FusedLabels f{mask_for(fs::path(fused_dir) / "certain", c.volume),
                              mask_for(fs::path(fused_dir) / "uncertain", c.volume)};
                const int ci = central_slice_index(c.volume);
                cases.push_back({c.volume, c.gt.slice(ci), std::move(f)});
            }
            const auto res = train_target(cases, cfg.target, cfg.target_opt, [](int e, double l) {
                std::cout << "epoch " << e << " loss " << l << '\n';
            });
            save_checkpoint(res.net, {nlohmann::json{{"target", cfg.target}}, cfg.target.epochs, cfg.target_opt.seed,
                                      res.loss_history},
                            out);
        } else if (tb->parsed()) {
            const auto cases = load_normalized_cases(data);
            std::vector<Volume> vols;
            std::vector<DenseLabelVolume> gts;
            for (const auto& c : cases) {
                vols.push_back(c.volume);
                gts.push_back(c.gt);
            }
            std::function<std::vector<int>(int)> pick;
            if (kind == "fs_lcs") {
                pick = [budget](int n) { return evenly_spaced_slices(n, budget); };
            } else if (kind == "fs") {
                pick = [](int n) {
                    std::vector<int> all(n);
                    for (int i = 0; i < n; ++i) all[i] = i;
                    return all;
                };
            } else {
                throw std::invalid_argument("unknown baseline kind: " + kind);
            }
            const auto res = train_on_slices(vols, manual_slices(gts, pick), cfg.target, cfg.target_opt);
            save_checkpoint(res.net,
                            {nlohmann::json{{"target", cfg.target}, {"baseline", kind}, {"slices", budget}},
                             cfg.target.epochs, cfg.target_opt.seed, res.loss_history},
                            out);
        } else if (inf->parsed()) {
            const auto net = load_checkpoint(model).net;
            fs::create_directories(out);
            for (const auto& v : load_volumes(data))
                save_mask(infer_volume(net, v), fs::path(out) / (v.case_id() + ".msk"), v.spacing());
        } else if (ev->parsed()) {
            MetricsReport rep;
            rep.method = method;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(pred_dir))
                if (e.path().extension() == ".msk") files.push_back(e.path().filename());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                const auto gt = load_mask_with_spacing(fs::path(gt_dir) / f);
                const auto pred = load_mask(fs::path(pred_dir) / f);
                const Spacing sp = spacing_from_sidecar ? gt.spacing_mm : Spacing{1.0, 1.0, 1.0};
                rep.per_case.push_back(evaluate_case(f.stem().string(), pred, gt.labels, sp, band));
            }
            rep.summarize();
            const fs::path out_path(out);
            if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
            detail::write_json(out_path, to_json(rep));
            std::ofstream(fs::path(out).replace_extension(".csv")) << per_case_csv(rep);
            print_summary(rep);
        } else if (cmp->parsed()) {
            const auto a = report_from_json(detail::read_json(reports[0]));
            const auto b = report_from_json(detail::read_json(reports[1]));
            nlohmann::json j = nlohmann::json::array();
            for (const char* m : kMetricNames) {
                const auto c = compare_reports(a, b, m);
                std::cout << c.method_a << " vs " << c.method_b << ' ' << m << " n=" << c.n << " t=" << c.t
                          << " p=" << c.p_value << (c.valid ? "" : " (undefined)") << '\n';
                j.push_back({{"method_a", c.method_a}, {"method_b", c.method_b}, {"metric", m},
                             {"t", detail::number_or_null(c.t)}, {"p_value", detail::number_or_null(c.p_value)},
                             {"n", c.n}, {"valid", c.valid}});
            }
            if (!out.empty()) detail::write_json(out, j);
        } else if (pipe->parsed()) {
            if (!mode.empty()) cfg.mode = experiment_mode_from_string(mode);
            print_summary(run_pipeline(cfg));
        } else if (sweep->parsed()) {
            if (!mode.empty()) cfg.mode = experiment_mode_from_string(mode);
            for (const auto& row : run_sweep(cfg)) {
                const auto& s = row.report.summary.at("dsc");
                std::cout << row.parameter << '=' << row.value << " dsc=" << s.mean << " sd=" << s.sd << '\n';
            }
        }
    } catch (const StageError& e) {
        std::cerr << "error [stage " << e.stage() << "]: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error [stage " << verb << "]: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
