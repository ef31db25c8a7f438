// strokeseg: synth | train | eval | predict | folds
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "strokeseg/config.hpp"
#include "strokeseg/data.hpp"
#include "strokeseg/evaluation.hpp"
#include "strokeseg/models.hpp"
#include "strokeseg/png_io.hpp"
#include "strokeseg/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace strokeseg;

namespace {

struct SynthArgs {
    std::string out_dir;
    int cases = 3;
    std::vector<int> shape{2, 96, 96};
    std::uint64_t seed = 1;
};

int cmd_synth(const SynthArgs& a) {
    if (a.shape.size() != 3) throw ConfigError("--shape needs D,H,W");
    fs::create_directories(a.out_dir);
    std::vector<std::string> ids;
    for (int i = 0; i < a.cases; ++i) {
        const data::Case c = data::synth_case(a.seed + static_cast<std::uint64_t>(i),
                                              {a.shape[0], a.shape[1], a.shape[2]});
        data::write_case(c, fs::path(a.out_dir) / c.case_id);
        ids.push_back(c.case_id);
    }
    data::write_manifest(ids, fs::path(a.out_dir) / "manifest.txt");
    std::cout << "wrote " << a.cases << " cases under " << a.out_dir << "\n";
    return 0;
}

struct FoldsArgs {
    std::string manifest;
    std::string data_root;
    int k = 3;
    std::uint64_t seed = 7;
    std::string out;
};

fs::path resolve_with_root(const std::string& p, const std::string& root) {
    fs::path path(p);
    if (path.is_absolute() || root.empty()) return path;
    return fs::path(root) / path;
}

std::string env_data_root() {
    const char* env = std::getenv("STROKESEG_DATA_ROOT");
    return env ? env : "";
}

int cmd_folds(const FoldsArgs& a) {
    const std::string root = a.data_root.empty() ? env_data_root() : a.data_root;
    const fs::path manifest = resolve_with_root(a.manifest, root);
    const auto ids = data::read_manifest(manifest);
    const data::FoldSplit split = data::make_folds(ids, a.k, a.seed);

    json j;
    j["seed"] = split.seed;
    j["folds"] = split.folds;
    const std::string text = j.dump(2);
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw IOError("cannot write " + a.out);
        out << text << "\n";
    }
    std::cout << text << "\n";
    return 0;
}

struct TrainArgs {
    std::string config_path;
    std::string ablation;  // tag or "all"
    std::string fold = "all";
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::string data_root;
    std::string manifest;
};

std::vector<data::Case> load_manifest_cases(const fs::path& root, const fs::path& manifest) {
    std::vector<data::Case> cases;
    for (const auto& id : data::read_manifest(manifest)) cases.push_back(data::load_case(root / id));
    if (cases.empty()) throw DataError("manifest lists no cases: " + manifest.string());
    return cases;
}

int cmd_train(const TrainArgs& a) {
    config::RunConfig rc = config::load_run_config(a.config_path);
    if (!a.data_root.empty()) rc.data_root = a.data_root;
    if (!a.manifest.empty()) rc.manifest = a.manifest;
    if (a.seed) rc.train.seed = *a.seed;
    if (a.epochs) rc.train.epochs = *a.epochs;
    rc.resolve_and_check_paths();

    std::vector<training::Ablation> tags;
    if (a.ablation.empty())
        tags.push_back(rc.train.ablation);
    else if (a.ablation == "all")
        tags = training::all_ablations();
    else
        tags.push_back(training::parse_ablation(a.ablation));

    std::optional<int> only_fold;
    if (a.fold != "all") {
        try {
            only_fold = std::stoi(a.fold);
        } catch (const std::exception&) {
            throw ConfigError("--fold must be an index or 'all'");
        }
        if (*only_fold < 0 || *only_fold >= rc.folds)
            throw ConfigError("--fold out of range [0," + std::to_string(rc.folds) + ")");
    }

    fs::create_directories(rc.output_dir);
    {
        std::ofstream eff(rc.output_dir / "effective.cfg");
        eff << rc.to_text();
    }
    std::cout << "# effective config\n" << rc.to_text() << std::flush;

    const auto cases = load_manifest_cases(rc.data_root, rc.manifest_path());
    std::vector<std::string> ids;
    for (const auto& c : cases) ids.push_back(c.case_id);
    const data::FoldSplit split = data::make_folds(ids, rc.folds, rc.fold_seed);

    std::vector<evaluation::CvReport> reports;
    for (training::Ablation tag : tags) {
        training::TrainConfig cfg = rc.train;
        cfg.ablation = tag;
        if (cfg.checkpoint_dir.is_relative()) cfg.checkpoint_dir = rc.output_dir / cfg.checkpoint_dir;

        const training::CvResult cv = training::train_cv(cases, split, cfg, only_fold);
        for (const auto& fr : cv.folds) {
            training::write_train_log(
                fr.log, rc.output_dir / (training::ablation_name(tag) + "_fold" +
                                         std::to_string(fr.fold) + ".log.jsonl"));
            std::cout << training::ablation_name(tag) << " fold " << fr.fold
                      << ": best val dice penumbra=" << fr.best_val.penumbra
                      << " core=" << fr.best_val.core << " -> " << fr.checkpoint_path.string()
                      << "\n";
        }
        std::ofstream rep(rc.output_dir / (training::ablation_name(tag) + ".report.json"));
        rep << evaluation::cv_report_to_json(cv.report) << "\n";
        reports.push_back(cv.report);
    }
    if (!only_fold) std::cout << "\n" << evaluation::render_table(reports);
    return 0;
}

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::vector<std::string> report_files;
    std::string manifest;
    std::string data_root;
    std::string out;
    bool table = false;
    bool inclusive_penumbra = false;
};

int cmd_eval(const EvalArgs& a) {
    std::vector<evaluation::CvReport> reports;

    if (!a.checkpoints.empty()) {
        const std::string root = a.data_root.empty() ? env_data_root() : a.data_root;
        if (root.empty())
            throw ConfigError("no data root: pass --data-root or set STROKESEG_DATA_ROOT");
        if (a.manifest.empty()) throw ConfigError("--manifest required with --checkpoint");
        const fs::path manifest = resolve_with_root(a.manifest, root);
        const auto cases = load_manifest_cases(root, manifest);

        // group fold means by ablation tag, in checkpoint order
        std::vector<std::pair<std::string, std::vector<evaluation::FoldMean>>> grouped;
        for (const auto& ck_path : a.checkpoints) {
            models::Checkpoint ck = models::load_checkpoint(ck_path);
            if (ck.segmenter_config.in_channels != 3)
                throw CheckpointMismatch("checkpoint expects " +
                                         std::to_string(ck.segmenter_config.in_channels) +
                                         " input channels, dataset has 3");
            std::string tag = "Proposed";
            try {
                const json meta = json::parse(ck.meta_json);
                if (meta.contains("ablation")) tag = meta["ablation"].get<std::string>();
            } catch (const json::exception&) {
                // checkpoint without metadata keeps the default tag
            }
            evaluation::EvalOptions opts;
            opts.inclusive_penumbra = a.inclusive_penumbra;
            const auto scores = evaluation::evaluate_fold(*ck.segmenter, cases, opts);
            const evaluation::FoldMean mean = evaluation::mean_scores(scores);
            auto it = std::find_if(grouped.begin(), grouped.end(),
                                   [&](const auto& g) { return g.first == tag; });
            if (it == grouped.end())
                grouped.push_back({tag, {mean}});
            else
                it->second.push_back(mean);
            std::cout << ck_path << ": penumbra=" << mean.penumbra << " core=" << mean.core
                      << "\n";
        }
        for (auto& [tag, fold_means] : grouped)
            reports.push_back(evaluation::CvReport::from_folds(tag, std::move(fold_means)));
    }

    for (const auto& rf : a.report_files) {
        std::ifstream in(rf);
        if (!in) throw UnreadableFile("cannot open report " + rf);
        std::ostringstream ss;
        ss << in.rdbuf();
        reports.push_back(evaluation::cv_report_from_json(ss.str()));
    }
    if (reports.empty()) throw ConfigError("eval: nothing to do (no --checkpoint or --report)");

    std::ostringstream js;
    js << "[\n";
    for (size_t i = 0; i < reports.size(); ++i)
        js << evaluation::cv_report_to_json(reports[i]) << (i + 1 < reports.size() ? ",\n" : "\n");
    js << "]\n";
    if (!a.out.empty()) {
        std::ofstream out(a.out);
        if (!out) throw IOError("cannot write " + a.out);
        out << js.str();
    } else {
        std::cout << js.str();
    }
    if (a.table) std::cout << evaluation::render_table(reports);
    return 0;
}

struct PredictArgs {
    std::string checkpoint;
    std::string case_dir;
    std::string out_dir;
    bool overlay = false;
};

int cmd_predict(const PredictArgs& a) {
    models::Checkpoint ck = models::load_checkpoint(a.checkpoint);
    const data::Case c = data::load_case(a.case_dir);
    fs::create_directories(a.out_dir);

    const IntTensor pred = evaluation::predict_case(*ck.segmenter, c);

    data::Volume pv;
    pv.spacing = c.penumbra_mask.spacing;
    pv.vox = Tensor(pred.shape());
    for (std::int64_t i = 0; i < pred.numel(); ++i) pv.vox[i] = static_cast<float>(pred[i]);
    data::write_rawf32(pv, fs::path(a.out_dir) / "pred.rawf32");

    if (a.overlay) {
        const data::Volume& dwi = c.modalities.at(data::Modality::DWI);
        float lo = dwi.vox[0], hi = dwi.vox[0];
        for (std::int64_t i = 0; i < dwi.vox.numel(); ++i) {
            lo = std::min(lo, dwi.vox[i]);
            hi = std::max(hi, dwi.vox[i]);
        }
        for (int z = 0; z < pred.dim(0); ++z) {
            Tensor gray({pred.dim(1), pred.dim(2)});
            IntTensor lab({pred.dim(1), pred.dim(2)});
            for (int y = 0; y < pred.dim(1); ++y)
                for (int x = 0; x < pred.dim(2); ++x) {
                    gray.at(y, x) = dwi.vox.at(z, y, x);
                    lab.at(y, x) = pred.at(z, y, x);
                }
            const png_io::Image img = png_io::render_overlay(gray, lab, lo, hi);
            char name[192];
            std::snprintf(name, sizeof(name), "%s_z%03d_pen-yellow_core-red.png",
                          c.case_id.c_str(), z);
            png_io::write_png(img, fs::path(a.out_dir) / name);
        }
    }
    std::cout << "prediction written to " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-modal stroke lesion segmentation toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a deterministic phantom dataset");
    s->add_option("--out", synth.out_dir, "Output dataset directory")->required();
    s->add_option("--cases", synth.cases, "Number of cases")->check(CLI::NonNegativeNumber);
    s->add_option("--shape", synth.shape, "Volume shape D,H,W")->delimiter(',')->expected(3);
    s->add_option("--seed", synth.seed, "Base seed (case i uses seed+i)");

    FoldsArgs folds;
    auto* f = app.add_subcommand("folds", "Print a deterministic k-fold split of a manifest");
    f->add_option("--manifest", folds.manifest, "Manifest file (one case id per line)")->required();
    f->add_option("--data-root", folds.data_root, "Data root for relative manifest paths");
    f->add_option("--k", folds.k, "Number of folds");
    f->add_option("--seed", folds.seed, "Shuffle seed");
    f->add_option("--out", folds.out, "Also write the JSON split here");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train one ablation (or all) with cross-validation");
    t->add_option("--config", train.config_path, "Run config file")->required();
    t->add_option("--ablation", train.ablation, "BL1..BL7, PROPOSED, or 'all'");
    t->add_option("--fold", train.fold, "Fold index or 'all'");
    t->add_option("--seed", train.seed, "Override training seed");
    t->add_option("--epochs", train.epochs, "Override epoch count");
    t->add_option("--data-root", train.data_root, "Override data root");
    t->add_option("--manifest", train.manifest, "Override manifest");

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Evaluate checkpoints and render the report table");
    e->add_option("--checkpoint", eval.checkpoints, "Checkpoint file (repeatable)");
    e->add_option("--report", eval.report_files, "Existing CvReport JSON to merge (repeatable)");
    e->add_option("--manifest", eval.manifest, "Manifest of cases to evaluate");
    e->add_option("--data-root", eval.data_root, "Data root (or STROKESEG_DATA_ROOT)");
    e->add_option("--out", eval.out, "Write the report JSON here instead of stdout");
    e->add_flag("--table", eval.table, "Print the Markdown table");
    e->add_flag("--inclusive-penumbra", eval.inclusive_penumbra,
                "Score penumbra against the raw overlapping mask");

    PredictArgs predict;
    auto* p = app.add_subcommand("predict", "Predict one case and optionally write overlays");
    p->add_option("--checkpoint", predict.checkpoint, "Checkpoint file")->required();
    p->add_option("--case", predict.case_dir, "Case directory")->required();
    p->add_option("--out", predict.out_dir, "Output directory")->required();
    p->add_flag("--overlay", predict.overlay, "Write one contour PNG per slice");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (s->parsed()) return cmd_synth(synth);
        if (f->parsed()) return cmd_folds(folds);
        if (t->parsed()) return cmd_train(train);
        if (e->parsed()) return cmd_eval(eval);
        if (p->parsed()) return cmd_predict(predict);
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const UnknownTag& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const InvalidConfig& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 2;
    } catch (const NonFiniteLoss& err) {
        std::cerr << "numeric failure: " << err.what() << "\n";
        return 4;
    } catch (const Error& err) {
        std::cerr << "data error: " << err.what() << "\n";
        return 3;
    }
    return 0;
}
