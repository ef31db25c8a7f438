#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "strokeseg/training.hpp"

using namespace strokeseg;
using namespace strokeseg::training;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("strokeseg_train_" + std::to_string(Rng(std::random_device{}())()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

/// Small model + small slices so training-path tests stay fast.
TrainConfig tiny_config(Ablation tag, const TempDir& tmp) {
    TrainConfig cfg;
    cfg.ablation = tag;
    cfg.model.encoder_widths = {4, 6, 8, 8, 12, 12, 12, 12};
    cfg.disc_base_width = 4;
    cfg.batch_size = 2;
    cfg.epochs = 1;
    cfg.checkpoint_dir = tmp.path / "ckpt";
    return cfg;
}

std::vector<data::SliceSample> tiny_slices(int n_cases = 2, std::array<int, 3> shape = {1, 64, 64}) {
    std::vector<data::SliceSample> out;
    for (int i = 0; i < n_cases; ++i)
        for (auto& s : data::extract_slices(data::synth_case(100 + static_cast<std::uint64_t>(i), shape)))
            out.push_back(std::move(s));
    return out;
}

std::vector<float> snapshot_params(nn::ParamGroup<float> g) {
    std::vector<float> out;
    for (auto* p : g.params)
        out.insert(out.end(), p->value.vec().begin(), p->value.vec().end());
    return out;
}

}  // namespace

TEST_CASE("ablation grid maps bijectively onto {T,F}^3") {
    CHECK(ablation_flags(Ablation::BL1).residual == false);
    CHECK(ablation_flags(Ablation::BL1).adversarial == false);
    CHECK(ablation_flags(Ablation::BL1).extra_losses == false);
    CHECK(ablation_flags(Ablation::Proposed).residual == true);
    CHECK(ablation_flags(Ablation::Proposed).adversarial == true);
    CHECK(ablation_flags(Ablation::Proposed).extra_losses == true);
    CHECK(ablation_flags(Ablation::BL6).residual == true);
    CHECK(ablation_flags(Ablation::BL6).adversarial == false);
    CHECK(ablation_flags(Ablation::BL6).extra_losses == true);

    std::set<std::tuple<bool, bool, bool>> seen;
    for (Ablation tag : all_ablations()) {
        const AblationFlags f = ablation_flags(tag);
        seen.insert({f.residual, f.adversarial, f.extra_losses});
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("ablation parsing") {
    CHECK(parse_ablation("BL3") == Ablation::BL3);
    CHECK(parse_ablation("proposed") == Ablation::Proposed);
    CHECK(parse_ablation("PROPOSED") == Ablation::Proposed);
    CHECK(ablation_name(Ablation::Proposed) == "Proposed");
    CHECK_THROWS_AS(parse_ablation("BL9"), UnknownTag);
}

TEST_CASE("effective weights honor the ablation") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::BL6, tmp);
    cfg.loss_weights = {1.0f, 0.7f, 0.3f, 0.1f};
    const auto w = cfg.effective_weights();
    CHECK(w.ls == 0.7f);
    CHECK(w.bd == 0.3f);
    CHECK(w.adv == 0.0f);  // BL6 is not adversarial

    cfg.ablation = Ablation::BL3;
    const auto w3 = cfg.effective_weights();
    CHECK(w3.ls == 0.0f);
    CHECK(w3.bd == 0.0f);
    CHECK(w3.adv == 0.1f);

    CHECK(cfg.effective_model().residual == false);
    cfg.ablation = Ablation::BL5;
    CHECK(cfg.effective_model().residual == true);
}

TEST_CASE("collate pads to the largest slice in the batch") {
    auto small = data::extract_slices(data::synth_case(7, {1, 64, 64}));
    auto large = data::extract_slices(data::synth_case(8, {1, 96, 96}));
    const Batch b = collate({&small[0], &large[0]});
    CHECK(b.input.shape() == std::vector<int>{2, 3, 96, 96});
    CHECK(b.labels.shape() == std::vector<int>{2, 96, 96});
    // the padded ring of the small sample carries label 0 / weight 1
    CHECK(b.labels.at(0, 0, 0) == 0);
    CHECK(b.weights.at(0, 0, 0) == 1.0f);
    // center of the small sample survives at the centered offset
    CHECK(b.input.at(0, 0, 16 + 10, 16 + 11) == small[0].input.at(0, 10, 11));
}

TEST_CASE("BL1 builds no discriminators, Proposed builds three") {
    TempDir tmp;
    const auto m1 = AdversarialModels::build(tiny_config(Ablation::BL1, tmp));
    CHECK(m1.discriminators.empty());
    const auto m2 = AdversarialModels::build(tiny_config(Ablation::Proposed, tmp));
    REQUIRE(m2.discriminators.size() == 3);
    CHECK(m2.discriminators[0]->config().in_channels == 4);
    CHECK(m2.discriminators[1]->config().in_channels == 4);
    CHECK(m2.discriminators[2]->config().in_channels == 5);
}

TEST_CASE("train_step: non-adversarial ablations leave adv terms zero") {
    TempDir tmp;
    const TrainConfig cfg = tiny_config(Ablation::BL2, tmp);
    AdversarialModels m = AdversarialModels::build(cfg);
    const auto slices = tiny_slices(1);
    const losses::LossReport rep = train_step(m, collate({&slices[0]}), cfg);
    CHECK(rep.adv_g == 0.0);
    CHECK(rep.adv_d_core == 0.0);
    CHECK(rep.ls > 0.0);
    CHECK(rep.bd > 0.0);
    CHECK(rep.total ==
          doctest::Approx(rep.ce + rep.ls + rep.bd).epsilon(1e-6));
}

TEST_CASE("discriminator freeze: zero adversarial weight leaves D parameters bit-identical") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::Proposed, tmp);
    cfg.loss_weights.adv = 0.0f;
    AdversarialModels m = AdversarialModels::build(cfg);
    REQUIRE(m.discriminators.size() == 3);

    std::vector<std::vector<float>> before;
    for (auto& d : m.discriminators) before.push_back(snapshot_params(d->params()));

    const auto slices = tiny_slices(1);
    for (int i = 0; i < 3; ++i) (void)train_step(m, collate({&slices[0]}), cfg);

    for (size_t h = 0; h < 3; ++h) {
        const auto after = snapshot_params(m.discriminators[h]->params());
        REQUIRE(before[h] == after);
    }
}

TEST_CASE("adversarial step updates all four models and reports finite terms") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::Proposed, tmp);
    AdversarialModels m = AdversarialModels::build(cfg);
    const auto seg_before = snapshot_params(m.segmenter->params());
    std::vector<std::vector<float>> d_before;
    for (auto& d : m.discriminators) d_before.push_back(snapshot_params(d->params()));

    const auto slices = tiny_slices(1);
    const losses::LossReport rep = train_step(m, collate({&slices[0]}), cfg);

    CHECK(std::isfinite(rep.total));
    CHECK(rep.adv_g != 0.0);
    CHECK(rep.adv_d_core != 0.0);
    CHECK(rep.adv_d_pen != 0.0);
    CHECK(rep.adv_d_pair != 0.0);

    CHECK(snapshot_params(m.segmenter->params()) != seg_before);
    for (size_t h = 0; h < 3; ++h)
        CHECK(snapshot_params(m.discriminators[h]->params()) != d_before[h]);
}

TEST_CASE("one step on a fixed batch usually decreases the generator loss") {
    TempDir tmp;
    int decreased = 0;
    for (int rep = 0; rep < 5; ++rep) {
        TrainConfig cfg = tiny_config(Ablation::BL5, tmp);
        cfg.seed = 40 + static_cast<std::uint64_t>(rep);
        cfg.lr_segmenter = 1e-4f;
        AdversarialModels m = AdversarialModels::build(cfg);
        const auto slices = tiny_slices(1);
        const Batch batch = collate({&slices[0]});

        const double before = evaluate_generator_loss(m, batch, cfg).total;
        (void)train_step(m, batch, cfg);
        const double after = evaluate_generator_loss(m, batch, cfg).total;
        decreased += after < before;
    }
    CHECK(decreased >= 3);
}

TEST_CASE("stability smoke: 200 steps keep every loss term finite") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::Proposed, tmp);
    cfg.model.encoder_widths = {2, 3, 4, 4, 5, 5, 5, 5};
    cfg.disc_base_width = 2;
    AdversarialModels m = AdversarialModels::build(cfg);
    const auto slices = tiny_slices(1);
    const Batch batch = collate({&slices[0]});
    for (int i = 0; i < 200; ++i) {
        const losses::LossReport rep = train_step(m, batch, cfg);
        REQUIRE(std::isfinite(rep.ce));
        REQUIRE(std::isfinite(rep.ls));
        REQUIRE(std::isfinite(rep.bd));
        REQUIRE(std::isfinite(rep.adv_g));
        REQUIRE(std::isfinite(rep.adv_d_core));
        REQUIRE(std::isfinite(rep.adv_d_pen));
        REQUIRE(std::isfinite(rep.adv_d_pair));
        REQUIRE(std::isfinite(rep.total));
    }
}

TEST_CASE("train_on_slices: checkpoints, logs, determinism") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::BL5, tmp);
    cfg.epochs = 3;
    const auto slices = tiny_slices(2);

    const FoldResult a = train_on_slices(slices, cfg);
    CHECK(fs::exists(a.checkpoint_path));
    CHECK(a.log.iters.size() == 3 * ((slices.size() + 1) / 2));
    CHECK(!a.log.epochs.empty());
    CHECK(a.best_val.penumbra >= 0.0);

    const FoldResult b = train_on_slices(slices, cfg);
    REQUIRE(a.best_val.penumbra == doctest::Approx(b.best_val.penumbra).epsilon(1e-9));
    REQUIRE(a.best_val.core == doctest::Approx(b.best_val.core).epsilon(1e-9));
    REQUIRE(a.log.iters.back().report.total ==
            doctest::Approx(b.log.iters.back().report.total).epsilon(1e-9));

    // checkpoint reload reproduces the recorded validation dice
    models::Checkpoint ck = models::load_checkpoint(a.checkpoint_path);
    const auto val = evaluate_slices(*ck.segmenter, slices, cfg.batch_size);
    CHECK(val.penumbra == doctest::Approx(a.best_val.penumbra).epsilon(1e-6));
    CHECK(val.core == doctest::Approx(a.best_val.core).epsilon(1e-6));

    write_train_log(a.log, tmp.path / "log.jsonl");
    std::ifstream in(tmp.path / "log.jsonl");
    int lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == static_cast<int>(a.log.iters.size() + a.log.epochs.size()));
}

TEST_CASE("train_cv: fold hygiene and report aggregation") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::BL1, tmp);
    cfg.epochs = 1;

    std::vector<data::Case> cases;
    std::vector<std::string> ids;
    for (int i = 0; i < 6; ++i) {
        cases.push_back(data::synth_case(200 + static_cast<std::uint64_t>(i), {1, 64, 64}));
        ids.push_back(cases.back().case_id);
    }
    const data::FoldSplit split = data::make_folds(ids, 3, 5);

    const CvResult cv = train_cv(cases, split, cfg);
    REQUIRE(cv.folds.size() == 3);
    REQUIRE(cv.report.folds.size() == 3);
    CHECK(cv.report.tag == "BL1");

    double mp = 0, mc = 0;
    for (const auto& f : cv.report.folds) {
        mp += f.penumbra;
        mc += f.core;
    }
    CHECK(cv.report.mean_penumbra == doctest::Approx(mp / 3).epsilon(1e-12));
    CHECK(cv.report.mean_core == doctest::Approx(mc / 3).epsilon(1e-12));

    // only_fold trains exactly one fold
    const CvResult one = train_cv(cases, split, cfg, 1);
    CHECK(one.folds.size() == 1);
    CHECK(one.folds[0].fold == 1);

    // a split mentioning unknown ids is rejected
    data::FoldSplit bad = split;
    bad.folds[0].push_back("ghost");
    CHECK_THROWS_AS(train_cv(cases, bad, cfg), DataError);
}

TEST_CASE("config validation") {
    TempDir tmp;
    TrainConfig cfg = tiny_config(Ablation::BL1, tmp);
    cfg.epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config(Ablation::BL1, tmp);
    cfg.device = "cuda";
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config(Ablation::BL1, tmp);
    cfg.boundary_factor = 0.5f;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
}
