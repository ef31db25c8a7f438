#include "strokeseg/training.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>

namespace strokeseg::training {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

AblationFlags ablation_flags(Ablation tag) {
    switch (tag) {
        case Ablation::BL1: return {false, false, false};
        case Ablation::BL2: return {false, false, true};
        case Ablation::BL3: return {false, true, false};
        case Ablation::BL4: return {false, true, true};
        case Ablation::BL5: return {true, false, false};
        case Ablation::BL6: return {true, false, true};
        case Ablation::BL7: return {true, true, false};
        case Ablation::Proposed: return {true, true, true};
    }
    throw UnknownTag("unknown ablation tag");
}

std::string ablation_name(Ablation tag) {
    switch (tag) {
        case Ablation::BL1: return "BL1";
        case Ablation::BL2: return "BL2";
        case Ablation::BL3: return "BL3";
        case Ablation::BL4: return "BL4";
        case Ablation::BL5: return "BL5";
        case Ablation::BL6: return "BL6";
        case Ablation::BL7: return "BL7";
        case Ablation::Proposed: return "Proposed";
    }
    throw UnknownTag("unknown ablation tag");
}

Ablation parse_ablation(const std::string& name) {
    std::string up;
    for (char c : name) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    for (Ablation a : all_ablations()) {
        std::string cand;
        for (char c : ablation_name(a))
            cand.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        if (up == cand) return a;
    }
    throw UnknownTag("unknown ablation tag '" + name +
                     "' (valid: BL1 BL2 BL3 BL4 BL5 BL6 BL7 PROPOSED)");
}

std::vector<Ablation> all_ablations() {
    return {Ablation::BL1, Ablation::BL2, Ablation::BL3,      Ablation::BL4,
            Ablation::BL5, Ablation::BL6, Ablation::BL7, Ablation::Proposed};
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidConfig("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw InvalidConfig("TrainConfig: batch_size must be >= 1");
    if (!(lr_segmenter > 0) || !(lr_discriminators > 0))
        throw InvalidConfig("TrainConfig: learning rates must be positive");
    if (val_interval < 1) throw InvalidConfig("TrainConfig: val_interval must be >= 1");
    if (!(boundary_factor >= 1)) throw InvalidConfig("TrainConfig: boundary_factor must be >= 1");
    if (boundary_iterations < 1)
        throw InvalidConfig("TrainConfig: boundary_iterations must be >= 1");
    if (device != "cpu") throw InvalidConfig("TrainConfig: only device=cpu is supported");
    loss_weights.validate();
    effective_model().validate();
}

losses::LossWeights TrainConfig::effective_weights() const {
    const AblationFlags f = ablation_flags(ablation);
    losses::LossWeights w = loss_weights;
    if (!f.extra_losses) {
        w.ls = 0;
        w.bd = 0;
    }
    if (!f.adversarial) w.adv = 0;
    return w;
}

models::SegmenterConfig TrainConfig::effective_model() const {
    models::SegmenterConfig m = model;
    m.residual = ablation_flags(ablation).residual;
    return m;
}

data::SliceOptions TrainConfig::slice_options() const {
    data::SliceOptions opts;
    opts.weights.boundary_factor = boundary_factor;
    opts.weights.iterations = boundary_iterations;
    opts.drop_empty = drop_empty_slices;
    return opts;
}

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

void write_train_log(const TrainLog& log, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IOError("cannot write train log " + path.string());
    for (const auto& r : log.iters) {
        const json j{{"kind", "iter"},
                     {"fold", r.fold},
                     {"iteration", r.iteration},
                     {"ce", r.report.ce},
                     {"ls", r.report.ls},
                     {"bd", r.report.bd},
                     {"adv_g", r.report.adv_g},
                     {"adv_d_core", r.report.adv_d_core},
                     {"adv_d_pen", r.report.adv_d_pen},
                     {"adv_d_pair", r.report.adv_d_pair},
                     {"total", r.report.total}};
        out << j.dump() << "\n";
    }
    for (const auto& r : log.epochs) {
        const json j{{"kind", "epoch"},
                     {"fold", r.fold},
                     {"epoch", r.epoch},
                     {"val_penumbra", r.val_penumbra},
                     {"val_core", r.val_core},
                     {"wall_seconds", r.wall_seconds}};
        out << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

Batch collate(const std::vector<const data::SliceSample*>& samples) {
    if (samples.empty()) throw DataError("collate: empty batch");
    int h = 0, w = 0;
    for (const auto* s : samples) {
        h = std::max(h, s->input.dim(1));
        w = std::max(w, s->input.dim(2));
    }
    const int b = static_cast<int>(samples.size());
    Batch out;
    out.input = Tensor({b, 3, h, w});
    out.labels = IntTensor({b, h, w});
    out.weights = Tensor({b, h, w}, 1.0f);
    for (int i = 0; i < b; ++i) {
        const auto& s = *samples[static_cast<size_t>(i)];
        const int sh = s.input.dim(1), sw = s.input.dim(2);
        const int oy = (h - sh) / 2, ox = (w - sw) / 2;
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < sh; ++y)
                for (int x = 0; x < sw; ++x)
                    out.input.at(i, c, y + oy, x + ox) = s.input.at(c, y, x);
        for (int y = 0; y < sh; ++y)
            for (int x = 0; x < sw; ++x) {
                out.labels.at(i, y + oy, x + ox) = s.labels.at(y, x);
                out.weights.at(i, y + oy, x + ox) = s.boundary_weights.at(y, x);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

AdversarialModels AdversarialModels::build(const TrainConfig& cfg) {
    cfg.validate();
    const AblationFlags flags = ablation_flags(cfg.ablation);

    AdversarialModels m;
    m.segmenter = std::make_unique<models::Segmenter>(cfg.effective_model(), cfg.seed);
    m.opt_segmenter = std::make_unique<nn::Adam>(m.segmenter->params(), cfg.lr_segmenter);

    if (flags.adversarial) {
        const std::array<std::pair<const char*, int>, 3> heads{
            std::pair{"core", 4}, std::pair{"pen", 4}, std::pair{"pair", 5}};
        std::uint64_t sub_seed = cfg.seed + 1;
        for (auto [name, in_ch] : heads) {
            models::DiscriminatorConfig dc;
            dc.in_channels = in_ch;
            dc.base_width = cfg.disc_base_width;
            dc.num_downsamples = cfg.disc_downsamples;
            m.discriminators.push_back(
                std::make_unique<models::Discriminator>(dc, sub_seed++, name));
            m.opt_discriminators.push_back(std::make_unique<nn::Adam>(
                m.discriminators.back()->params(), cfg.lr_discriminators));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Steps
// ---------------------------------------------------------------------------

namespace {

void axpy(float a, const Tensor& x, Tensor& y) {
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] += a * x[i];
}

/// Flatten (B,1) scores to (B).
Tensor flat_scores(Tensor t) {
    t.reshape({t.dim(0)});
    return t;
}

struct GeneratorPass {
    losses::LossReport report;
    Tensor dlogits;  // empty when gradients were not requested
};

// channel ranges each head's extra input occupies in the 3-class prob map
constexpr std::array<std::pair<int, int>, 3> kHeadChannels{
    std::pair{2, 3},  // core
    std::pair{1, 2},  // penumbra
    std::pair{1, 3},  // pair
};

GeneratorPass generator_pass(AdversarialModels& m, const Batch& batch, const TrainConfig& cfg,
                             bool with_grad) {
    const losses::LossWeights lw = cfg.effective_weights();
    const AblationFlags flags = ablation_flags(cfg.ablation);

    models::Segmenter& seg = *m.segmenter;
    const Tensor logits = seg.forward(batch.input, /*train=*/true, /*cache=*/with_grad);
    const Tensor probs = nn::softmax_channels(logits);

    GeneratorPass out;
    Tensor dlogits(logits.shape());
    Tensor gprobs(probs.shape());
    bool have_prob_grads = false;

    // CE (always on)
    {
        Tensor g;
        const float ce = losses::cross_entropy(logits, batch.labels, with_grad ? &g : nullptr);
        out.report.ce = ce;
        if (with_grad) axpy(lw.ce, g, dlogits);
    }
    if (lw.ls > 0) {
        Tensor g;
        const float ls = losses::lovasz_softmax(probs, batch.labels, with_grad ? &g : nullptr);
        out.report.ls = ls;
        if (with_grad) {
            axpy(lw.ls, g, gprobs);
            have_prob_grads = true;
        }
    }
    if (lw.bd > 0) {
        Tensor g;
        const float bd =
            losses::boundary_nll_logits(logits, batch.labels, batch.weights, with_grad ? &g : nullptr);
        out.report.bd = bd;
        if (with_grad) axpy(lw.bd, g, dlogits);
    }

    if (flags.adversarial && lw.adv > 0) {
        const Tensor onehot = nn::one_hot_channels<float>(batch.labels, 3);
        const models::AdversaryInputs adv =
            models::discriminator_inputs(probs, onehot, batch.input);
        const std::array<const Tensor*, 3> reals{&adv.core_real, &adv.pen_real, &adv.pair_real};
        const std::array<const Tensor*, 3> fakes{&adv.core_fake, &adv.pen_fake, &adv.pair_fake};

        double adv_g = 0;
        for (size_t h = 0; h < m.discriminators.size(); ++h) {
            models::Discriminator& d = *m.discriminators[h];
            const Tensor r = flat_scores(d.forward(*reals[h], /*train=*/true, /*cache=*/false));
            const Tensor f = flat_scores(d.forward(*fakes[h], /*train=*/true, /*cache=*/with_grad));
            Tensor gf;
            adv_g += losses::ragan_g_loss(r, f, with_grad ? &gf : nullptr);
            if (!with_grad) continue;

            gf.reshape({gf.dim(0), 1});
            const Tensor gin = d.backward(gf, /*param_grads=*/false);
            // channels beyond the 3 input sequences are the prob slices
            const auto [from, to] = kHeadChannels[h];
            const int nch = to - from;
            const int hh = gin.dim(2), ww = gin.dim(3);
            for (int i = 0; i < gin.dim(0); ++i)
                for (int c = 0; c < nch; ++c)
                    for (int y = 0; y < hh; ++y)
                        for (int x = 0; x < ww; ++x)
                            gprobs.at(i, from + c, y, x) += lw.adv * gin.at(i, 3 + c, y, x);
            have_prob_grads = true;
        }
        out.report.adv_g = adv_g;
    }

    losses::composite_loss(static_cast<float>(out.report.ce), static_cast<float>(out.report.ls),
                           static_cast<float>(out.report.bd), static_cast<float>(out.report.adv_g),
                           lw, &out.report);

    if (with_grad) {
        if (have_prob_grads) dlogits += nn::softmax_backward(probs, gprobs);
        out.dlogits = std::move(dlogits);
    } else {
        // drop the segmenter cache we never created; nothing to do
    }
    return out;
}

}  // namespace

losses::LossReport evaluate_generator_loss(AdversarialModels& m, const Batch& batch,
                                           const TrainConfig& cfg) {
    return generator_pass(m, batch, cfg, /*with_grad=*/false).report;
}

losses::LossReport train_step(AdversarialModels& m, const Batch& batch, const TrainConfig& cfg) {
    const AblationFlags flags = ablation_flags(cfg.ablation);
    const bool adversarial_active =
        flags.adversarial && cfg.effective_weights().adv > 0 && !m.discriminators.empty();

    GeneratorPass pass = generator_pass(m, batch, cfg, /*with_grad=*/true);

    m.opt_segmenter->zero_grad();
    m.segmenter->backward(pass.dlogits, /*param_grads=*/true);
    m.opt_segmenter->step();

    if (adversarial_active) {
        // rebuild the fake inputs from the pre-update probabilities;
        // values only, so the segmenter is severed by construction
        const Tensor logits = m.segmenter->forward(batch.input, /*train=*/true, /*cache=*/false);
        const Tensor probs = nn::softmax_channels(logits);
        const Tensor onehot = nn::one_hot_channels<float>(batch.labels, 3);
        const models::AdversaryInputs adv =
            models::discriminator_inputs(probs, onehot, batch.input);
        const std::array<const Tensor*, 3> reals{&adv.core_real, &adv.pen_real, &adv.pair_real};
        const std::array<const Tensor*, 3> fakes{&adv.core_fake, &adv.pen_fake, &adv.pair_fake};

        std::array<double, 3> d_losses{0, 0, 0};
        for (size_t h = 0; h < m.discriminators.size(); ++h) {
            models::Discriminator& d = *m.discriminators[h];
            const Tensor r = flat_scores(d.forward(*reals[h], /*train=*/true, /*cache=*/true));
            const Tensor f = flat_scores(d.forward(*fakes[h], /*train=*/true, /*cache=*/true));
            Tensor gr, gf;
            d_losses[h] = losses::ragan_d_loss(r, f, &gr, &gf);
            if (!std::isfinite(d_losses[h]))
                throw NonFiniteLoss("adv_d_" + d.name(), "train_step");
            gr.reshape({gr.dim(0), 1});
            gf.reshape({gf.dim(0), 1});
            m.opt_discriminators[h]->zero_grad();
            d.backward(gf, /*param_grads=*/true);  // LIFO: fake cache first
            d.backward(gr, /*param_grads=*/true);
            m.opt_discriminators[h]->step();
        }
        pass.report.adv_d_core = d_losses[0];
        pass.report.adv_d_pen = d_losses[1];
        pass.report.adv_d_pair = d_losses[2];
    }
    return pass.report;
}

// ---------------------------------------------------------------------------
// Slice-level evaluation
// ---------------------------------------------------------------------------

evaluation::FoldMean evaluate_slices(models::Segmenter& segmenter,
                                     const std::vector<data::SliceSample>& slices,
                                     int batch_size) {
    if (slices.empty()) return {};
    double pen = 0, core = 0;
    size_t done = 0;
    while (done < slices.size()) {
        const size_t take = std::min<size_t>(static_cast<size_t>(batch_size), slices.size() - done);
        std::vector<const data::SliceSample*> group;
        for (size_t i = 0; i < take; ++i) group.push_back(&slices[done + i]);
        const Batch b = collate(group);
        const Tensor logits = segmenter.forward(b.input, /*train=*/false, /*cache=*/false);
        const IntTensor pred = nn::argmax_channels(logits);
        const int h = pred.dim(1), w = pred.dim(2);
        for (size_t i = 0; i < take; ++i) {
            ByteTensor p1({h, w}), g1({h, w}), p2({h, w}), g2({h, w});
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int pv = pred.at(static_cast<int>(i), y, x);
                    const int gv = b.labels.at(static_cast<int>(i), y, x);
                    p1.at(y, x) = pv == 1;
                    g1.at(y, x) = gv == 1;
                    p2.at(y, x) = pv == 2;
                    g2.at(y, x) = gv == 2;
                }
            pen += evaluation::dice(p1, g1);
            core += evaluation::dice(p2, g2);
        }
        done += take;
    }
    return {pen / static_cast<double>(slices.size()), core / static_cast<double>(slices.size())};
}

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

FoldResult train_loop(const std::vector<data::SliceSample>& train_slices,
                      const ValidateFn& validate, const TrainConfig& cfg, int fold_index) {
    cfg.validate();
    if (train_slices.empty()) throw DataError("train_loop: no training slices");

    AdversarialModels m = AdversarialModels::build(cfg);

    FoldResult result;
    result.fold = fold_index;
    result.best_val = {-1.0, -1.0};

    std::error_code ec;
    fs::create_directories(cfg.checkpoint_dir, ec);
    result.checkpoint_path =
        cfg.checkpoint_dir /
        (ablation_name(cfg.ablation) + "_fold" + std::to_string(fold_index) + ".ckpt");

    const auto t0 = std::chrono::steady_clock::now();
    int iteration = 0;
    std::vector<size_t> order(train_slices.size());
    std::iota(order.begin(), order.end(), size_t{0});

    double best_mean = -1.0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng epoch_rng(cfg.seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch));
        deterministic_shuffle(order, epoch_rng);

        for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
            std::vector<const data::SliceSample*> group;
            for (size_t i = pos; i < std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size)); ++i)
                group.push_back(&train_slices[order[i]]);
            try {
                IterRecord rec;
                rec.fold = fold_index;
                rec.iteration = ++iteration;
                rec.report = train_step(m, collate(group), cfg);
                result.log.iters.push_back(rec);
            } catch (const NonFiniteLoss& e) {
                throw NonFiniteLoss(e.term, "fold " + std::to_string(fold_index) + " iteration " +
                                                std::to_string(iteration));
            }
        }

        if (epoch % cfg.val_interval == 0 || epoch == cfg.epochs) {
            const evaluation::FoldMean val = validate(*m.segmenter);
            EpochRecord rec;
            rec.fold = fold_index;
            rec.epoch = epoch;
            rec.val_penumbra = val.penumbra;
            rec.val_core = val.core;
            rec.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.log.epochs.push_back(rec);

            const double mean = (val.penumbra + val.core) / 2.0;
            if (mean > best_mean) {
                best_mean = mean;
                result.best_val = val;
                std::vector<models::Discriminator*> discs;
                for (auto& d : m.discriminators) discs.push_back(d.get());
                const json meta{{"ablation", ablation_name(cfg.ablation)},
                                {"fold", fold_index},
                                {"seed", cfg.seed},
                                {"epoch", epoch},
                                {"val_penumbra", val.penumbra},
                                {"val_core", val.core}};
                models::save_checkpoint(result.checkpoint_path, *m.segmenter, discs, meta.dump());
            }
        }
    }
    return result;
}

FoldResult train_on_slices(const std::vector<data::SliceSample>& slices, const TrainConfig& cfg,
                           int fold_index) {
    return train_loop(
        slices,
        [&slices, &cfg](models::Segmenter& s) {
            return evaluate_slices(s, slices, cfg.batch_size);
        },
        cfg, fold_index);
}

CvResult train_cv(const std::vector<data::Case>& cases, const data::FoldSplit& split,
                  const TrainConfig& cfg, std::optional<int> only_fold) {
    cfg.validate();

    std::set<std::string> known;
    for (const auto& c : cases) known.insert(c.case_id);

    CvResult result;
    result.split = split;

    std::vector<evaluation::FoldMean> fold_means;
    for (size_t f = 0; f < split.folds.size(); ++f) {
        if (only_fold && static_cast<size_t>(*only_fold) != f) continue;

        std::set<std::string> val_ids(split.folds[f].begin(), split.folds[f].end());
        for (const auto& id : val_ids)
            if (!known.count(id)) throw DataError("train_cv: fold id '" + id + "' not in dataset");

        std::vector<data::Case> val_cases;
        std::vector<data::SliceSample> train_slices;
        std::set<std::string> train_ids;
        for (const auto& c : cases) {
            if (val_ids.count(c.case_id)) {
                val_cases.push_back(c);
            } else {
                train_ids.insert(c.case_id);
                for (auto& s : data::extract_slices(c, cfg.slice_options()))
                    train_slices.push_back(std::move(s));
            }
        }
        for (const auto& id : val_ids)
            if (train_ids.count(id))
                throw DataError("train_cv: case '" + id + "' in both train and validation");

        evaluation::EvalOptions eopts;
        eopts.inclusive_penumbra = cfg.inclusive_penumbra;
        eopts.slices = cfg.slice_options();
        eopts.slices.drop_empty = false;  // evaluation always sees every slice
        eopts.batch_size = cfg.batch_size;

        FoldResult fr = train_loop(
            train_slices,
            [&val_cases, &eopts](models::Segmenter& s) {
                return evaluation::mean_scores(evaluation::evaluate_fold(s, val_cases, eopts));
            },
            cfg, static_cast<int>(f));
        fold_means.push_back(fr.best_val);
        result.folds.push_back(std::move(fr));
    }

    result.report = evaluation::CvReport::from_folds(ablation_name(cfg.ablation), fold_means);
    return result;
}

}  // namespace strokeseg::training
