#include "strokeseg/evaluation.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <sstream>

namespace strokeseg::evaluation {

using nlohmann::json;

double dice(const ByteTensor& pred, const ByteTensor& gt) {
    if (pred.shape() != gt.shape())
        throw ShapeMismatch("dice: pred " + Tensor::shape_str(pred.shape()) + " vs gt " +
                            Tensor::shape_str(gt.shape()));
    std::int64_t inter = 0, a = 0, b = 0;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        a += p;
        b += g;
    }
    if (a + b == 0) return 1.0;  // both empty
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

CvReport CvReport::from_folds(std::string tag, std::vector<FoldMean> folds) {
    CvReport r;
    r.tag = std::move(tag);
    r.folds = std::move(folds);
    if (!r.folds.empty()) {
        for (const auto& f : r.folds) {
            r.mean_penumbra += f.penumbra;
            r.mean_core += f.core;
        }
        r.mean_penumbra /= static_cast<double>(r.folds.size());
        r.mean_core /= static_cast<double>(r.folds.size());
    }
    return r;
}

IntTensor predict_case(models::Segmenter& segmenter, const data::Case& c,
                       const EvalOptions& opts) {
    const std::vector<data::SliceSample> slices = data::extract_slices(c, opts.slices);
    const int d = c.penumbra_mask.depth(), h = c.penumbra_mask.height(),
              w = c.penumbra_mask.width();
    if (static_cast<int>(slices.size()) != d)
        throw ShapeError("predict_case: slice count mismatch");

    const auto [py, py2] = data::pad_offsets(h, opts.slices.pad_multiple);
    const auto [px, px2] = data::pad_offsets(w, opts.slices.pad_multiple);
    (void)py2;
    (void)px2;

    IntTensor out({d, h, w});
    const int bs = std::max(1, opts.batch_size);
    for (int z0 = 0; z0 < d; z0 += bs) {
        const int zb = std::min(d, z0 + bs);
        const int ph = slices[static_cast<size_t>(z0)].input.dim(1);
        const int pw = slices[static_cast<size_t>(z0)].input.dim(2);
        Tensor batch({zb - z0, 3, ph, pw});
        for (int z = z0; z < zb; ++z)
            std::copy(slices[static_cast<size_t>(z)].input.data(),
                      slices[static_cast<size_t>(z)].input.data() + 3LL * ph * pw,
                      batch.data() + static_cast<std::int64_t>(z - z0) * 3 * ph * pw);
        const Tensor logits = segmenter.forward(batch, /*train=*/false, /*cache=*/false);
        const IntTensor pred = nn::argmax_channels(logits);
        for (int z = z0; z < zb; ++z)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out.at(z, y, x) = pred.at(z - z0, y + py, x + px);
    }
    return out;
}

std::vector<DiceScores> evaluate_fold(const PredictFn& predict,
                                      const std::vector<data::Case>& held_out,
                                      const EvalOptions& opts) {
    std::vector<DiceScores> scores;
    scores.reserve(held_out.size());
    for (const data::Case& c : held_out) {
        const IntTensor pred = predict(c);
        const IntTensor gt = data::encode_labels(c.penumbra_mask, c.core_mask);

        auto mask_eq = [](const IntTensor& t, int cls) {
            ByteTensor m(t.shape());
            for (std::int64_t i = 0; i < t.numel(); ++i) m[i] = t[i] == cls ? 1 : 0;
            return m;
        };

        DiceScores s;
        s.case_id = c.case_id;
        if (opts.inclusive_penumbra) {
            ByteTensor pred_pen(pred.shape()), gt_pen(pred.shape());
            for (std::int64_t i = 0; i < pred.numel(); ++i) {
                pred_pen[i] = pred[i] >= 1 ? 1 : 0;
                gt_pen[i] = c.penumbra_mask.vox[i] != 0.0f ? 1 : 0;
            }
            s.penumbra = dice(pred_pen, gt_pen);
        } else {
            s.penumbra = dice(mask_eq(pred, 1), mask_eq(gt, 1));
        }
        s.core = dice(mask_eq(pred, 2), mask_eq(gt, 2));
        scores.push_back(std::move(s));
    }
    return scores;
}

std::vector<DiceScores> evaluate_fold(models::Segmenter& segmenter,
                                      const std::vector<data::Case>& held_out,
                                      const EvalOptions& opts) {
    return evaluate_fold(
        [&segmenter, &opts](const data::Case& c) { return predict_case(segmenter, c, opts); },
        held_out, opts);
}

FoldMean mean_scores(const std::vector<DiceScores>& scores) {
    FoldMean m;
    if (scores.empty()) return m;
    for (const auto& s : scores) {
        m.penumbra += s.penumbra;
        m.core += s.core;
    }
    m.penumbra /= static_cast<double>(scores.size());
    m.core /= static_cast<double>(scores.size());
    return m;
}

namespace {

const std::array<const char*, 8> kTableOrder{"BL1", "BL2", "BL3", "BL4",
                                             "BL5", "BL6", "BL7", "Proposed"};

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

std::string render_table(const std::vector<CvReport>& reports) {
    std::ostringstream os;
    os << "|          |";
    for (const char* tag : kTableOrder) os << " " << tag << " |";
    os << "\n|----------|";
    for (const char* tag : kTableOrder) {
        (void)tag;
        os << "-------|";
    }
    os << "\n";

    auto row = [&](const char* label, auto value) {
        os << "| " << label << (std::string(label) == "Core" ? "     " : " ") << "|";
        for (const char* tag : kTableOrder) {
            const CvReport* found = nullptr;
            for (const auto& r : reports)
                if (r.tag == tag) found = &r;
            os << " " << (found ? fmt3(value(*found)) : std::string("—")) << " |";
        }
        os << "\n";
    };
    row("Penumbra", [](const CvReport& r) { return r.mean_penumbra; });
    row("Core", [](const CvReport& r) { return r.mean_core; });
    return os.str();
}

std::string cv_report_to_json(const CvReport& report) {
    json folds = json::array();
    for (const auto& f : report.folds)
        folds.push_back(json{{"penumbra", f.penumbra}, {"core", f.core}});
    const json j{{"tag", report.tag},
                 {"folds", folds},
                 {"mean", json{{"penumbra", report.mean_penumbra}, {"core", report.mean_core}}}};
    return j.dump(2);
}

CvReport cv_report_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UnreadableFile(std::string("bad CvReport JSON: ") + e.what());
    }
    CvReport r;
    r.tag = j.at("tag").get<std::string>();
    for (const auto& f : j.at("folds"))
        r.folds.push_back(FoldMean{f.at("penumbra").get<double>(), f.at("core").get<double>()});
    r.mean_penumbra = j.at("mean").at("penumbra").get<double>();
    r.mean_core = j.at("mean").at("core").get<double>();
    return r;
}

}  // namespace strokeseg::evaluation
