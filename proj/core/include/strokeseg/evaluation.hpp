#pragma once

#include <functional>
#include <string>
#include <vector>

#include "strokeseg/data.hpp"
#include "strokeseg/models.hpp"
#include "strokeseg/tensor.hpp"

namespace strokeseg::evaluation {

/// Per-case overlap for the two lesion classes, computed on reassembled
/// 3-d volumes.
struct DiceScores {
    double penumbra = 0;
    double core = 0;
    std::string case_id;
};

struct FoldMean {
    double penumbra = 0;
    double core = 0;
};

/// Cross-validation summary for one ablation tag; the grand mean is the
/// arithmetic mean of fold means.
struct CvReport {
    std::string tag;
    std::vector<FoldMean> folds;
    double mean_penumbra = 0;
    double mean_core = 0;

    static CvReport from_folds(std::string tag, std::vector<FoldMean> folds);
};

/// 2|a AND b| / (|a| + |b|); 1.0 when both masks are empty.
double dice(const ByteTensor& pred, const ByteTensor& gt);

struct EvalOptions {
    /// Penumbra Dice against the raw (possibly core-overlapping) penumbra
    /// mask with prediction in {1,2}, instead of the exclusive class-1 map.
    bool inclusive_penumbra = false;
    data::SliceOptions slices{};
    int batch_size = 4;
};

/// Slices, pads, argmaxes, crops and restacks to the case's shape.
IntTensor predict_case(models::Segmenter& segmenter, const data::Case& c,
                       const EvalOptions& opts = {});

using PredictFn = std::function<IntTensor(const data::Case&)>;

std::vector<DiceScores> evaluate_fold(const PredictFn& predict,
                                      const std::vector<data::Case>& held_out,
                                      const EvalOptions& opts = {});

std::vector<DiceScores> evaluate_fold(models::Segmenter& segmenter,
                                      const std::vector<data::Case>& held_out,
                                      const EvalOptions& opts = {});

FoldMean mean_scores(const std::vector<DiceScores>& scores);

/// Markdown table in the fixed column order BL1..BL7, Proposed with
/// Penumbra/Core rows at 3 decimals; absent tags render as em-dashes.
std::string render_table(const std::vector<CvReport>& reports);

std::string cv_report_to_json(const CvReport& report);
CvReport cv_report_from_json(const std::string& text);

}  // namespace strokeseg::evaluation
