#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "strokeseg/data.hpp"
#include "strokeseg/evaluation.hpp"
#include "strokeseg/losses.hpp"
#include "strokeseg/models.hpp"
#include "strokeseg/nn.hpp"

namespace strokeseg::training {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Ablation grid
// ---------------------------------------------------------------------------

enum class Ablation { BL1, BL2, BL3, BL4, BL5, BL6, BL7, Proposed };

struct AblationFlags {
    bool residual = false;
    bool adversarial = false;
    bool extra_losses = false;  // Lovász-Softmax + boundary NLL on top of CE
};

/// BL1..BL7 and Proposed enumerate {residual} x {adversarial} x {extra}.
AblationFlags ablation_flags(Ablation tag);
Ablation parse_ablation(const std::string& name);  // throws UnknownTag
std::string ablation_name(Ablation tag);
std::vector<Ablation> all_ablations();

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct TrainConfig {
    Ablation ablation = Ablation::Proposed;
    int epochs = 10;
    int batch_size = 4;
    float lr_segmenter = 1e-4f;
    float lr_discriminators = 1e-4f;
    losses::LossWeights loss_weights{};
    std::uint64_t seed = 7;
    std::string device = "cpu";
    fs::path checkpoint_dir = "checkpoints";
    float boundary_factor = 10.0f;
    int boundary_iterations = 1;
    models::SegmenterConfig model{};  // `residual` is overridden by the ablation
    int disc_base_width = 64;
    int disc_downsamples = 4;
    int val_interval = 1;
    bool drop_empty_slices = false;
    bool inclusive_penumbra = false;

    void validate() const;

    /// Loss weights with the ablation's zeroing applied
    /// (no extra losses -> ls=bd=0; no adversary -> adv=0).
    losses::LossWeights effective_weights() const;

    /// Model config with `residual` taken from the ablation.
    models::SegmenterConfig effective_model() const;

    data::SliceOptions slice_options() const;
};

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

struct IterRecord {
    int fold = 0;
    int iteration = 0;
    losses::LossReport report;
};

struct EpochRecord {
    int fold = 0;
    int epoch = 0;
    double val_penumbra = 0;
    double val_core = 0;
    double wall_seconds = 0;  // excluded from determinism comparisons
};

struct TrainLog {
    std::vector<IterRecord> iters;
    std::vector<EpochRecord> epochs;
};

/// Line-delimited JSON, one record per line.
void write_train_log(const TrainLog& log, const fs::path& path);

// ---------------------------------------------------------------------------
// Batches
// ---------------------------------------------------------------------------

struct Batch {
    Tensor input;      // (B,3,H,W)
    IntTensor labels;  // (B,H,W)
    Tensor weights;    // (B,H,W)
};

/// Pads every sample to the largest H,W in the batch (labels 0, weights 1).
Batch collate(const std::vector<const data::SliceSample*>& samples);

// ---------------------------------------------------------------------------
// Models + optimizers for one run
// ---------------------------------------------------------------------------

struct AdversarialModels {
    std::unique_ptr<models::Segmenter> segmenter;
    std::vector<std::unique_ptr<models::Discriminator>> discriminators;  // core, pen, pair
    std::unique_ptr<nn::Adam> opt_segmenter;
    std::vector<std::unique_ptr<nn::Adam>> opt_discriminators;

    static AdversarialModels build(const TrainConfig& cfg);
};

/// One alternating update: segmenter step under the composite loss, then
/// (when adversarial) one RaGAN step per discriminator on the same batch
/// with the fake branch severed from the segmenter.
losses::LossReport train_step(AdversarialModels& m, const Batch& batch, const TrainConfig& cfg);

/// Composite generator loss on a batch without any update (train-mode
/// statistics, no caching).
losses::LossReport evaluate_generator_loss(AdversarialModels& m, const Batch& batch,
                                           const TrainConfig& cfg);

/// 2-d Dice per slice (argmax vs labels), averaged; defined-empty rule.
evaluation::FoldMean evaluate_slices(models::Segmenter& segmenter,
                                     const std::vector<data::SliceSample>& slices,
                                     int batch_size = 4);

// ---------------------------------------------------------------------------
// Training drivers
// ---------------------------------------------------------------------------

struct FoldResult {
    int fold = 0;
    TrainLog log;
    evaluation::FoldMean best_val;
    fs::path checkpoint_path;
};

using ValidateFn = std::function<evaluation::FoldMean(models::Segmenter&)>;

/// Epoch loop over slices with deterministic per-epoch shuffling and
/// best-by-mean-Dice checkpointing.
FoldResult train_loop(const std::vector<data::SliceSample>& train_slices,
                      const ValidateFn& validate, const TrainConfig& cfg, int fold_index);

/// train = validate = the given slices (overfit / smoke regimes).
FoldResult train_on_slices(const std::vector<data::SliceSample>& slices, const TrainConfig& cfg,
                           int fold_index = 0);

struct CvResult {
    evaluation::CvReport report;
    std::vector<FoldResult> folds;
    data::FoldSplit split;
};

/// k-fold cross-validation over cases (split strictly by case id).
/// Throws DataError if any id would land in both train and validation.
CvResult train_cv(const std::vector<data::Case>& cases, const data::FoldSplit& split,
                  const TrainConfig& cfg, std::optional<int> only_fold = std::nullopt);

}  // namespace strokeseg::training
