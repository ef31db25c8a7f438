#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "strokeseg/morphology.hpp"
#include "strokeseg/tensor.hpp"

namespace strokeseg::data {

namespace fs = std::filesystem;

/// One scalar volume, shape (D,H,W), spacing in mm per axis (z,y,x).
struct Volume {
    Tensor vox;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

    int depth() const { return vox.dim(0); }
    int height() const { return vox.dim(1); }
    int width() const { return vox.dim(2); }
    const std::vector<int>& shape() const { return vox.shape(); }
};

enum class Modality { TMax, TTP, DWI };

constexpr std::array<Modality, 3> kModalityOrder{Modality::TMax, Modality::TTP, Modality::DWI};

std::string modality_name(Modality m);

/// One patient: three co-registered sequences plus penumbra/core masks.
/// Masks are 0/1 volumes; penumbra may overlap core (labels overlap in the
/// source data), encode_labels resolves the precedence.
struct Case {
    std::string case_id;
    std::map<Modality, Volume> modalities;
    Volume penumbra_mask;
    Volume core_mask;

    void validate() const;  // throws ShapeMismatch / MissingModality
};

/// One 2-d training example.
struct SliceSample {
    Tensor input;             // (3,H,W), modality order TMax,TTP,DWI
    IntTensor labels;         // (H,W) in {0,1,2}
    Tensor boundary_weights;  // (H,W) in {1, w_b}
    std::string case_id;
    int slice_index = 0;
};

struct FoldSplit {
    std::vector<std::vector<std::string>> folds;
    std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Reads `<dir>/{TMax,TTP,DWI,penumbra,core}.(nii|nii.gz|rawf32)`.
/// Masks are binarized at > 0.5.
Case load_case(const fs::path& case_dir);

/// 2 where core, else 1 where penumbra, else 0. Core wins overlaps.
IntTensor encode_labels(const Volume& penumbra_mask, const Volume& core_mask);

/// Z-score over the nonzero support; zeros stay zero; constant support
/// maps to all-zero.
Volume normalize_modality(const Volume& v);

struct SliceOptions {
    int pad_multiple = 32;
    morphology::WeightSpec weights{};
    bool drop_empty = false;  // discard all-background slices
};

/// Axial slices: per-volume normalization, symmetric zero padding to the
/// next multiple, boundary weights from the unpadded label map (padding
/// gets label 0 / weight 1).
std::vector<SliceSample> extract_slices(const Case& c, const SliceOptions& opts = {});

/// Deterministic seeded shuffle + round-robin assignment by case.
FoldSplit make_folds(std::vector<std::string> case_ids, int k, std::uint64_t seed);

/// Deterministic phantom: ellipsoidal penumbra, strictly-contained
/// concentric core, three pseudo-sequences with distinct region contrasts.
Case synth_case(std::uint64_t seed, std::array<int, 3> shape);

// ---------------------------------------------------------------------------
// On-disk formats
// ---------------------------------------------------------------------------

/// Flat little-endian float32, C-order (D,H,W), with a JSON sidecar
/// {"shape":[D,H,W],"spacing":[sz,sy,sx]}.
Volume read_rawf32(const fs::path& rawf32_path);
void write_rawf32(const Volume& v, const fs::path& rawf32_path);

/// Minimal NIfTI-1 reader (.nii and .nii.gz), common scalar dtypes only.
Volume read_nifti(const fs::path& path);

/// Dispatch by extension.
Volume read_volume(const fs::path& path);

std::vector<std::string> read_manifest(const fs::path& path);
void write_manifest(const std::vector<std::string>& ids, const fs::path& path);

/// Writes a case in the directory layout load_case expects (rawf32).
void write_case(const Case& c, const fs::path& case_dir);

/// Helper shared with evaluation: symmetric padding offsets taking `size`
/// to the next multiple of `multiple`.
std::pair<int, int> pad_offsets(int size, int multiple);

}  // namespace strokeseg::data
