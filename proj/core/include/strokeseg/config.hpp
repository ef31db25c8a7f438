#pragma once

#include <filesystem>
#include <string>

#include "strokeseg/training.hpp"

namespace strokeseg::config {

namespace fs = std::filesystem;

/// Everything a run needs: training hyper-structure plus data locations.
/// Sourced from a flat key=value file with [section] headers; unknown
/// sections or keys are rejected.
struct RunConfig {
    training::TrainConfig train;
    fs::path data_root;   // defaults to $STROKESEG_DATA_ROOT when empty
    fs::path manifest;    // resolved against data_root when relative
    fs::path output_dir = "out";
    int folds = 3;
    std::uint64_t fold_seed = 7;

    /// Resolves data_root from the environment if empty, then checks that
    /// the dataset paths exist.
    void resolve_and_check_paths();

    fs::path manifest_path() const;

    bool operator==(const RunConfig& other) const { return to_text() == other.to_text(); }

    /// Canonical config-file form; parse_run_config(to_text()) round-trips.
    std::string to_text() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const fs::path& path);

}  // namespace strokeseg::config
