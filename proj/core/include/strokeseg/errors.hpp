#pragma once

#include <stdexcept>
#include <string>

namespace strokeseg {

/// Base class for all toolkit errors. The CLI maps subtypes to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A case directory lacks one of the required sequences or masks.
struct MissingModality : Error {
    explicit MissingModality(const std::string& name)
        : Error("missing modality or mask: " + name), modality(name) {}
    std::string modality;
};

/// Volumes or arrays that must share a shape do not.
struct ShapeMismatch : Error {
    using Error::Error;
};

/// A file exists but cannot be parsed (bad header, truncated data, ...).
struct UnreadableFile : Error {
    using Error::Error;
};

/// Fewer cases than folds requested.
struct TooFewCases : Error {
    using Error::Error;
};

/// A loss term became NaN/Inf during training.
struct NonFiniteLoss : Error {
    NonFiniteLoss(const std::string& term, const std::string& context)
        : Error("non-finite loss term '" + term + "' (" + context + ")"), term(term) {}
    std::string term;
};

/// Unknown ablation tag.
struct UnknownTag : Error {
    using Error::Error;
};

/// Model configuration violates a structural constraint.
struct InvalidConfig : Error {
    using Error::Error;
};

/// Tensor fed to a model has the wrong shape.
struct ShapeError : Error {
    using Error::Error;
};

/// CLI / config-file level problems.
struct ConfigError : Error {
    using Error::Error;
};

/// Dataset level problems surfaced by the CLI.
struct DataError : Error {
    using Error::Error;
};

/// Checkpoint incompatible with the requested model or data.
struct CheckpointMismatch : Error {
    using Error::Error;
};

/// Filesystem write/read failures.
struct IOError : Error {
    using Error::Error;
};

}  // namespace strokeseg
