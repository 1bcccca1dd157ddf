#pragma once

#include <stdexcept>
#include <string>

namespace flowtok {

// Error taxonomy used across the library. Every contract violation throws a
// named type so callers (and the CLI exit-code mapping) can tell config
// problems from missing artifacts from runtime failures.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyDataset : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetTooSmall : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DoubleNormalize : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NormalizedLatentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StageOrderError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteLoss : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A required upstream artifact (checkpoint, manifest entry) is absent.
struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace flowtok
