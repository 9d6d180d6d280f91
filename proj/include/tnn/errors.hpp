#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tnn {

/// Raised when tensor, factor or matrix dimensions do not line up.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when pruning would remove every rank component of some mode.
class RankCollapseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed on-disk input (IDX files, blobs, checkpoints, run specs).
/// `offset` is the byte position of the failure where that is meaningful.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset = 0)
        : std::runtime_error(what), offset_(offset) {}
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Training hit a non-finite loss.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(const std::string& what, int epoch, std::size_t batch, int layer)
        : std::runtime_error(what), epoch_(epoch), batch_(batch), layer_(layer) {}
    int epoch() const noexcept { return epoch_; }
    std::size_t batch() const noexcept { return batch_; }
    /// -1 when no single layer could be blamed.
    int layer() const noexcept { return layer_; }

private:
    int epoch_;
    std::size_t batch_;
    int layer_;
};

}  // namespace tnn
