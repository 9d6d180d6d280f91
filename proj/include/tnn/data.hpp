#pragma once

#include "tnn/formats.hpp"
#include "tnn/network.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tnn {

/// Labeled samples: dense feature rows or token bags.
struct LabeledDataset {
    std::size_t feature_dim = 0;     // dense datasets
    std::vector<double> features;    // N x feature_dim, row-major
    std::vector<std::vector<std::size_t>> tokens;  // token datasets
    bool token_inputs = false;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;
    std::size_t image_rows = 0;  // set by the IDX loader
    std::size_t image_cols = 0;

    std::size_t size() const noexcept { return labels.size(); }
    /// Throws ShapeError if fields disagree or a label is out of range.
    void validate() const;
    InputBatch gather(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> gather_labels(std::span<const std::size_t> indices) const;
    /// First n samples (all if n >= size()).
    LabeledDataset head(std::size_t n) const;
    /// All samples as one batch.
    InputBatch all_inputs() const;

    friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct IdxImages {
    std::uint32_t count = 0;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::vector<std::uint8_t> pixels;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Throw FormatError carrying the byte offset of the failure.
IdxImages parse_idx_images(std::string_view bytes);
std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes);
std::string encode_idx_images(const IdxImages& images);
std::string encode_idx_labels(std::span<const std::uint8_t> labels);

/// Pixels scaled by 1/255; ten classes.
LabeledDataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
LabeledDataset mnist_from_idx(const IdxImages& images, std::span<const std::uint8_t> labels);
/// Inverse of the loader: bytes of the image and label files.
std::string dataset_to_idx_images(const LabeledDataset& ds);
std::string dataset_to_idx_labels(const LabeledDataset& ds);

/// Standard MNIST file names inside `dir`; `train` selects the 60k split.
LabeledDataset load_mnist_dir(const std::filesystem::path& dir, bool train);

/// One-layer generator for a synthetic ground-truth-rank task.
struct SyntheticSpec {
    FormatKind kind = FormatKind::CP;
    Shape dims;                          // tensor modes; row dims for TTM
    Shape col_dims;                      // TTM only
    std::vector<std::size_t> ranks;      // same layout as FactorizedLayer::max_ranks
    std::size_t num_classes = 0;         // 0: last mode (or product of TTM col dims)
    bool multinomial = false;            // sample labels from the softmax instead of argmax
    std::uint64_t seed = 0;
};

struct SyntheticTask {
    LabeledDataset data;
    TensorizedNetwork generator;
};

/// Generator network with N(0, 1) factor means at exactly the given ranks.
TensorizedNetwork make_generator(const SyntheticSpec& spec);

/// Labels `inputs` (dense, feature_dim = generator input) with the generator.
SyntheticTask gen_synthetic(const SyntheticSpec& spec, const LabeledDataset& inputs);

/// N x feature_dim inputs with N(0, 1) entries and no labels.
LabeledDataset gaussian_inputs(std::size_t n, std::size_t feature_dim, std::uint64_t seed);

/// Shuffled index slices covering [0, n); the final short batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed);

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace tnn
