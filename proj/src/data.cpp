#include "tnn/data.hpp"

#include "tnn/blob.hpp"
#include "tnn/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace tnn {

namespace {

std::uint32_t read_be32(std::string_view bytes, std::size_t offset, const char* what) {
    if (offset + 4 > bytes.size()) {
        throw FormatError(std::string("IDX file truncated while reading ") + what, offset);
    }
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

void put_be32(std::string& out, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::string hex32(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", v);
    return buf;
}

}  // namespace

void LabeledDataset::validate() const {
    if (labels.empty()) throw ShapeError("dataset is empty");
    if (num_classes == 0) throw ShapeError("dataset has no classes");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw ShapeError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                             " is out of range for " + std::to_string(num_classes) + " classes");
        }
    }
    if (token_inputs) {
        if (tokens.size() != labels.size()) throw ShapeError("token bag count does not match label count");
    } else if (feature_dim == 0 || features.size() != labels.size() * feature_dim) {
        throw ShapeError("feature buffer does not hold N x feature_dim values");
    }
}

InputBatch LabeledDataset::gather(std::span<const std::size_t> indices) const {
    if (token_inputs) {
        std::vector<std::vector<std::size_t>> bags;
        bags.reserve(indices.size());
        for (std::size_t i : indices) bags.push_back(tokens.at(i));
        return token_batch(std::move(bags));
    }
    DenseTensor x({indices.size(), feature_dim});
    auto out = x.data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= size()) throw std::out_of_range("sample index out of range");
        std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(indices[r] * feature_dim), feature_dim,
                    out.begin() + static_cast<std::ptrdiff_t>(r * feature_dim));
    }
    return dense_batch(std::move(x));
}

std::vector<std::size_t> LabeledDataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

LabeledDataset LabeledDataset::head(std::size_t n) const {
    n = std::min(n, size());
    LabeledDataset out = *this;
    out.labels.resize(n);
    if (token_inputs) {
        out.tokens.resize(n);
    } else {
        out.features.resize(n * feature_dim);
    }
    return out;
}

InputBatch LabeledDataset::all_inputs() const {
    std::vector<std::size_t> idx(size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return gather(idx);
}

IdxImages parse_idx_images(std::string_view bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kIdxImageMagic) {
        throw FormatError("bad IDX image magic " + hex32(magic) + ", expected 0x00000803", 0);
    }
    IdxImages img;
    img.count = read_be32(bytes, 4, "image count");
    img.rows = read_be32(bytes, 8, "row count");
    img.cols = read_be32(bytes, 12, "column count");
    const std::size_t need = static_cast<std::size_t>(img.count) * img.rows * img.cols;
    if (bytes.size() - 16 < need) {
        throw FormatError("IDX image data truncated: need " + std::to_string(need) + " pixel bytes", bytes.size());
    }
    if (bytes.size() - 16 > need) throw FormatError("trailing bytes after IDX image data", 16 + need);
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(need));
    return img;
}

std::vector<std::uint8_t> parse_idx_labels(std::string_view bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kIdxLabelMagic) {
        throw FormatError("bad IDX label magic " + hex32(magic) + ", expected 0x00000801", 0);
    }
    const std::uint32_t count = read_be32(bytes, 4, "label count");
    if (bytes.size() - 8 < count) {
        throw FormatError("IDX label data truncated: need " + std::to_string(count) + " label bytes", bytes.size());
    }
    if (bytes.size() - 8 > count) throw FormatError("trailing bytes after IDX label data", 8 + count);
    return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.end());
}

std::string encode_idx_images(const IdxImages& images) {
    std::string out;
    out.reserve(16 + images.pixels.size());
    put_be32(out, kIdxImageMagic);
    put_be32(out, images.count);
    put_be32(out, images.rows);
    put_be32(out, images.cols);
    out.append(images.pixels.begin(), images.pixels.end());
    return out;
}

std::string encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::string out;
    out.reserve(8 + labels.size());
    put_be32(out, kIdxLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.append(labels.begin(), labels.end());
    return out;
}

LabeledDataset mnist_from_idx(const IdxImages& images, std::span<const std::uint8_t> labels) {
    if (labels.size() != images.count) {
        // Offset 4 is the count field of the label file.
        throw FormatError("label count " + std::to_string(labels.size()) + " does not match image count " +
                              std::to_string(images.count),
                          4);
    }
    LabeledDataset ds;
    ds.feature_dim = static_cast<std::size_t>(images.rows) * images.cols;
    ds.image_rows = images.rows;
    ds.image_cols = images.cols;
    ds.features.resize(images.pixels.size());
    for (std::size_t i = 0; i < images.pixels.size(); ++i) ds.features[i] = images.pixels[i] / 255.0;
    ds.labels.assign(labels.begin(), labels.end());
    ds.num_classes = 10;
    for (std::size_t l : ds.labels) {
        if (l >= ds.num_classes) ds.num_classes = l + 1;
    }
    return ds;
}

LabeledDataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = parse_idx_images(read_file(images_path));
    const auto labels = parse_idx_labels(read_file(labels_path));
    return mnist_from_idx(images, labels);
}

LabeledDataset load_mnist_dir(const std::filesystem::path& dir, bool train) {
    const std::string prefix = train ? "train" : "t10k";
    return load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"));
}

std::string dataset_to_idx_images(const LabeledDataset& ds) {
    if (ds.image_rows * ds.image_cols != ds.feature_dim || ds.feature_dim == 0) {
        throw ShapeError("dataset has no image geometry");
    }
    IdxImages img;
    img.count = static_cast<std::uint32_t>(ds.size());
    img.rows = static_cast<std::uint32_t>(ds.image_rows);
    img.cols = static_cast<std::uint32_t>(ds.image_cols);
    img.pixels.resize(ds.features.size());
    for (std::size_t i = 0; i < ds.features.size(); ++i) {
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(ds.features[i], 0.0, 1.0) * 255.0));
    }
    return encode_idx_images(img);
}

std::string dataset_to_idx_labels(const LabeledDataset& ds) {
    std::vector<std::uint8_t> labels(ds.labels.begin(), ds.labels.end());
    return encode_idx_labels(labels);
}

TensorizedNetwork make_generator(const SyntheticSpec& spec) {
    const auto shapes = factor_shapes(spec.kind, spec.dims, spec.col_dims, spec.ranks);
    // Ranks may not exceed what the modes can support.
    switch (spec.kind) {
        case FormatKind::CP:
            for (std::size_t d : spec.dims) {
                if (spec.ranks[0] > d) throw ShapeError("CP rank exceeds a mode size");
            }
            break;
        case FormatKind::Tucker:
            for (std::size_t n = 0; n < spec.dims.size(); ++n) {
                if (spec.ranks[n] > spec.dims[n]) throw ShapeError("Tucker rank exceeds its mode size");
            }
            break;
        case FormatKind::TT:
        case FormatKind::TTM:
            for (std::size_t n = 0; n + 1 < spec.dims.size(); ++n) {
                std::size_t left = 1;
                std::size_t right = 1;
                for (std::size_t m = 0; m <= n; ++m) left *= spec.dims[m] * (spec.kind == FormatKind::TTM ? spec.col_dims[m] : 1);
                for (std::size_t m = n + 1; m < spec.dims.size(); ++m) {
                    right *= spec.dims[m] * (spec.kind == FormatKind::TTM ? spec.col_dims[m] : 1);
                }
                if (spec.ranks[n] > std::min(left, right)) throw ShapeError("TT rank exceeds the unfolding size");
            }
            break;
    }
    FactorizedLayer layer;
    layer.kind = spec.kind;
    layer.dims = spec.dims;
    layer.col_dims = spec.col_dims;
    layer.max_ranks = spec.ranks;
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (const auto& shape : shapes) {
        GaussianFactor g{DenseTensor(shape), DenseTensor::filled(shape, kSigmaFloor)};
        for (double& x : g.mean.data()) x = normal(rng);
        layer.factors.push_back(std::move(g));
    }
    for (std::size_t r : spec.ranks) layer.lambdas.emplace_back(r, 1.0);

    const std::size_t total = layer.full_size();
    std::size_t classes = spec.num_classes;
    if (classes == 0) classes = spec.kind == FormatKind::TTM ? shape_product(spec.col_dims) : spec.dims.back();
    if (total % classes != 0) throw ShapeError("class count does not divide the weight size");

    TensorizedLinear lin;
    lin.weight = std::move(layer);
    lin.in_features = total / classes;
    lin.out_features = classes;
    lin.bias = GaussianFactor{DenseTensor({classes}), DenseTensor::filled({classes}, kSigmaFloor)};
    lin.activation = Activation::Identity;

    TensorizedNetwork net;
    net.layers.emplace_back(std::move(lin));
    net.num_classes = classes;
    net.validate();
    return net;
}

SyntheticTask gen_synthetic(const SyntheticSpec& spec, const LabeledDataset& inputs) {
    SyntheticTask task;
    task.generator = make_generator(spec);
    const std::size_t in = task.generator.input_dim();
    if (inputs.token_inputs || inputs.feature_dim != in) {
        throw ShapeError("synthetic inputs must have " + std::to_string(in) + " features");
    }
    const std::size_t n = inputs.features.size() / in;
    task.data = inputs;
    task.data.num_classes = task.generator.num_classes;
    task.data.labels.assign(n, 0);

    std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const std::size_t c = task.generator.num_classes;
    constexpr std::size_t kChunk = 1024;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t len = std::min(kChunk, n - start);
        std::vector<std::size_t> idx(len);
        std::iota(idx.begin(), idx.end(), start);
        const DenseTensor logits = forward_mean(task.generator, task.data.gather(idx));
        for (std::size_t r = 0; r < len; ++r) {
            const double* row = logits.data().data() + r * c;
            std::size_t label = 0;
            if (spec.multinomial) {
                const double mx = *std::max_element(row, row + c);
                std::vector<double> p(c);
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += p[j] = std::exp(row[j] - mx);
                double u = uniform(rng) * s;
                label = c - 1;
                for (std::size_t j = 0; j < c; ++j) {
                    if (u < p[j]) {
                        label = j;
                        break;
                    }
                    u -= p[j];
                }
            } else {
                label = static_cast<std::size_t>(std::max_element(row, row + c) - row);
            }
            task.data.labels[start + r] = label;
        }
    }
    return task;
}

LabeledDataset gaussian_inputs(std::size_t n, std::size_t feature_dim, std::uint64_t seed) {
    LabeledDataset ds;
    ds.feature_dim = feature_dim;
    ds.features.resize(n * feature_dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& x : ds.features) x = normal(rng);
    return ds;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
    nlohmann::json h;
    h["type"] = "dataset";
    h["num_samples"] = ds.size();
    h["num_classes"] = ds.num_classes;
    h["token_inputs"] = ds.token_inputs;
    h["feature_dim"] = ds.feature_dim;
    h["image_rows"] = ds.image_rows;
    h["image_cols"] = ds.image_cols;
    std::vector<double> payload;
    if (ds.token_inputs) {
        std::vector<std::size_t> lengths;
        for (const auto& bag : ds.tokens) lengths.push_back(bag.size());
        h["bag_lengths"] = lengths;
        for (const auto& bag : ds.tokens) {
            for (std::size_t t : bag) payload.push_back(static_cast<double>(t));
        }
    } else {
        payload = ds.features;
    }
    for (std::size_t l : ds.labels) payload.push_back(static_cast<double>(l));
    write_blob(path, h, payload);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
    const Blob blob = read_blob(path);
    const auto& h = blob.header;
    try {
        if (h.at("type").get<std::string>() != "dataset") throw FormatError("blob is not a dataset", 16);
        LabeledDataset ds;
        const auto n = h.at("num_samples").get<std::size_t>();
        ds.num_classes = h.at("num_classes").get<std::size_t>();
        ds.token_inputs = h.at("token_inputs").get<bool>();
        ds.feature_dim = h.at("feature_dim").get<std::size_t>();
        ds.image_rows = h.at("image_rows").get<std::size_t>();
        ds.image_cols = h.at("image_cols").get<std::size_t>();
        std::size_t pos = 0;
        auto take = [&](std::size_t count) {
            if (pos + count > blob.payload.size()) throw FormatError("dataset payload too short", 0);
            std::span<const double> s(blob.payload.data() + pos, count);
            pos += count;
            return s;
        };
        if (ds.token_inputs) {
            const auto lengths = h.at("bag_lengths").get<std::vector<std::size_t>>();
            if (lengths.size() != n) throw FormatError("bag_lengths does not match num_samples", 0);
            for (std::size_t len : lengths) {
                const auto s = take(len);
                ds.tokens.emplace_back();
                for (double v : s) ds.tokens.back().push_back(static_cast<std::size_t>(v));
            }
        } else {
            const auto s = take(n * ds.feature_dim);
            ds.features.assign(s.begin(), s.end());
        }
        for (double v : take(n)) ds.labels.push_back(static_cast<std::size_t>(v));
        if (pos != blob.payload.size()) throw FormatError("dataset payload has trailing values", 0);
        ds.validate();
        return ds;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset header: ") + e.what(), 16);
    }
}

}  // namespace tnn
