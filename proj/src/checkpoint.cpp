#include "tnn/checkpoint.hpp"

#include "tnn/blob.hpp"
#include "tnn/errors.hpp"

namespace tnn {

namespace {

using nlohmann::json;

json layer_header(const FactorizedLayer& layer) {
    json h;
    h["kind"] = std::string(to_string(layer.kind));
    h["dims"] = layer.dims;
    h["col_dims"] = layer.col_dims;
    h["max_ranks"] = layer.max_ranks;
    h["ranks"] = layer.current_ranks();
    return h;
}

void append_layer(const FactorizedLayer& layer, std::vector<double>& payload) {
    for (const auto& f : layer.factors) {
        payload.insert(payload.end(), f.mean.values().begin(), f.mean.values().end());
        payload.insert(payload.end(), f.stddev.values().begin(), f.stddev.values().end());
    }
    for (const auto& lam : layer.lambdas) payload.insert(payload.end(), lam.begin(), lam.end());
}

class PayloadReader {
public:
    explicit PayloadReader(const std::vector<double>& p) : p_(p) {}
    std::vector<double> take(std::size_t n) {
        if (pos_ + n > p_.size()) throw FormatError("checkpoint payload too short", 0);
        std::vector<double> out(p_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                p_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    bool done() const { return pos_ == p_.size(); }

private:
    const std::vector<double>& p_;
    std::size_t pos_ = 0;
};

FactorizedLayer read_layer(const json& h, PayloadReader& r) {
    FactorizedLayer layer;
    layer.kind = parse_format(h.at("kind").get<std::string>());
    layer.dims = h.at("dims").get<Shape>();
    layer.col_dims = h.at("col_dims").get<Shape>();
    layer.max_ranks = h.at("max_ranks").get<std::vector<std::size_t>>();
    const auto ranks = h.at("ranks").get<std::vector<std::size_t>>();
    for (const auto& shape : factor_shapes(layer.kind, layer.dims, layer.col_dims, ranks)) {
        const std::size_t n = shape_product(shape);
        GaussianFactor g{DenseTensor(shape, r.take(n)), DenseTensor(shape, r.take(n))};
        layer.factors.push_back(std::move(g));
    }
    for (std::size_t k : ranks) layer.lambdas.push_back(r.take(k));
    layer.validate();
    return layer;
}

template <class F>
auto guarded(F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what(), 16);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), 16);
    }
}

}  // namespace

std::string encode_layer(const FactorizedLayer& layer) {
    json h;
    h["type"] = "factorized_layer";
    h["layer"] = layer_header(layer);
    std::vector<double> payload;
    append_layer(layer, payload);
    return encode_blob(h, payload);
}

FactorizedLayer decode_layer(std::string_view bytes) {
    const Blob blob = decode_blob(bytes);
    return guarded([&] {
        if (blob.header.at("type") != "factorized_layer") throw FormatError("blob is not a factorized layer", 16);
        PayloadReader r(blob.payload);
        auto layer = read_layer(blob.header.at("layer"), r);
        if (!r.done()) throw FormatError("trailing payload after layer", 0);
        return layer;
    });
}

std::string encode_checkpoint(const TensorizedNetwork& net, const nlohmann::json& meta) {
    json h;
    h["type"] = "network";
    h["num_classes"] = net.num_classes;
    h["meta"] = meta;
    h["layers"] = json::array();
    std::vector<double> payload;
    for (const auto& layer : net.layers) {
        json lh;
        if (const auto* lin = std::get_if<TensorizedLinear>(&layer)) {
            lh["type"] = "linear";
            lh["in_features"] = lin->in_features;
            lh["out_features"] = lin->out_features;
            lh["activation"] = std::string(to_string(lin->activation));
            lh["weight"] = layer_header(lin->weight);
            append_layer(lin->weight, payload);
            payload.insert(payload.end(), lin->bias.mean.values().begin(), lin->bias.mean.values().end());
            payload.insert(payload.end(), lin->bias.stddev.values().begin(), lin->bias.stddev.values().end());
        } else {
            const auto& e = std::get<EmbeddingLayer>(layer);
            lh["type"] = "embedding";
            lh["num_tokens"] = e.num_tokens;
            lh["dim"] = e.dim;
            lh["weight"] = layer_header(e.table);
            append_layer(e.table, payload);
        }
        h["layers"].push_back(std::move(lh));
    }
    return encode_blob(h, payload);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    const Blob blob = decode_blob(bytes);
    return guarded([&] {
        const auto& h = blob.header;
        if (h.at("type") != "network") throw FormatError("blob is not a network checkpoint", 16);
        Checkpoint ck;
        ck.net.num_classes = h.at("num_classes").get<std::size_t>();
        ck.meta = h.value("meta", json::object());
        PayloadReader r(blob.payload);
        for (const auto& lh : h.at("layers")) {
            const std::string type = lh.at("type").get<std::string>();
            if (type == "linear") {
                TensorizedLinear lin;
                lin.in_features = lh.at("in_features").get<std::size_t>();
                lin.out_features = lh.at("out_features").get<std::size_t>();
                lin.activation = parse_activation(lh.at("activation").get<std::string>());
                lin.weight = read_layer(lh.at("weight"), r);
                lin.bias.mean = DenseTensor({lin.out_features}, r.take(lin.out_features));
                lin.bias.stddev = DenseTensor({lin.out_features}, r.take(lin.out_features));
                ck.net.layers.emplace_back(std::move(lin));
            } else if (type == "embedding") {
                EmbeddingLayer e;
                e.num_tokens = lh.at("num_tokens").get<std::size_t>();
                e.dim = lh.at("dim").get<std::size_t>();
                e.table = read_layer(lh.at("weight"), r);
                ck.net.layers.emplace_back(std::move(e));
            } else {
                throw FormatError("unknown layer type '" + type + "' in checkpoint", 16);
            }
        }
        if (!r.done()) throw FormatError("trailing payload after network", 0);
        ck.net.validate();
        return ck;
    });
}

void save_checkpoint(const std::filesystem::path& path, const TensorizedNetwork& net, const nlohmann::json& meta) {
    write_file(path, encode_checkpoint(net, meta));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace tnn
