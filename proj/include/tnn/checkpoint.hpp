#pragma once

#include "tnn/formats.hpp"
#include "tnn/network.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tnn {

/// Network plus free-form metadata (training config, epoch, ...).
struct Checkpoint {
    TensorizedNetwork net;
    nlohmann::json meta = nlohmann::json::object();
};

std::string encode_layer(const FactorizedLayer& layer);
FactorizedLayer decode_layer(std::string_view bytes);

std::string encode_checkpoint(const TensorizedNetwork& net, const nlohmann::json& meta = nlohmann::json::object());
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorizedNetwork& net,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tnn
