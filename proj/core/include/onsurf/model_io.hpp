#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "onsurf/mlp.hpp"

namespace onsurf {

inline constexpr std::uint32_t kModelFormatVersion = 1;

// Binary model file, little-endian throughout:
//   "OSRF" | u32 version | u32 input_dim, hidden_dim, num_layers, skip_layer,
//   activation | f64 beta | u64 init_seed | f64 parameters, layer by layer,
//   weights row-major then biases | u64 length | JSON metadata.
void save_model(const MlpModel& model, const std::filesystem::path& path,
                const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedModel {
  MlpModel model;
  nlohmann::json metadata;
};

// Throws FormatError (with byte offset) on corrupt or truncated files and
// VersionError on an unknown format version.
LoadedModel load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_model(const MlpModel& model, const nlohmann::json& metadata);
LoadedModel deserialize_model(const std::vector<std::uint8_t>& bytes);

}  // namespace onsurf
