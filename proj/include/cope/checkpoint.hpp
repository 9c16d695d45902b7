#pragma once

#include <filesystem>

#include "cope/model.hpp"
#include "json.hpp"

namespace cope {

// Container layout: "CPCK", u16 version=1, u16 reserved=0, u32 index length,
// a JSON index {"config": {...}, "tensors": {name: {offset, shape, dtype}}},
// then the tensor payload as little-endian float32 (offsets are relative to
// the payload start).
void save_checkpoint(const CopeModel& model, const std::filesystem::path& path);
CopeModel load_checkpoint(const std::filesystem::path& path);

nlohmann::ordered_json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace cope
