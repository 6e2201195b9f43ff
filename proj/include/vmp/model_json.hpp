#pragma once

#include <json.hpp>

#include "vmp/model.hpp"

namespace vmp::model {

/// Canonical JSON form of a config: fixed key order, every field present.
/// Checkpoint manifests, experiment reports, and config hashing all use this
/// one shape.
nlohmann::ordered_json config_to_json(const ModelConfig& config);

/// Strict parse: starts from defaults, applies known keys, and throws
/// ConfigError naming the first unknown key. Missing keys keep their
/// defaults, so partial override files work.
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace vmp::model
