#pragma once

#include <json.hpp>

#include "vgpeft/model.hpp"
#include "vgpeft/peft_spec.hpp"
#include "vgpeft/trainer.hpp"

namespace vgp {

// JSON round-trips for configuration blocks. Parsers reject unknown keys so
// a typo fails loudly instead of being silently ignored.
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PeftSpec& spec);
PeftSpec peft_spec_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Shared guard: throws ConfigError when `j` holds a key outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j,
                         const std::vector<std::string>& allowed,
                         const std::string& context);

}  // namespace vgp
