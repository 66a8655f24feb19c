// JSON conversions for world-model value types (nlohmann ADL hooks).
#pragma once

#include <nlohmann/json.hpp>

#include "iajepa/worldsim.hpp"

namespace iajepa::world {

void to_json(nlohmann::json& j, const WorldConfig& c);
void from_json(const nlohmann::json& j, WorldConfig& c);

void to_json(nlohmann::json& j, const WorldEvent& e);
void from_json(const nlohmann::json& j, WorldEvent& e);

void to_json(nlohmann::json& j, const LabelSet& l);
void from_json(const nlohmann::json& j, LabelSet& l);

}  // namespace iajepa::world
