#pragma once

#include <string>

#include "json.hpp"
#include "stormdispatch/core/hazard.hpp"

namespace stormdispatch::hazard {

/// Reads a hazard configuration; relative feeder paths resolve against the
/// directory of `path`.
ScenarioConfig load_scenario_config(const std::string& path);
ScenarioConfig scenario_config_from_json(const nlohmann::json& doc, const std::string& base_dir);

nlohmann::json scenario_to_json(const HazardScenario& scenario, const FeederModel& feeder, const RoadGraph& roads);
HazardScenario scenario_from_json(const nlohmann::json& doc, const FeederModel& feeder, const RoadGraph& roads);

void save_scenario(const std::string& path, const HazardScenario& scenario, const FeederModel& feeder,
                   const RoadGraph& roads);
HazardScenario load_scenario(const std::string& path, const FeederModel& feeder, const RoadGraph& roads);

}  // namespace stormdispatch::hazard
