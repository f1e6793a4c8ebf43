#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "psafe/planner.hpp"

namespace psafe {

/// A fully specified planning problem loaded from a scenario file: reference
/// orbit, grids, safety spec, dynamics model, noise, and the agent boundary
/// conditions (a*c in meters in the file, stored dimensionless here).
struct Scenario {
    PlannerConfig cfg;
    std::vector<AgentTask> active;
    std::vector<Vec6> passive;
    std::vector<std::string> active_names;
    std::vector<std::string> passive_names;
};

/// Parse/validation failure with file, line, and field diagnostics.
class scenario_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

Scenario parse_scenario(const std::string& text, const std::string& origin = "<string>");
Scenario load_scenario(const std::string& path);

/// Serialize plan impulses; inverse of load for round-tripping plan files.
FormationPlan plan_from_json(const std::string& text, std::size_t n_agents);

}  // namespace psafe
