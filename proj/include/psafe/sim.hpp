#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psafe/planner.hpp"

namespace psafe {

enum class SanityCadence { every_epoch, after_maneuvers, never };

struct SimConfig {
    SanityCadence cadence = SanityCadence::every_epoch;
    double large_maneuver_mps = 0.01;  // threshold for after_maneuvers cadence
    bool allow_replan = true;
    Vec6 nu_t_m = Vec6::Constant(50.0);  // tracking tolerance, meters on a*c
};

struct EpochLog {
    int epoch = 0;
    double t_s = 0.0;
    std::vector<Vec6> estimate;   // per active agent, IC estimate
    std::vector<Vec3> dv_applied; // realized impulses (with actuation noise)
    bool tracking_feasible = true;
    bool sanity_ok = true;
    bool replanned = false;
    double worst_margin_m = 0.0;      // max componentwise |c~| + betaT - nuT, on a*c
    double contingency_min_m = 0.0;   // worst pairwise loss-of-control separation
};

struct RunRecord {
    std::vector<EpochLog> epochs;
    std::vector<Vec6> terminal_error_ac_m;  // per active agent, meters on a*c
    double total_cost_mps = 0.0;
    double min_contingency_sep_m = 0.0;
    int replan_count = 0;
    std::vector<std::vector<Vec6>> truth_ic;  // [agent][epoch] realized IC

    // rows: epoch, agent, a*c1..a*c6 (true), min separation at that epoch
    std::string to_csv(double a) const;
};

// One closed-loop pass: at each maneuver epoch draw a navigation estimate,
// check the tracking bound, optionally sanity-check the in-force plan by
// open-loop separation prediction, replan when either fails, then actuate
// with magnitude/pointing execution noise. Deterministic for a fixed seed.
RunRecord run_closed_loop(const PlannerConfig& cfg, const std::vector<AgentTask>& active,
                          const std::vector<Vec6>& passive, const SimConfig& sim,
                          std::uint64_t seed, const PlanResult* initial_plan = nullptr);

struct MonteCarloStats {
    int trials = 0;
    int violations = 0;
    double violation_rate = 0.0;
    double coverage_ratio = 0.0;  // realized >= predicted - beta
    double beta_m = 0.0;
    double min_separation_m = 0.0;   // worst over trials
    double mean_separation_m = 0.0;
    std::vector<double> histogram_edges_m;
    std::vector<long> histogram_counts;

    std::string to_json() const;
};

// Samples a failing agent and maneuver epoch per trial, injects navigation /
// execution / process noise, propagates the uncontrolled arc, and reports the
// realized minimum-separation statistics against the plan's certificate.
MonteCarloStats contingency_monte_carlo(const PlannerConfig& cfg, const PlanResult& plan,
                                        const std::vector<AgentTask>& active,
                                        const std::vector<Vec6>& passive, int trials,
                                        std::uint64_t seed);

}  // namespace psafe
