#pragma once

#include <limits>
#include <string>
#include <vector>

#include "psafe/safety.hpp"
#include "psafe/socp.hpp"
#include "psafe/uncertainty.hpp"

namespace psafe {

struct AgentTask {
    Vec6 c0 = Vec6::Zero();
    Vec6 target = Vec6::Zero();
    // per-impulse delta-v cap (m/s); infinity = unbounded
    double dv_cap_mps = std::numeric_limits<double>::infinity();
};

struct PlannerConfig {
    OrbitalElements oe;
    double t0 = 0.0;
    double tf = 0.0;
    CountingScheme scheme;    // n, m, n_M, N_a, N_p, control type, formulation
    SafetySpec safety;        // eps, tail horizon, q, plane
    PerturbationModel model;  // drift + verification model
    NoiseModel noise;         // robustness margins (all-zero -> beta = 0)
    double beta_fixed_m = -1.0;  // >= 0 overrides the computed margin
    int max_inner = 3;
    int max_outer = 12;
    double trust_init_m = 100.0;
    double trust_min_m = 5.0;
    double cost_rel_tol = 1e-3;
    double state_tol_m = 1.0;      // max change of a*c between outer iterates
    double samples_per_deg = 0.5;  // worst-instant search density
    bool closed_form_rows = false; // RN/RT closed-form linearization path
    SocpOptions socp;

    void validate() const;
};

// Linearized separation constraint: value + grad_k'(ck - ck_ref)
// + grad_j'(cj - cj_ref) >= rhs.
struct HalfSpace {
    Vec6 grad_k = Vec6::Zero();
    Vec6 grad_j = Vec6::Zero();
    double value = 0.0;  // separation at the reference
    double rhs = 0.0;    // eps + beta
    bool degenerate = false;
};

HalfSpace linearize_ps_numeric(const OrbitalElements& oe, const ICState& ck,
                               const ICState& cj, double t_star, double rhs, Plane plane);

// Closed-form RN/RT bound linearized by central differences at the reference.
// Active-passive rows omit the passive-side gradient.
HalfSpace linearize_ps_closed_form(const OrbitalElements& oe, const ICState& ck,
                                   const ICState& cj, const SafetySpec& spec, double beta,
                                   bool omit_grad_j, double fd_step = 1e-9);

struct SubproblemStats {
    long ps_rows = 0;
    double build_s = 0.0;
    double solve_s = 0.0;
    SocpStatus status = SocpStatus::iteration_limit;
    double cost_mps = 0.0;
    int dropped = 0;
};

struct PlanResult {
    bool feasible = false;
    FormationPlan plan;
    std::vector<double> sample_times;  // grid behind Impulse::sample
    double cost_mps = 0.0;
    double beta_max_m = 0.0;
    int outer_iterations = 0;
    int inner_iterations = 0;
    int dropped_rows = 0;
    long ps_rows = 0;
    double wall_time_s = 0.0;
    VerifyReport certificate;
    std::string message;

    std::string to_json() const;
};

class planner_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Minimum-fuel reconfiguration without safety rows (two-point boundary value
// warm start). Empty plan when every agent starts on target.
FormationPlan warm_start_tpbvp(const PlannerConfig& cfg, const std::vector<AgentTask>& active);

// Sequential convex programming with passive-safety rows (Algorithm flow:
// warm start, {t*, beta} refresh, inner cap with closest-to-satisfy
// selection, outer trust-region schedule, final re-verification).
PlanResult plan(const PlannerConfig& cfg, const std::vector<AgentTask>& active,
                const std::vector<Vec6>& passive, const FormationPlan* warm = nullptr);

// Collision avoidance only: instantaneous-separation rows on the nominal
// trajectories at every sample, zero tail horizon.
PlanResult plan_collision_avoidance(const PlannerConfig& cfg,
                                    const std::vector<AgentTask>& active,
                                    const std::vector<Vec6>& passive,
                                    const FormationPlan* warm = nullptr);

// Build + solve a single subproblem at the warm-start reference (used for
// row-count and timing comparisons between formulations).
SubproblemStats time_subproblem(const PlannerConfig& cfg, const std::vector<AgentTask>& active,
                                const std::vector<Vec6>& passive);

}  // namespace psafe
