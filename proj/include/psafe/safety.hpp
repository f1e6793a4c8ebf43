#pragma once

#include <optional>
#include <string>
#include <vector>

#include "psafe/dynamics.hpp"
#include "psafe/orbit.hpp"

namespace psafe {

enum class Plane { RN, RT, ThreeD };

struct SafetySpec {
  double eps_m = 1.0;       // minimum pairwise separation
  double horizon_s = 0.0;   // safety horizon past end of plan
  int q = 3;                // sigma multiplier for robustness margins
  Plane plane = Plane::ThreeD;
  double c1_gate_frac = 1e-3;  // closed forms only when |a*c1| < gate*eps

  void validate() const;
};

enum class ControlType { Continuous, Impulsive };
enum class Formulation { Full, TStar };  // full sampled set vs t*-reformulated set

struct CountingScheme {
  long n = 1;      // trajectory samples over the plan
  long m = 0;      // samples in the post-plan safety tail
  long n_M = 1;    // maneuver slots (impulsive control)
  long N_a = 1;    // active agents
  long N_p = 0;    // passive agents
  ControlType control = ControlType::Impulsive;
  Formulation formulation = Formulation::TStar;

  void validate() const;
};

struct ContingencyPair {
  int k = 0, j = 0;   // agent indices, k < j
  int i = 0, l = 0;   // contingency sample indices
  double t_star = 0.0;
  double s_star = 0.0;
  double beta = 0.0;
};

// Precomputed position rows P(t) = [position selector]*Psi(t) on a time grid,
// shared by every pair search over the same window.
struct SeparationGrid {
  std::vector<double> times;
  std::vector<Mat36> rows;

  static SeparationGrid build(const OrbitalElements& oe, double t_lo, double t_hi,
                              double samples_per_deg = 1.0);
  std::size_t lower_index(double t) const;  // first sample with time >= t
};

Vec3 projected(const Vec3& d, Plane plane);

double separation_at(const OrbitalElements& oe, double t, const ICState& ck,
                     const ICState& cj, Plane plane = Plane::ThreeD);

struct MinSepResult {
  double t_star = 0.0;
  double s_star = 0.0;
};

MinSepResult t_star_search(const OrbitalElements& oe, const ICState& ck, const ICState& cj,
                           double t_lo, double t_hi, double samples_per_deg = 1.0,
                           Plane plane = Plane::ThreeD);

// Same search over a prebuilt grid restricted to sample indices [i_lo, i_hi].
MinSepResult t_star_on_grid(const OrbitalElements& oe, const SeparationGrid& grid,
                            const Vec6& dc, std::size_t i_lo, std::size_t i_hi,
                            Plane plane, bool refine = true);

double min_sep_rn(double a, double rho_bar, const Eigen::Vector2d& c34_vec,
                  const Eigen::Vector2d& c56_vec);
bool rn_sufficient_condition(double a, double e, double eps_kjil,
                             const Eigen::Vector2d& c34_vec, const Eigen::Vector2d& c56_vec,
                             double rho_bar);
double min_sep_rt(double a, double rho_bar, double c2, double c34, bool encircling,
                  double eps_kjil);
bool rt_sufficient_condition(double a, double e, double eps_kjil, double c2, double c34);

long count_constraints(const CountingScheme& s);
std::vector<std::array<int, 4>> enumerate_contingency_pairs(const CountingScheme& s);

struct VerifyOptions {
  std::vector<int> contingency_samples;  // sample indices where control may be lost
  double samples_per_deg = 1.0;          // evaluation density for the separation scan
  bool refine = true;
};

struct VerifyReport {
  bool pass = false;
  double min_separation_m = 0.0;
  ContingencyPair worst;
  std::vector<ContingencyPair> per_pair;

  std::string to_json() const;
};

// Checks Definition-1 style passive safety: for every contingency combination
// (k,j,i,l) the uncontrolled arcs from t_i / t_l stay >= eps apart until the
// end of the horizon. Trajectories must share the sample grid; the first
// n_active entries are the controlled (active) agents.
VerifyReport verify_passive_safety(const OrbitalElements& oe,
                                   const std::vector<Trajectory>& trajectories, int n_active,
                                   const SafetySpec& spec, const PerturbationModel& model,
                                   const VerifyOptions& opt);

}  // namespace psafe
