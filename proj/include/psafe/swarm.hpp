#pragma once

#include <string>
#include <vector>

#include "psafe/orbit.hpp"

namespace psafe {

enum class SwarmKind { high_density, rn_separated };

struct SwarmDesign {
  SwarmKind kind = SwarmKind::high_density;
  std::vector<ICState> agents;  // c1 = 0 for every agent
  double c34_min = 0.0;
  double c56_min = 0.0;
  double theta34 = 0.0;
  double theta56 = 0.0;
};

struct design_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Spacecraft on a 60-degree lattice in the c34-plane, pairwise gaps of
/// c34_min, with along-track offsets capped by the apogee-evaluated bound on
/// |c2|. Lattice coordinates must be pairwise distinct and not both zero.
SwarmDesign design_high_density(double a, double e, double eps_m, double c34_min,
                                double theta34,
                                const std::vector<std::pair<int, int>>& lattice,
                                const std::vector<double>& c2 = {});

/// Cap on |c2| for the high-density design (two-branch formula in e).
double high_density_c2_cap(double a, double e, double eps_m, double c34_min);

/// Spacecraft sharing common c34/c56 unit vectors with signed magnitudes
/// whose pairwise gaps meet the minima; the phase pair must satisfy the
/// perigee-evaluated cosine inequality.
SwarmDesign design_rn_separated(double a, double e, double eps_m, double c34_min,
                                double c56_min, double theta34, double theta56,
                                const std::vector<double>& mags34 = {},
                                const std::vector<double>& mags56 = {});

/// Margin of the phase condition: |cos(theta34-theta56)| - required threshold
/// (negative means rejected).
double rn_phase_margin(double a, double e, double eps_m, double c34_min, double c56_min,
                       double theta34, double theta56);

}  // namespace psafe
