#pragma once

#include <vector>

#include "psafe/dynamics.hpp"
#include "psafe/orbit.hpp"
#include "psafe/safety.hpp"

namespace psafe {

/// Symmetric PSD 6x6 covariance on the IC state (dimensionless^2).
struct Covariance {
  Mat6 m = Mat6::Zero();

  Covariance() = default;
  explicit Covariance(const Mat6& x);  // symmetrizes, clamps eigenvalues at 0
  void validate() const;               // symmetry 1e-12, eigenvalues >= -1e-12
};

struct NoiseModel {
  Mat6 Q_rate = Mat6::Zero();        // process-noise density on IC (1/s)
  double maneuver_mag_frac = 0.0;    // 1-sigma magnitude fraction of |dv|
  double maneuver_dir_rad = 0.0;     // 1-sigma pointing cone half-angle
  double nav_pos_sigma_m = 0.0;      // relative navigation, per axis
  double nav_vel_sigma_mps = 0.0;
  std::vector<double> measurement_epochs;

  /// Process noise sized as an accumulated standard deviation on a*c per
  /// orbit, spread into a white-noise rate.
  static NoiseModel standard(const OrbitalElements& oe, double proc_m_per_orbit = 3.0,
                             double mag_frac = 0.05,
                             double dir_rad = 1.0 / 60.0 * PI / 180.0,
                             double pos_sigma = 0.01, double vel_sigma = 25.0e-6);

  Mat3 maneuver_cov(const Vec3& dv) const;           // U(u~)
  Mat6 nav_cov_ic(const OrbitalElements& oe, double t) const;  // Psi^-1 R Psi^-T
};

/// Discrete-time covariance propagation along a mean trajectory:
/// C <- Phi C Phi^T + Q dt, plus B_c U B_c^T at impulse samples, with
/// replacement by the mapped navigation covariance at measurement epochs.
std::vector<Covariance> propagate_covariance(const OrbitalElements& oe, const Covariance& C0,
                                             const Trajectory& mean, const ManeuverPlan& plan,
                                             const NoiseModel& noise,
                                             const PerturbationModel& model);

/// Jacobian of the drift with respect to the IC state, central differences.
Mat6 drift_jacobian(const OrbitalElements& oe, double t, const ICState& c,
                    const PerturbationModel& model, double step = 1e-7);

/// Jacobian of the pairwise minimum separation with respect to c_k, central
/// differences through the minimum-separation search (step on c components).
Vec6 min_sep_jacobian(const OrbitalElements& oe, const ICState& ck, const ICState& cj,
                      double t_lo, double t_hi, Plane plane, double step = 1e-6);

/// Componentwise envelope of the projected position map over [t_lo, t_hi]:
/// entry i is max_t of the projected position response to a unit step on IC
/// component i. A state dispersion can move the worst-case epoch, so a sound
/// separation margin needs this envelope rather than a local derivative.
Vec6 sep_sensitivity_envelope(const OrbitalElements& oe, double t_lo, double t_hi,
                              Plane plane, double samples_per_deg = 1.0);

/// Robustness margin for one contingency combination: two drift-integral
/// terms plus two q-sigma covariance terms, integrated over the uncontrolled
/// arcs to t_end. Fewer than 12 quadrature samples per orbit is rejected.
double beta_bound(const OrbitalElements& oe, const ICState& ck_ti, const ICState& cj_tl,
                  const Covariance& Ck_ti, const Covariance& Cj_tl, double t_i, double t_l,
                  double t_end, const SafetySpec& spec, const PerturbationModel& model,
                  const NoiseModel& noise, const Vec6& jac_k, const Vec6& jac_j,
                  int samples_per_orbit = 48);

struct TrackingBound {
  bool feasible = false;
  Vec6 beta_t = Vec6::Zero();   // net tracking margin per IC component
  int violating_component = -1;
};

/// Net effect of tracking error on the guidance-level margins: drift-integral
/// difference plus q-sigma covariance difference between the tracking and
/// guidance predictions, checked componentwise against nu_t.
TrackingBound tracking_margin(const OrbitalElements& oe, const ICState& c_guidance,
                              const Covariance& C_guidance, const ICState& c_estimate,
                              const Covariance& C_estimate, double t_i, double t_end,
                              const Vec6& nu_t, const SafetySpec& spec,
                              const PerturbationModel& model, const NoiseModel& noise,
                              int samples_per_orbit = 48);

}  // namespace psafe
