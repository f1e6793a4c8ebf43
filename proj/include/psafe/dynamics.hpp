#pragma once

#include <string>
#include <vector>

#include "psafe/orbit.hpp"

namespace psafe {

struct PerturbationModel {
    enum class Kind { none, j2, j2_srp };

    Kind kind = Kind::none;
    double mass_kg = 100.0;
    double area_m2 = 0.0;
    double cr = 1.0;
    Vec3 sun_dir_eci = Vec3(1.0, 0.0, 0.0);  // fixed inertial sun direction

    static PerturbationModel none() { return {}; }
    static PerturbationModel j2(double mass = 100.0, double area = 0.0, double cr = 1.0);
    static PerturbationModel j2_srp(double mass, double area, double cr,
                                    const Vec3& sun = Vec3(1.0, 0.0, 0.0));
};

/// One impulsive maneuver: RTN delta-v applied at a grid sample.
struct Impulse {
    int sample = 0;
    Vec3 dv = Vec3::Zero();  // m/s, RTN
};
using ManeuverPlan = std::vector<Impulse>;

/// Maneuver plans for the whole formation, one per active agent.
struct FormationPlan {
    std::vector<ManeuverPlan> agents;
    double cost() const;
};

enum class Provenance { integrable, ground_truth, onboard };

struct Trajectory {
    std::vector<double> times;         // s past epoch, strictly increasing
    std::vector<ICState> ic;           // post-maneuver state at each sample
    std::vector<RelativeState> cart;   // RTN Cartesian, consistent with ic
    Provenance provenance = Provenance::integrable;

    std::size_t size() const { return times.size(); }
};

/// Uniform-in-true-anomaly time grid with `samples` points covering
/// [t0, tf] inclusive.
std::vector<double> make_nu_grid(const OrbitalElements& oe, double t0, double tf,
                                 int samples);

/// Control influence on the IC: B_c(t) = Psi(t)^-1 [0; I].
Mat63 control_input_matrix(const OrbitalElements& oe, double t);

/// c(t) = c0 for all t; Cartesian samples through Psi.
Trajectory propagate_integrable(const OrbitalElements& oe, const ICState& c0,
                                const std::vector<double>& grid);

/// Differential perturbation acceleration mapped to the IC:
/// dc/dt = Psi(t)^-1 [0; d_rtn].
Vec6 vop_drift(const OrbitalElements& oe, double t, const ICState& c,
               const PerturbationModel& model);

/// Integrates dc/dt = d_c with impulsive jumps dc = B_c(t_i) dv_i at the
/// plan's sample instants. RK4 between samples with step <= max_step.
Trajectory propagate_onboard(const OrbitalElements& oe, const ICState& c0,
                             const ManeuverPlan& plan, const PerturbationModel& model,
                             const std::vector<double>& grid, double max_step = 60.0);

/// Cartesian ground truth: reference and agents integrated in inertial frame
/// with two-body + J2 (+ fixed-sun cannonball SRP), RK4 step <= max_step.
/// Relative states are expressed in the perturbed reference's RTN frame.
std::vector<Trajectory> propagate_ground_truth(const OrbitalElements& oe,
                                               const std::vector<ICState>& c0,
                                               const std::vector<ManeuverPlan>& plans,
                                               const PerturbationModel& model,
                                               const std::vector<double>& grid,
                                               double max_step = 30.0);

// --- absolute-orbit helpers (inertial Cartesian, m and m/s) ---

Vec6 eci_from_elements(const OrbitalElements& oe, double t);
OrbitalElements elements_from_eci(const Vec6& state, double mu = MU_EARTH);

/// RTN basis (columns R, T, N) of an absolute state.
Mat3 rtn_basis(const Vec6& ref_eci);
Vec6 absolute_from_relative(const Vec6& ref_eci, const RelativeState& rel);
RelativeState relative_from_absolute(const Vec6& ref_eci, const Vec6& agent_eci);

/// Total inertial acceleration under the model (two-body always included).
Vec3 perturbed_accel(const Vec3& r_eci, const PerturbationModel& model, double mu);

}  // namespace psafe
