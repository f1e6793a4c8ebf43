#pragma once

#include <Eigen/Dense>
#include <stdexcept>

namespace psafe {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;
using Mat36 = Eigen::Matrix<double, 3, 6>;

constexpr double MU_EARTH = 3.986004418e14;  // m^3/s^2
constexpr double R_EARTH = 6378137.0;        // m
constexpr double J2_EARTH = 1.08262668e-3;
constexpr double PI = 3.14159265358979323846;
constexpr double TWO_PI = 2.0 * PI;

struct kepler_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct singular_geometry_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Wrap angle to (-pi, pi].
double wrap_pi(double angle);

/// Reference orbit, quasi-nonsingular bookkeeping. Angles in rad, lengths in m.
/// Time arguments throughout the library are seconds past the scenario epoch,
/// at which the true anomaly is nu0.
struct OrbitalElements {
    double a = 0.0;     // semi-major axis (m)
    double e = 0.0;     // eccentricity
    double i = 0.0;     // inclination (rad)
    double raan = 0.0;  // RAAN (rad)
    double argp = 0.0;  // argument of perigee (rad)
    double nu0 = 0.0;   // true anomaly at epoch (rad), wrapped to (-pi, pi]
    double mu = MU_EARTH;

    OrbitalElements() = default;
    OrbitalElements(double a_, double e_, double i_, double raan_, double argp_,
                    double nu0_, double mu_ = MU_EARTH);

    double ex() const { return e * std::cos(argp); }
    double ey() const { return e * std::sin(argp); }
    double eta() const { return std::sqrt(1.0 - e * e); }
    double mean_motion() const { return std::sqrt(mu / (a * a * a)); }
    double period() const { return TWO_PI / mean_motion(); }
    double mean_anomaly_epoch() const;  // M at t = 0
};

/// Integration constants of the linearized relative motion, dimensionless.
/// a*c carries meters on the position rows.
struct ICState {
    Vec6 c = Vec6::Zero();

    ICState() = default;
    explicit ICState(const Vec6& v) : c(v) {}

    double c34() const { return std::hypot(c[2], c[3]); }
    double theta34() const { return std::atan2(c[3], c[2]); }
    double c56() const { return std::hypot(c[4], c[5]); }
    double theta56() const { return std::atan2(c[5], c[4]); }
    Eigen::Vector2d c34_vec() const { return {c[2], c[3]}; }
    Eigen::Vector2d c56_vec() const { return {c[4], c[5]}; }
};

/// RTN relative Cartesian state: position (m), velocity (m/s).
struct RelativeState {
    Vec3 pos = Vec3::Zero();
    Vec3 vel = Vec3::Zero();

    RelativeState() = default;
    RelativeState(const Vec3& r, const Vec3& v) : pos(r), vel(v) {}
    explicit RelativeState(const Vec6& x) : pos(x.head<3>()), vel(x.tail<3>()) {}
    Vec6 vec() const {
        Vec6 x;
        x << pos, vel;
        return x;
    }
};

/// Quasi-nonsingular relative orbital elements
/// {da/a, dlambda, dex, dey, di, dOmega*sin(i)}.
struct ROEState {
    Vec6 roe = Vec6::Zero();
    ROEState() = default;
    explicit ROEState(const Vec6& v) : roe(v) {}
};

/// True anomaly at time t (s past epoch), unwrapped so it is monotone in t.
/// Newton on Kepler's equation with bisection fallback, |M(E)-M| < 1e-12 rad.
double solve_kepler(const OrbitalElements& oe, double t);

/// Solve E - e*sin(E) = M for one revolution, M in radians (any range).
double eccentric_from_mean(double mean_anomaly, double e, double tol = 1e-13);

/// Fundamental matrix of the linearized relative motion at time t. Rows 1-3
/// map IC to RTN position (m), rows 4-6 to RTN velocity (m/s).
Mat6 psi_matrix(const OrbitalElements& oe, double t);

/// Position rows of psi_matrix, given the (unwrapped) true anomaly directly.
/// Cheap path for minimum-separation searches.
Mat36 psi_position_rows(const OrbitalElements& oe, double nu, double t);

ICState ic_from_cartesian(const OrbitalElements& oe, double t, const RelativeState& x);
RelativeState cartesian_from_ic(const OrbitalElements& oe, double t, const ICState& c);

/// First-order map from IC to quasi-nonsingular ROE (and back). The map
/// composes M_CW(oe) with a back-propagation matrix carrying (3/2) n t.
Mat6 cw_map(const OrbitalElements& oe);
ROEState roe_from_ic(const OrbitalElements& oe, double t, const ICState& c);
ICState ic_from_roe(const OrbitalElements& oe, double t, const ROEState& roe);

/// Constant map between this library's IC and the Yamanaka-Ankersen IC.
Mat6 ya_ic_map(const OrbitalElements& oe);

}  // namespace psafe
