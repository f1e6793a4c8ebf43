#include "psafe/orbit.hpp"

#include <cmath>

namespace psafe {

double wrap_pi(double angle) {
    double w = std::remainder(angle, TWO_PI);
    if (w <= -PI) w += TWO_PI;
    return w;
}

OrbitalElements::OrbitalElements(double a_, double e_, double i_, double raan_,
                                 double argp_, double nu0_, double mu_)
    : a(a_), e(e_), i(i_), raan(raan_), argp(argp_), nu0(wrap_pi(nu0_)), mu(mu_) {
    if (!(a > 0.0)) throw std::invalid_argument("OrbitalElements: a must be > 0");
    if (!(e >= 0.0 && e < 1.0)) throw std::invalid_argument("OrbitalElements: need 0 <= e < 1");
    if (!(mu > 0.0)) throw std::invalid_argument("OrbitalElements: mu must be > 0");
}

double OrbitalElements::mean_anomaly_epoch() const {
    double E0 = 2.0 * std::atan2(std::sqrt(1.0 - e) * std::sin(nu0 / 2.0),
                                 std::sqrt(1.0 + e) * std::cos(nu0 / 2.0));
    return E0 - e * std::sin(E0);
}

double eccentric_from_mean(double mean_anomaly, double e, double tol) {
    double M = wrap_pi(mean_anomaly);
    double E = (e < 0.8) ? M : PI * (M >= 0 ? 1.0 : -1.0);
    if (e >= 0.8 && std::abs(M) < 1e-8) E = M;
    bool converged = false;
    for (int it = 0; it < 64; ++it) {
        double f = E - e * std::sin(E) - M;
        if (std::abs(f) < tol) {
            converged = true;
            break;
        }
        double step = f / (1.0 - e * std::cos(E));
        // keep Newton inside one revolution; fall back to damping otherwise
        if (std::abs(step) > 1.0) step = (step > 0 ? 1.0 : -1.0);
        E -= step;
    }
    if (!converged) {
        // bisection fallback: E - e sinE - M is increasing in E
        double lo = -PI - 1e-12, hi = PI + 1e-12;
        for (int it = 0; it < 200; ++it) {
            E = 0.5 * (lo + hi);
            double f = E - e * std::sin(E) - M;
            if (std::abs(f) < tol) {
                converged = true;
                break;
            }
            (f > 0 ? hi : lo) = E;
        }
        if (!converged) throw kepler_error("Kepler solver failed to converge");
    }
    return E + (mean_anomaly - M);  // restore the revolution count
}

double solve_kepler(const OrbitalElements& oe, double t) {
    double M = oe.mean_anomaly_epoch() + oe.mean_motion() * t;
    double E = eccentric_from_mean(M, oe.e);
    double Ew = wrap_pi(E);
    double nu = 2.0 * std::atan2(std::sqrt(1.0 + oe.e) * std::sin(Ew / 2.0),
                                 std::sqrt(1.0 - oe.e) * std::cos(Ew / 2.0));
    // unwrap: nu and E always stay within the same revolution
    return nu + (E - Ew);
}

Mat6 psi_matrix(const OrbitalElements& oe, double t) {
    double nu = solve_kepler(oe, t);
    double e = oe.e, a = oe.a;
    double eta = oe.eta(), n = oe.mean_motion();
    double eta3 = eta * eta * eta;
    double lam = oe.argp + nu;
    double rho = 1.0 + e * std::cos(nu);
    double nud = n * rho * rho / eta3;
    double rhod = -e * std::sin(nu) * nud;
    double s = std::sin(lam), c = std::cos(lam);
    double ir = 1.0 / rho;
    double drho = -rhod / (rho * rho);  // d/dt (1/rho)

    Mat6 P;
    P.row(0) << ir - 1.5 * e / eta3 * std::sin(nu) * n * t, 0.0, -c, -s, 0.0, 0.0;
    P.row(1) << -1.5 * rho / eta3 * n * t, ir, (ir + 1.0) * s, -(ir + 1.0) * c, 0.0, 0.0;
    P.row(2) << 0.0, 0.0, 0.0, 0.0, ir * s, -ir * c;
    P.row(3) << drho - 1.5 * e / eta3 * (std::cos(nu) * nud * n * t + std::sin(nu) * n),
        0.0, s * nud, -c * nud, 0.0, 0.0;
    P.row(4) << -1.5 * (rhod * n * t + rho * n) / eta3, drho,
        drho * s + (ir + 1.0) * c * nud, -drho * c + (ir + 1.0) * s * nud, 0.0, 0.0;
    P.row(5) << 0.0, 0.0, 0.0, 0.0, drho * s + ir * c * nud, -drho * c + ir * s * nud;
    return a * P;
}

Mat36 psi_position_rows(const OrbitalElements& oe, double nu, double t) {
    double e = oe.e, a = oe.a;
    double eta3 = std::pow(oe.eta(), 3);
    double n = oe.mean_motion();
    double lam = oe.argp + nu;
    double rho = 1.0 + e * std::cos(nu);
    double s = std::sin(lam), c = std::cos(lam);
    double ir = 1.0 / rho;

    Mat36 P;
    P.row(0) << ir - 1.5 * e / eta3 * std::sin(nu) * n * t, 0.0, -c, -s, 0.0, 0.0;
    P.row(1) << -1.5 * rho / eta3 * n * t, ir, (ir + 1.0) * s, -(ir + 1.0) * c, 0.0, 0.0;
    P.row(2) << 0.0, 0.0, 0.0, 0.0, ir * s, -ir * c;
    return a * P;
}

ICState ic_from_cartesian(const OrbitalElements& oe, double t, const RelativeState& x) {
    Mat6 P = psi_matrix(oe, t);
    Eigen::FullPivLU<Mat6> lu(P);
    if (!lu.isInvertible()) throw singular_geometry_error("psi matrix is singular");
    return ICState(lu.solve(x.vec()));
}

RelativeState cartesian_from_ic(const OrbitalElements& oe, double t, const ICState& c) {
    return RelativeState(Vec6(psi_matrix(oe, t) * c.c));
}

Mat6 cw_map(const OrbitalElements& oe) {
    double e = oe.e, w = oe.argp, eta = oe.eta();
    if (std::abs(std::sin(oe.i)) < 1e-12)
        throw singular_geometry_error("cw_map undefined for equatorial inclination");
    double cti = 1.0 / std::tan(oe.i);
    double sw = std::sin(w), cw = std::cos(w);
    double eta2 = eta * eta;
    // (eta^2 - 1/eta)/e -> 0 as e -> 0; evaluate the limit-safe form
    double g = (e > 1e-9) ? (eta2 - 1.0 / eta) / e : -1.5 * e;

    Mat6 M = Mat6::Zero();
    M(0, 0) = eta2;
    M(1, 1) = 1.0 / eta;
    M(1, 2) = -g * sw;
    M(1, 3) = g * cw;
    M(1, 5) = g * e * cti;  // (eta^2 - 1/eta) cot(i)
    M(2, 1) = e * sw / eta;
    M(2, 2) = cw * cw + sw * sw / eta;
    M(2, 3) = cw * sw - cw * sw / eta;
    M(2, 5) = -e * sw * cti / eta;
    M(3, 1) = -e * cw / eta;
    M(3, 2) = cw * sw - cw * sw / eta;
    M(3, 3) = sw * sw + cw * cw / eta;
    M(3, 5) = e * cw * cti / eta;
    M(4, 4) = eta2;
    M(5, 5) = eta2;
    return M;
}

namespace {
Mat6 backprop_matrix(const OrbitalElements& oe, double t) {
    Mat6 B = Mat6::Identity();
    B(1, 0) = 1.5 * oe.mean_motion() * t;
    return B;
}
}  // namespace

ROEState roe_from_ic(const OrbitalElements& oe, double t, const ICState& c) {
    Mat6 M = cw_map(oe) * backprop_matrix(oe, t);
    return ROEState(M.fullPivLu().solve(c.c));
}

ICState ic_from_roe(const OrbitalElements& oe, double t, const ROEState& roe) {
    return ICState(cw_map(oe) * backprop_matrix(oe, t) * roe.roe);
}

Mat6 ya_ic_map(const OrbitalElements& oe) {
    double sw = std::sin(oe.argp), cw = std::cos(oe.argp);
    Mat6 M = Mat6::Zero();
    M(0, 3) = -2.0;
    M(1, 0) = 1.0;
    M(2, 1) = -sw;
    M(2, 2) = cw;
    M(3, 1) = cw;
    M(3, 2) = sw;
    M(4, 4) = -cw;
    M(4, 5) = -sw;
    M(5, 4) = -sw;
    M(5, 5) = cw;
    return M;
}

}  // namespace psafe
