#include <cmath>
#include <random>

#include "doctest.h"
#include "psafe/orbit.hpp"

using namespace psafe;

namespace {

// independent Kepler oracle: plain bisection on E - e sinE = M
double bisect_eccentric(double M, double e) {
    double lo = M - e - 0.1, hi = M + e + 0.1;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (mid - e * std::sin(mid) - M < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

double nu_from_eccentric(double E, double e) {
    return 2.0 * std::atan2(std::sqrt(1.0 + e) * std::sin(0.5 * E),
                            std::sqrt(1.0 - e) * std::cos(0.5 * E));
}

OrbitalElements heo() { return {24641.0e3, 0.716, 7.0 * PI / 180.0, -10.0 * PI / 180.0,
                                135.0 * PI / 180.0, 210.6 * PI / 180.0}; }
OrbitalElements leo() { return {R_EARTH + 500.0e3, 0.001, 98.0 * PI / 180.0, 0.0, 0.0, 0.0}; }

// system matrix of the linearized relative motion about the eccentric
// reference, used as the integration oracle for the fundamental matrix
Mat6 linearized_system(const OrbitalElements& oe, double t) {
    double nu = solve_kepler(oe, t);
    double e = oe.e, eta = oe.eta(), n = oe.mean_motion();
    double rho = 1.0 + e * std::cos(nu);
    double nud = n * rho * rho / (eta * eta * eta);
    double nudd = -2.0 * e * std::sin(nu) * nud * nud / rho;
    double r = oe.a * eta * eta / rho;
    double mur3 = oe.mu / (r * r * r);
    Mat6 A = Mat6::Zero();
    A.block<3, 3>(0, 3).setIdentity();
    A(3, 0) = nud * nud + 2.0 * mur3;
    A(3, 1) = nudd;
    A(3, 4) = 2.0 * nud;
    A(4, 0) = -nudd;
    A(4, 1) = nud * nud - mur3;
    A(4, 3) = -2.0 * nud;
    A(5, 2) = -mur3;
    return A;
}

Mat6 integrate_fundamental(const OrbitalElements& oe, double t_end, int steps) {
    Mat6 X = psi_matrix(oe, 0.0);
    double h = t_end / steps;
    for (int s = 0; s < steps; ++s) {
        double t = s * h;
        Mat6 k1 = linearized_system(oe, t) * X;
        Mat6 k2 = linearized_system(oe, t + 0.5 * h) * (X + 0.5 * h * k1);
        Mat6 k3 = linearized_system(oe, t + 0.5 * h) * (X + 0.5 * h * k2);
        Mat6 k4 = linearized_system(oe, t + h) * (X + h * k3);
        X += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return X;
}

}  // namespace

TEST_CASE("kepler solver matches bisection oracle") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ue(0.0, 0.95), ut(-3.0, 3.0), un(-PI, PI);
    for (int trial = 0; trial < 500; ++trial) {
        OrbitalElements oe(8000.0e3, ue(rng), 0.3, 0.1, 0.2, un(rng));
        double t = ut(rng) * oe.period();
        double M = oe.mean_anomaly_epoch() + oe.mean_motion() * t;
        double Mw = wrap_pi(M);
        double nu_oracle = nu_from_eccentric(bisect_eccentric(Mw, oe.e), oe.e);
        CHECK(std::abs(wrap_pi(solve_kepler(oe, t) - nu_oracle)) < 1e-9);
    }
}

TEST_CASE("true anomaly is unwrapped and monotone") {
    OrbitalElements oe = heo();
    double prev = solve_kepler(oe, 0.0);
    CHECK(prev == doctest::Approx(oe.nu0).epsilon(1e-12));
    for (int k = 1; k <= 400; ++k) {
        double nu = solve_kepler(oe, k * oe.period() / 100.0);
        CHECK(nu > prev);
        prev = nu;
    }
    CHECK(solve_kepler(oe, 3.0 * oe.period()) ==
          doctest::Approx(oe.nu0 + 3.0 * TWO_PI).epsilon(1e-11));
}

TEST_CASE("fundamental matrix solves the linearized relative ODE") {
    for (const auto& oe : {heo(), leo()}) {
        double t_end = 0.4 * oe.period();
        Mat6 X = integrate_fundamental(oe, t_end, 120000);
        Mat6 P = psi_matrix(oe, t_end);
        CHECK((X - P).norm() / P.norm() < 1e-7);
    }
}

TEST_CASE("velocity rows are time derivatives of position rows") {
    OrbitalElements oe = heo();
    double h = 1e-3;
    for (double t : {137.0, 5000.0, 21000.0}) {
        Mat6 Pp = psi_matrix(oe, t + h), Pm = psi_matrix(oe, t - h);
        Mat6 P = psi_matrix(oe, t);
        Eigen::Matrix<double, 3, 6> fd = (Pp.topRows<3>() - Pm.topRows<3>()) / (2.0 * h);
        CHECK((fd - P.bottomRows<3>()).norm() < 1e-4 * P.bottomRows<3>().norm());
    }
}

TEST_CASE("state to invariants round trip") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g;
    for (const auto& oe : {heo(), leo()}) {
        for (int trial = 0; trial < 50; ++trial) {
            Vec6 x;
            for (int k = 0; k < 3; ++k) x[k] = 300.0 * g(rng);
            for (int k = 3; k < 6; ++k) x[k] = 0.3 * g(rng);
            double t = (trial % 10) * oe.period() / 7.0;
            ICState c = ic_from_cartesian(oe, t, RelativeState(x));
            RelativeState back = cartesian_from_ic(oe, t, c);
            CHECK((back.vec() - x).norm() < 1e-8 * std::max(1.0, x.norm()));
        }
    }
}

TEST_CASE("bounded motion follows the polar form") {
    OrbitalElements oe = heo();
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 40; ++trial) {
        Vec6 v;
        v << 0.0, g(rng), g(rng), g(rng), g(rng), g(rng);
        ICState c(1e-5 * v);
        double t = trial * oe.period() / 13.0;
        double nu = solve_kepler(oe, t);
        double lam = oe.argp + nu;
        double rho = 1.0 + oe.e * std::cos(nu);
        Vec3 pos = cartesian_from_ic(oe, t, c).pos;
        double dr = -oe.a * c.c34() * std::cos(lam - c.theta34());
        double dt = oe.a * c.c[1] / rho +
                    (1.0 / rho + 1.0) * oe.a * c.c34() * std::sin(lam - c.theta34());
        double dn = oe.a / rho * c.c56() * std::sin(lam - c.theta56());
        CHECK(pos.x() == doctest::Approx(dr).epsilon(1e-9).scale(oe.a * 1e-5));
        CHECK(pos.y() == doctest::Approx(dt).epsilon(1e-9).scale(oe.a * 1e-5));
        CHECK(pos.z() == doctest::Approx(dn).epsilon(1e-9).scale(oe.a * 1e-5));
    }
}

TEST_CASE("near-circular invariant map approaches the circular one") {
    OrbitalElements almost = leo();
    OrbitalElements circ = almost;
    almost.e = 1e-9;
    circ.e = 0.0;
    CHECK((cw_map(almost) - cw_map(circ)).norm() < 1e-7);
}

TEST_CASE("roe round trip") {
    OrbitalElements oe = leo();
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 30; ++trial) {
        Vec6 v;
        for (int k = 0; k < 6; ++k) v[k] = 1e-5 * g(rng);
        double t = trial * 100.0;
        ROEState roe(v);
        ROEState back = roe_from_ic(oe, t, ic_from_roe(oe, t, roe));
        CHECK((back.roe - v).norm() < 1e-12);
    }
}

TEST_CASE("alternate invariant basis is a constant invertible change of coordinates") {
    OrbitalElements oe = heo();
    Mat6 M = ya_ic_map(oe);
    CHECK(std::abs(M.determinant()) > 1e-3);
    ICState c(Vec6::Ones() * 1e-5);
    Vec6 y = M * c.c;
    CHECK(((M.inverse() * y) - c.c).norm() < 1e-15);
}
