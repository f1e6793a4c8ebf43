#include <cmath>
#include <random>

#include "doctest.h"
#include "psafe/safety.hpp"

using namespace psafe;

namespace {

OrbitalElements heo() { return {24641.0e3, 0.716, 7.0 * PI / 180.0, -10.0 * PI / 180.0,
                                135.0 * PI / 180.0, 210.6 * PI / 180.0}; }

// frozen-geometry brute-force ellipse minima (dense sweep in the phase angle)
double frozen_rn_min(double a, double rho, const Eigen::Vector2d& v34,
                     const Eigen::Vector2d& v56, int samples = 400000) {
    double c34 = v34.norm(), t34 = std::atan2(v34.y(), v34.x());
    double c56 = v56.norm(), t56 = std::atan2(v56.y(), v56.x());
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < samples; ++k) {
        double lam = TWO_PI * k / samples;
        double dr = c34 * std::cos(lam - t34);
        double dn = c56 / rho * std::sin(lam - t56);
        best = std::min(best, std::hypot(dr, dn));
    }
    return a * best;
}

double frozen_rt_min(double a, double rho, double c2, double c34, int samples = 400000) {
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < samples; ++k) {
        double u = TWO_PI * k / samples;
        double dr = c34 * std::cos(u);
        double dt = c2 / rho + (1.0 / rho + 1.0) * c34 * std::sin(u);
        best = std::min(best, std::hypot(dr, dt));
    }
    return a * best;
}

ICState bounded_ic(double c2, const Eigen::Vector2d& v34, const Eigen::Vector2d& v56) {
    Vec6 v;
    v << 0.0, c2, v34.x(), v34.y(), v56.x(), v56.y();
    return ICState(v);
}

}  // namespace

TEST_CASE("separation basics") {
    OrbitalElements oe = heo();
    ICState c(Vec6::Ones() * 1e-5);
    CHECK(separation_at(oe, 500.0, c, c) == 0.0);

    OrbitalElements circ(7000.0e3, 0.0, 1.0, 0.0, 0.0, 0.0);
    Vec6 d = Vec6::Zero();
    d[1] = 3e-5;  // pure along-track offset
    for (double t : {0.0, 1000.0, 4000.0})
        CHECK(separation_at(circ, t, ICState(d), ICState()) ==
              doctest::Approx(circ.a * 3e-5).epsilon(1e-12));
}

TEST_CASE("minimum separation search") {
    OrbitalElements circ(7000.0e3, 0.0, 1.0, 0.0, 0.0, 0.0);
    Vec6 d = Vec6::Zero();
    d[1] = 3e-5;
    auto r = t_star_search(circ, ICState(d), ICState(), 0.0, circ.period());
    CHECK(r.s_star == doctest::Approx(circ.a * 3e-5).epsilon(1e-9));

    // perpendicular phase angles: the relative RN ellipse passes through the origin
    OrbitalElements oe = heo();
    ICState ck = bounded_ic(0.0, {1e-5, 0.0}, {0.0, 1e-5});
    auto rn = t_star_search(oe, ck, ICState(), 0.0, oe.period(), 1.0, Plane::RN);
    CHECK(rn.s_star < 1e-3 * oe.a * 1e-5);

    // random bounded pairs vs a 100x denser grid
    std::mt19937_64 rng(23);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        Vec6 v = Vec6::Zero();
        for (int k = 1; k < 6; ++k) v[k] = 1e-5 * g(rng);
        ICState c(v);
        auto coarse = t_star_search(oe, c, ICState(), 0.0, oe.period(), 1.0);
        auto dense = t_star_search(oe, c, ICState(), 0.0, oe.period(), 100.0);
        CHECK(coarse.s_star <= dense.s_star * 1.001 + 1e-12);
        CHECK(coarse.s_star >= dense.s_star * 0.999 - 1e-12);
    }
}

TEST_CASE("rn closed form equals the frozen-geometry minimum") {
    double a = 24641.0e3, e = 0.716;
    Eigen::Vector2d v(1e-5, 0.0);
    CHECK(min_sep_rn(a, 1.0, v, {0.0, 1e-5}) == doctest::Approx(0.0).scale(1.0));
    CHECK(min_sep_rn(a, 1.0, v, v) == doctest::Approx(a * 1e-5).epsilon(1e-12));
    CHECK_THROWS_AS(min_sep_rn(a, 1.0, {0.0, 0.0}, {0.0, 0.0}), singular_geometry_error);

    std::mt19937_64 rng(29);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 40; ++trial) {
        Eigen::Vector2d v34(g(rng), g(rng)), v56(g(rng), g(rng));
        v34 *= 1e-5;
        v56 *= 1e-5;
        double rho = 1.0 + e;
        double bound = min_sep_rn(a, rho, v34, v56);
        double oracle = frozen_rn_min(a, rho, v34, v56);
        CHECK(bound == doctest::Approx(oracle).epsilon(1e-6).scale(a * 1e-5));
    }
}

TEST_CASE("rt closed form lower-bounds the frozen-geometry minimum") {
    double a = 24641.0e3, e = 0.716;
    double eps = 100.0;
    // circular sanity branches
    CHECK(min_sep_rt(a, 1.0, 5.0 * eps / a, eps / a, false, eps) ==
          doctest::Approx(3.0 * eps).epsilon(1e-12));
    CHECK(min_sep_rt(a, 1.0, 0.0, 1.5 * eps / a, true, eps) ==
          doctest::Approx(1.5 * eps).epsilon(1e-12));
    CHECK_THROWS_AS(min_sep_rt(a, 1.0, 0.0, 0.5 * eps / a, true, eps), std::domain_error);

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 60; ++trial) {
        double c34 = (0.5 + u(rng)) * 1e-5;
        bool encircl = trial % 2 == 0;
        double rho = encircl ? 1.0 - e : 1.0 + e;
        double c2 = encircl ? u(rng) * (1.0 + rho) * c34 * 0.95
                            : (1.0 + rho) * c34 * (1.05 + 2.0 * u(rng));
        double ek = encircl ? u(rng) * 0.9 * c34 * a : u(rng) * c34 * a;
        if (encircl && c34 < ek / a) ek = c34 * a * 0.9;
        double bound = min_sep_rt(a, rho, c2, c34, encircl, ek);
        double oracle = frozen_rt_min(a, rho, c2, c34);
        if (!encircl) {  // not-encircling form is exact for the frozen geometry
            CHECK(bound <= oracle + 1e-6 * a * c34 + 1e-9);
            CHECK(bound == doctest::Approx(oracle).epsilon(1e-6).scale(a * c34));
        } else if (c34 < (1.0 + rho) / rho * ek / a) {
            // square-root branch lower-bounds the frozen minimum outright
            CHECK(bound <= oracle + 1e-6 * a * c34 + 1e-9);
        } else if (bound >= ek) {
            // linear branch is sound only as an implication at its eps level
            CHECK(oracle >= ek - 1e-6 * a * c34 - 1e-9);
        }
    }
}

TEST_CASE("closed forms lower-bound the true eccentric minima") {
    std::mt19937_64 rng(37);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int pairs_per_e = 500;
    for (double e : {0.0, 0.1, 0.3, 0.5, 0.716, 0.9}) {
        OrbitalElements oe(24641.0e3, e, 0.5, 0.0, 0.7, 0.0);
        SeparationGrid grid = SeparationGrid::build(oe, 0.0, oe.period());
        for (int trial = 0; trial < pairs_per_e; ++trial) {
            Eigen::Vector2d v34(g(rng), g(rng)), v56(g(rng), g(rng));
            v34 *= 1e-5;
            v56 *= 1e-5;
            double c2 = 4e-5 * (u(rng) - 0.5);
            ICState c = bounded_ic(c2, v34, v56);

            double rn = min_sep_rn(oe.a, 1.0 + e, v34, v56);
            auto true_rn = t_star_on_grid(oe, grid, c.c, 0, grid.times.size() - 1, Plane::RN);
            CHECK(rn <= true_rn.s_star + 1e-6 * oe.a);

            double c34 = v34.norm();
            if (std::abs(c2) >= (2.0 + e) * c34) {
                double rt = min_sep_rt(oe.a, 1.0 + e, c2, c34, false, 0.0);
                auto true_rt =
                    t_star_on_grid(oe, grid, c.c, 0, grid.times.size() - 1, Plane::RT);
                CHECK(rt <= true_rt.s_star + 1e-6 * oe.a);
            } else if (std::abs(c2) <= (2.0 - e) * c34 && c34 > 1e-7) {
                // encircling bound: sound as an implication at its own eps level
                double eps_k = u(rng) * 0.9 * c34 * oe.a;
                double rt = min_sep_rt(oe.a, 1.0 - e, c2, c34, true, eps_k);
                if (rt >= eps_k) {
                    auto true_rt =
                        t_star_on_grid(oe, grid, c.c, 0, grid.times.size() - 1, Plane::RT);
                    CHECK(true_rt.s_star >= eps_k - 1e-6 * oe.a);
                }
            }
        }
    }
}

TEST_CASE("rn phase condition is sound") {
    double a = 24641.0e3, e = 0.716;
    Eigen::Vector2d v(1e-5, 0.0);
    CHECK(rn_sufficient_condition(a, e, 0.0, v, {0.0, 2e-5}, 1.0 + e));
    CHECK_FALSE(rn_sufficient_condition(a, e, 10.0, v, {0.0, 2e-5}, 1.0 + e));
    CHECK_THROWS_AS(rn_sufficient_condition(a, e, 1.0, {0.0, 0.0}, v, 1.0 + e),
                    singular_geometry_error);

    // parallel vectors clear of eps imply the bound
    Eigen::Vector2d v34 = v, v56 = 3.0 * v;
    double eps = 0.5 * std::min(a * v34.norm(), a * v56.norm() / (1.0 + e));
    CHECK(rn_sufficient_condition(a, e, eps, v34, v56, 1.0 + e));
    CHECK(min_sep_rn(a, 1.0 + e, v34, v56) >= eps);

    OrbitalElements oe(a, e, 0.5, 0.0, 0.7, 0.0);
    SeparationGrid grid = SeparationGrid::build(oe, 0.0, oe.period());
    std::mt19937_64 rng(41);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int asserted = 0;
    for (int trial = 0; trial < 4000; ++trial) {
        Eigen::Vector2d v34(g(rng), g(rng)), v56(g(rng), g(rng));
        v34 *= 1e-5;
        v56 *= 1e-5;
        double eps_k = u(rng) * a * 1.5e-5;
        if (!rn_sufficient_condition(a, e, eps_k, v34, v56, 1.0 + e)) continue;
        ICState c = bounded_ic(0.0, v34, v56);
        auto true_rn = t_star_on_grid(oe, grid, c.c, 0, grid.times.size() - 1, Plane::RN);
        CHECK(true_rn.s_star >= eps_k - 1e-6 * a);
        ++asserted;
    }
    CHECK(asserted > 100);  // the sweep must actually exercise the true branch
}

TEST_CASE("rt magnitude condition is sound") {
    double a = 24641.0e3, e = 0.716;
    CHECK(rt_sufficient_condition(a, e, 1e-12, 0.0, 1e-5));
    CHECK(rt_sufficient_condition(a, e, 100.0, (2.0 + e) * 1e-5 + 3.0 * 100.0 / a, 1e-5));

    OrbitalElements oe(a, e, 0.5, 0.0, 0.7, 0.0);
    SeparationGrid grid = SeparationGrid::build(oe, 0.0, oe.period());
    std::mt19937_64 rng(43);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> g;
    int asserted = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        double c34 = u(rng) * 2e-5;
        double c2 = 8e-5 * (u(rng) - 0.5);
        double eps_k = u(rng) * a * 1.5e-5;
        if (!rt_sufficient_condition(a, e, eps_k, c2, c34)) continue;
        double th = TWO_PI * u(rng);
        ICState c = bounded_ic(c2, {c34 * std::cos(th), c34 * std::sin(th)}, {g(rng), g(rng)});
        auto true_rt = t_star_on_grid(oe, grid, c.c, 0, grid.times.size() - 1, Plane::RT);
        CHECK(true_rt.s_star >= eps_k - 1e-6 * a);
        ++asserted;
    }
    CHECK(asserted > 200);
}

namespace {

// literal Appendix-style enumeration: walk every trajectory sample and count
// the admissible contingency-instant combinations ahead of it
long enumerate_full_count(const CountingScheme& s) {
    long r = (s.control == ControlType::Impulsive) ? s.n / s.n_M : 1;
    // contingency instants with t_i <= t_sample (slot j covers samples
    // (j-1)r+1 .. jr); reduces to `sample` itself for continuous control
    auto slots_before = [&](long sample) { return (sample + r - 1) / r; };
    long n_slots = (s.control == ControlType::Impulsive) ? s.n_M : s.n;
    long aa = 0, ap = 0;
    for (long sample = 1; sample <= s.n; ++sample) {
        long k = slots_before(sample);
        aa += k * k;
        ap += k;
    }
    aa += s.m * (n_slots + 1) * (n_slots + 1);
    ap += s.m * (n_slots + 1);
    return aa * (s.N_a * (s.N_a - 1) / 2) + ap * s.N_a * s.N_p;
}

}  // namespace

TEST_CASE("constraint counting matches enumeration") {
    CountingScheme s;
    s.n = 1; s.m = 1; s.n_M = 1; s.N_a = 2; s.N_p = 0;
    s.control = ControlType::Continuous;
    s.formulation = Formulation::Full;
    CHECK(count_constraints(s) == 5);
    CHECK(enumerate_full_count(s) == 5);

    std::mt19937_64 rng(47);
    for (int trial = 0; trial < 200; ++trial) {
        CountingScheme t;
        t.n_M = 1 + int(rng() % 12);
        t.n = t.n_M * (1 + int(rng() % 8));
        t.m = int(rng() % 20);
        t.N_a = 1 + int(rng() % 4);
        t.N_p = int(rng() % 4);
        t.control = (trial % 2) ? ControlType::Continuous : ControlType::Impulsive;
        t.formulation = Formulation::Full;
        CHECK(count_constraints(t) == enumerate_full_count(t));

        t.formulation = Formulation::TStar;
        CHECK(count_constraints(t) == long(enumerate_contingency_pairs(t).size()));
    }
}

TEST_CASE("published counting figures") {
    CountingScheme s;
    s.n = 720; s.m = 720; s.n_M = 25; s.N_a = 1; s.N_p = 1;
    s.control = ControlType::Impulsive;
    s.formulation = Formulation::TStar;
    CHECK(count_constraints(s) == 25);
    s.formulation = Formulation::Full;
    CHECK(count_constraints(s) == 28080);

    CountingScheme h;
    h.n = 24; h.m = 12; h.n_M = 24; h.N_a = 3; h.N_p = 0;
    h.control = ControlType::Continuous;
    h.formulation = Formulation::TStar;
    CHECK(count_constraints(h) == 1728);
}

TEST_CASE("reformulation reduces the polynomial degree") {
    for (long x : {100L, 200L, 400L}) {
        auto ratio = [](long n) {
            CountingScheme s;
            s.n = n; s.m = n; s.n_M = n; s.N_a = 2; s.N_p = 1;
            s.control = ControlType::Continuous;
            s.formulation = Formulation::Full;
            double full = double(count_constraints(s));
            s.formulation = Formulation::TStar;
            return full / double(count_constraints(s));
        };
        double growth = ratio(2 * x) / ratio(x);
        CHECK(growth > 1.8);
        CHECK(growth < 2.5);
    }
}

TEST_CASE("passive safety verification") {
    OrbitalElements oe = heo();
    auto grid = make_nu_grid(oe, 0.0, oe.period(), 25);
    SafetySpec spec;
    spec.eps_m = 100.0;
    spec.horizon_s = oe.period();

    // co-located agents always fail with zero separation
    ICState c(Vec6::Ones() * 1e-5);
    std::vector<Trajectory> same{propagate_integrable(oe, c, grid),
                                 propagate_integrable(oe, c, grid)};
    VerifyOptions opt;
    opt.contingency_samples = {0, 12};
    auto rep = verify_passive_safety(oe, same, 2, spec, PerturbationModel::none(), opt);
    CHECK_FALSE(rep.pass);
    CHECK(rep.min_separation_m == doctest::Approx(0.0).scale(1.0));

    // pure along-track offset on a circular orbit: constant separation
    OrbitalElements circ(7000.0e3, 0.0, 1.0, 0.0, 0.0, 0.0);
    auto cgrid = make_nu_grid(circ, 0.0, circ.period(), 25);
    Vec6 d = Vec6::Zero();
    d[1] = 3e-5;
    std::vector<Trajectory> offs{propagate_integrable(circ, ICState(d), cgrid),
                                 propagate_integrable(circ, ICState(), cgrid)};
    SafetySpec spec2;
    spec2.eps_m = 0.9 * circ.a * 3e-5;
    spec2.horizon_s = circ.period();
    auto rep2 = verify_passive_safety(circ, offs, 2, spec2, PerturbationModel::none(), opt);
    CHECK(rep2.pass);
    CHECK(rep2.min_separation_m == doctest::Approx(circ.a * 3e-5).epsilon(1e-6));
    CHECK(rep2.to_json().find("min_separation_m") != std::string::npos);

    // mismatched grids are rejected
    std::vector<Trajectory> bad{offs[0], propagate_integrable(circ, ICState(),
                                make_nu_grid(circ, 0.0, circ.period(), 26))};
    CHECK_THROWS_AS(verify_passive_safety(circ, bad, 2, spec2, PerturbationModel::none(), opt),
                    std::invalid_argument);
}
