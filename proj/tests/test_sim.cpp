#include <cmath>

#include "doctest.h"
#include "psafe/sim.hpp"

using namespace psafe;

namespace {

OrbitalElements leo() {
    OrbitalElements oe;
    oe.a = R_EARTH + 500e3;
    oe.e = 0.001;
    oe.i = 98.0 * PI / 180.0;
    oe.raan = 0.0;
    oe.argp = 0.0;
    oe.nu0 = 0.0;
    return oe;
}

PlannerConfig base_config(int n_active, int n_passive) {
    PlannerConfig cfg;
    cfg.oe = leo();
    cfg.t0 = 0.0;
    cfg.tf = 2.0 * cfg.oe.period();
    cfg.scheme.n = 48;
    cfg.scheme.m = 24;
    cfg.scheme.n_M = 12;
    cfg.scheme.N_a = n_active;
    cfg.scheme.N_p = n_passive;
    cfg.scheme.control = ControlType::Impulsive;
    cfg.scheme.formulation = Formulation::TStar;
    cfg.safety.eps_m = 100.0;
    cfg.safety.horizon_s = cfg.oe.period();
    cfg.safety.plane = Plane::ThreeD;
    cfg.model = PerturbationModel::none();
    return cfg;
}

Vec6 ellipse_ic(const OrbitalElements& oe, double ac34_m, double theta34) {
    Vec6 c = Vec6::Zero();
    c[2] = ac34_m / oe.a * std::cos(theta34);
    c[3] = ac34_m / oe.a * std::sin(theta34);
    return c;
}

// Standard fixture: one active agent rotating a 400 m in-plane ellipse by
// half a turn around a passive agent at the origin.
struct Fixture {
    PlannerConfig cfg = base_config(1, 1);
    std::vector<AgentTask> active;
    std::vector<Vec6> passive{Vec6::Zero()};

    Fixture() {
        AgentTask t;
        t.c0 = ellipse_ic(cfg.oe, 400.0, 0.0);
        t.target = ellipse_ic(cfg.oe, 400.0, PI);
        active.push_back(t);
    }
};

}  // namespace

TEST_CASE("closed loop with zero noise") {
    Fixture f;
    PlanResult pr = plan(f.cfg, f.active, f.passive);
    REQUIRE(pr.feasible);

    SimConfig sim;
    RunRecord rec = run_closed_loop(f.cfg, f.active, f.passive, sim, 7, &pr);

    CHECK(rec.replan_count == 0);
    CHECK(rec.epochs.size() == 12);
    CHECK(rec.terminal_error_ac_m[0].cwiseAbs().maxCoeff() < 0.1);
    CHECK(rec.total_cost_mps == doctest::Approx(pr.cost_mps).epsilon(1e-9));
    CHECK(rec.min_contingency_sep_m >= 0.99 * f.cfg.safety.eps_m);
    for (const EpochLog& e : rec.epochs) {
        CHECK(e.tracking_feasible);
        CHECK(e.sanity_ok);
        CHECK(!e.replanned);
    }

    SUBCASE("sanity cadence variants agree when nothing goes wrong") {
        SimConfig never;
        never.cadence = SanityCadence::never;
        RunRecord r2 = run_closed_loop(f.cfg, f.active, f.passive, never, 7, &pr);
        CHECK(r2.replan_count == 0);
        CHECK(r2.total_cost_mps == rec.total_cost_mps);
    }
}

TEST_CASE("closed loop determinism and noise response") {
    Fixture f;
    f.cfg.noise = NoiseModel::standard(f.cfg.oe, 0.2, 0.002, 0.2 / 60.0 * PI / 180.0);
    f.cfg.safety.q = 3;
    PlanResult pr = plan(f.cfg, f.active, f.passive);
    REQUIRE(pr.feasible);

    SimConfig sim;
    sim.nu_t_m = Vec6::Constant(200.0);  // loose tracking gate for the small case
    RunRecord r1 = run_closed_loop(f.cfg, f.active, f.passive, sim, 42, &pr);
    RunRecord r2 = run_closed_loop(f.cfg, f.active, f.passive, sim, 42, &pr);
    RunRecord r3 = run_closed_loop(f.cfg, f.active, f.passive, sim, 43, &pr);

    CHECK(r1.to_csv(f.cfg.oe.a) == r2.to_csv(f.cfg.oe.a));
    CHECK(r1.total_cost_mps == r2.total_cost_mps);
    CHECK(r1.to_csv(f.cfg.oe.a) != r3.to_csv(f.cfg.oe.a));

    CHECK(r1.replan_count <= int(r1.epochs.size()));
    CHECK(std::isfinite(r1.total_cost_mps));
    // Meter-level noise keeps the loop near the guidance solution.
    CHECK(r1.terminal_error_ac_m[0].cwiseAbs().maxCoeff() < 50.0);
    CHECK(r1.min_contingency_sep_m > 0.5 * f.cfg.safety.eps_m);
}

TEST_CASE("contingency Monte Carlo") {
    Fixture f;
    PlanResult pr = plan(f.cfg, f.active, f.passive);
    REQUIRE(pr.feasible);

    SUBCASE("zero noise reproduces the deterministic worst cases") {
        MonteCarloStats st =
            contingency_monte_carlo(f.cfg, pr, f.active, f.passive, 50, 1);
        CHECK(st.trials == 50);
        CHECK(st.violations == 0);
        CHECK(st.coverage_ratio == 1.0);
        // Sampled scan of a certified plan stays at or above the certificate
        // up to grid resolution.
        CHECK(st.min_separation_m >= 0.98 * f.cfg.safety.eps_m);
    }

    SUBCASE("noisy trials: high coverage, rare violations, valid histogram") {
        f.cfg.noise = NoiseModel::standard(f.cfg.oe, 0.2, 0.002, 0.2 / 60.0 * PI / 180.0);
        f.cfg.safety.q = 3;
        PlanResult prn = plan(f.cfg, f.active, f.passive);
        REQUIRE(prn.feasible);
        MonteCarloStats st =
            contingency_monte_carlo(f.cfg, prn, f.active, f.passive, 400, 5);
        CHECK(st.violation_rate <= 0.02);
        CHECK(st.coverage_ratio >= 0.95);
        long total = 0;
        for (long c : st.histogram_counts) total += c;
        CHECK(total == 400);
        CHECK(st.min_separation_m <= st.mean_separation_m);

        MonteCarloStats st2 =
            contingency_monte_carlo(f.cfg, prn, f.active, f.passive, 400, 5);
        CHECK(st.to_json() == st2.to_json());
    }
}
