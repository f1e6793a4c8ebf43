#include <cmath>

#include "doctest.h"
#include "psafe/safety.hpp"
#include "psafe/swarm.hpp"

using namespace psafe;

namespace {
OrbitalElements heo() { return {24641.0e3, 0.716, 7.0 * PI / 180.0, -10.0 * PI / 180.0,
                                135.0 * PI / 180.0, 210.6 * PI / 180.0}; }

VerifyReport verify_design(const OrbitalElements& oe, const SwarmDesign& d, double eps,
                           Plane plane) {
    auto grid = make_nu_grid(oe, 0.0, oe.period(), 25);
    std::vector<Trajectory> trs;
    for (const auto& c : d.agents) trs.push_back(propagate_integrable(oe, c, grid));
    SafetySpec spec;
    spec.eps_m = eps;
    spec.horizon_s = oe.period();
    spec.plane = plane;
    VerifyOptions opt;
    opt.contingency_samples = {0};
    return verify_passive_safety(oe, trs, int(trs.size()), spec, PerturbationModel::none(),
                                 opt);
}
}  // namespace

TEST_CASE("high-density lattice reproduces the benchmark geometry") {
    OrbitalElements oe = heo();
    double c34_min = 240.0 / oe.a;
    auto d = design_high_density(oe.a, oe.e, 100.0, c34_min, 120.0 * PI / 180.0,
                                 {{1, -1}, {-1, 0}, {0, 1}},
                                 {29.3 / oe.a, -29.3 / oe.a, -19.6 / oe.a});
    REQUIRE(d.agents.size() == 3);
    CHECK(oe.a * d.agents[0].c[2] == doctest::Approx(120.0).epsilon(1e-3));
    CHECK(oe.a * d.agents[1].c[2] == doctest::Approx(120.0).epsilon(1e-3));
    CHECK(oe.a * d.agents[2].c[2] == doctest::Approx(-240.0).epsilon(1e-3));
    CHECK(oe.a * d.agents[0].c[3] == doctest::Approx(207.9).epsilon(1e-3));
    CHECK(oe.a * d.agents[1].c[3] == doctest::Approx(-207.9).epsilon(1e-3));
    CHECK(oe.a * d.agents[2].c[3] == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    for (const auto& c : d.agents) CHECK(c.c[0] == 0.0);

    // pairwise gaps meet the minimum and the tangential condition holds
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = k + 1; j < 3; ++j) {
            Eigen::Vector2d gap = d.agents[k].c34_vec() - d.agents[j].c34_vec();
            CHECK(gap.norm() >= c34_min * (1.0 - 1e-12));
        }

    auto rep = verify_design(oe, d, 100.0, Plane::RT);
    CHECK(rep.pass);
    CHECK(rep.min_separation_m >= 100.0);
}

TEST_CASE("high-density cap and failure modes") {
    double a = 7000.0e3, eps = 10.0;
    // near-circular limit of the cap, square-root branch (c34 < 2 eps/a)
    double c34s = 1.5 * eps / a;
    CHECK(high_density_c2_cap(a, 0.0, eps, c34s) ==
          doctest::Approx(std::sqrt(0.75 * (c34s * c34s - eps * eps / (a * a)))).epsilon(1e-12));
    double c34 = 3.0 * eps / a;
    CHECK(high_density_c2_cap(a, 0.0, eps, c34) ==
          doctest::Approx(c34 - eps / (2.0 * a)).epsilon(1e-12));
    CHECK_THROWS_AS(high_density_c2_cap(a, 0.0, eps, 0.5 * eps / a), design_error);

    auto big_c2 = [&] {
        design_high_density(a, 0.0, eps, c34, 0.0, {{1, 0}, {0, 1}}, {10.0 * c34, 0.0});
    };
    CHECK_THROWS_WITH_AS(big_c2(), doctest::Contains("agent 0"), design_error);
    CHECK_THROWS_AS(design_high_density(a, 0.0, eps, c34, 0.0, {{1, 0}, {1, 0}}),
                    design_error);
    CHECK_THROWS_AS(design_high_density(a, 0.0, eps, c34, 0.0, {{0, 0}}), design_error);
}

TEST_CASE("rn-separated swarm accepts the benchmark phasing") {
    OrbitalElements oe = heo();
    double eps = 100.0;
    double c34_min = 240.0 / oe.a, c56_min = 411.8 / oe.a;
    double th34 = 60.0 * PI / 180.0, th56 = 236.2 * PI / 180.0;
    CHECK(rn_phase_margin(oe.a, oe.e, eps, c34_min, c56_min, th34, th56) > 0.0);

    std::vector<double> m34{-192.0 / oe.a, 48.0 / oe.a, 288.0 / oe.a};
    std::vector<double> m56{-329.5 / oe.a, 82.4 / oe.a, 494.2 / oe.a};
    auto d = design_rn_separated(oe.a, oe.e, eps, c34_min, c56_min, th34, th56, m34, m56);
    REQUIRE(d.agents.size() == 3);

    // every pair satisfies its own sufficient condition with beta = 0
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t j = k + 1; j < 3; ++j) {
            Eigen::Vector2d d34 = d.agents[k].c34_vec() - d.agents[j].c34_vec();
            Eigen::Vector2d d56 = d.agents[k].c56_vec() - d.agents[j].c56_vec();
            CHECK(rn_sufficient_condition(oe.a, oe.e, eps, d34, d56, 1.0 + oe.e));
            CHECK(min_sep_rn(oe.a, 1.0 + oe.e, d34, d56) >= eps);
        }

    auto rep = verify_design(oe, d, eps, Plane::RN);
    CHECK(rep.pass);
    CHECK(rep.min_separation_m >= eps);
}

TEST_CASE("rn-separated rejections") {
    OrbitalElements oe = heo();
    double eps = 100.0;
    double c34_min = 240.0 / oe.a, c56_min = 411.8 / oe.a;
    // perpendicular phases cannot satisfy the inequality for finite eps
    CHECK_THROWS_WITH_AS(design_rn_separated(oe.a, oe.e, eps, c34_min, c56_min, 0.0, PI / 2),
                         doctest::Contains("margin"), design_error);
    // zero eps accepts any phasing
    auto d = design_rn_separated(oe.a, oe.e, 0.0, c34_min, c56_min, 0.0, PI / 2);
    CHECK(d.agents.size() == 2);
    // magnitude gaps below minimum are rejected
    CHECK_THROWS_AS(design_rn_separated(oe.a, oe.e, eps, c34_min, c56_min, 0.0, 0.1,
                                        {0.0, 0.5 * c34_min}, {0.0, 2.0 * c56_min}),
                    design_error);
}
