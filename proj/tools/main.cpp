// Command-line front end: plan / verify / count / design / simulate over
// scenario files, with JSON and CSV artifacts for downstream tooling.
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "psafe/scenario.hpp"
#include "psafe/sim.hpp"
#include "psafe/swarm.hpp"

namespace fs = std::filesystem;
using namespace psafe;

namespace {

constexpr double DEG = PI / 180.0;

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << content;
}

Plane parse_plane(const std::string& s) {
    if (s == "rn") return Plane::RN;
    if (s == "rt") return Plane::RT;
    if (s == "3d") return Plane::ThreeD;
    throw CLI::ValidationError("--plane must be rn|rt|3d");
}

// Post-maneuver trajectories of every agent on the plan's sample grid.
std::vector<Trajectory> roll_out(const Scenario& sc, const FormationPlan& fp,
                                 const std::vector<double>& grid) {
    std::vector<Trajectory> trs;
    for (std::size_t k = 0; k < sc.active.size(); ++k)
        trs.push_back(propagate_onboard(sc.cfg.oe, ICState{sc.active[k].c0}, fp.agents[k],
                                        sc.cfg.model, grid));
    for (const Vec6& p : sc.passive)
        trs.push_back(sc.cfg.model.kind == PerturbationModel::Kind::none
                          ? propagate_integrable(sc.cfg.oe, ICState{p}, grid)
                          : propagate_onboard(sc.cfg.oe, ICState{p}, {}, sc.cfg.model, grid));
    return trs;
}

std::vector<int> slot_samples(const CountingScheme& s) {
    std::vector<int> out;
    for (long j = 0; j < s.n_M; ++j)
        out.push_back(std::clamp(int(std::lround(double((j + 1) * s.n) / double(s.n_M))), 1,
                                 int(s.n)));
    return out;
}

// t_s, controlled minimum pairwise separation in the enforced plane.
std::string separation_profile_csv(const Scenario& sc,
                                   const std::vector<Trajectory>& trs) {
    std::ostringstream os;
    os.precision(12);
    os << "t_s,min_controlled_sep_m\n";
    for (std::size_t i = 0; i < trs[0].times.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < trs.size(); ++a)
            for (std::size_t b = a + 1; b < trs.size(); ++b)
                best = std::min(best, separation_at(sc.cfg.oe, trs[0].times[i],
                                                    trs[a].ic[i], trs[b].ic[i],
                                                    sc.cfg.safety.plane));
        os << trs[0].times[i] << "," << best << "\n";
    }
    return os.str();
}

// Worst-instant record of every checked contingency combination.
std::string contingency_csv(const VerifyReport& rep) {
    std::ostringstream os;
    os.precision(12);
    os << "agent_k,agent_j,slot_i,slot_l,t_star_s,s_star_m,beta_m\n";
    for (const ContingencyPair& p : rep.per_pair)
        os << p.k << "," << p.j << "," << p.i << "," << p.l << "," << p.t_star << ","
           << p.s_star << "," << p.beta << "\n";
    return os.str();
}

int cmd_plan(const std::string& scenario_path, const std::string& safety_mode,
             const std::string& plane_flag, const std::string& out_dir) {
    Scenario sc = load_scenario(scenario_path);
    if (!plane_flag.empty()) sc.cfg.safety.plane = parse_plane(plane_flag);

    PlanResult pr = safety_mode == "ca" ? plan_collision_avoidance(sc.cfg, sc.active,
                                                                   sc.passive)
                                        : plan(sc.cfg, sc.active, sc.passive);

    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "plan.json", pr.to_json());
    auto trs = roll_out(sc, pr.plan, pr.sample_times);
    write_file(fs::path(out_dir) / "separations.csv", separation_profile_csv(sc, trs));

    // Contingency certificate: for CA plans this is a diagnostic re-check of
    // passive safety so the violation the CA formulation ignores is visible.
    VerifyOptions vo;
    vo.contingency_samples = {0};
    auto slots = slot_samples(sc.cfg.scheme);
    for (int s : slots)
        if (s != slots.back()) vo.contingency_samples.push_back(s);
    SafetySpec spec = sc.cfg.safety;
    if (safety_mode == "ca") spec.horizon_s = sc.cfg.safety.horizon_s;  // full horizon
    VerifyReport rep = verify_passive_safety(sc.cfg.oe, trs, int(sc.active.size()), spec,
                                             sc.cfg.model, vo);
    write_file(fs::path(out_dir) / "certificate.json", rep.to_json());
    write_file(fs::path(out_dir) / "contingency.csv", contingency_csv(rep));

    std::cout << "feasible=" << (pr.feasible ? 1 : 0) << " cost_mps=" << pr.cost_mps
              << " min_separation_m=" << rep.min_separation_m
              << " ps_pass=" << (rep.pass ? 1 : 0) << "\n";
    return pr.feasible ? 0 : 2;
}

int cmd_verify(const std::string& scenario_path, const std::string& plan_path,
               const std::string& out_dir) {
    Scenario sc = load_scenario(scenario_path);
    std::ifstream in(plan_path);
    if (!in) throw std::runtime_error("cannot open plan file: " + plan_path);
    std::stringstream ss;
    ss << in.rdbuf();
    FormationPlan fp = plan_from_json(ss.str(), sc.active.size());

    auto grid = make_nu_grid(sc.cfg.oe, sc.cfg.t0, sc.cfg.tf, int(sc.cfg.scheme.n) + 1);
    auto trs = roll_out(sc, fp, grid);
    VerifyOptions vo;
    vo.contingency_samples = {0};
    auto slots = slot_samples(sc.cfg.scheme);
    for (int s : slots)
        if (s != slots.back()) vo.contingency_samples.push_back(s);
    VerifyReport rep = verify_passive_safety(sc.cfg.oe, trs, int(sc.active.size()),
                                             sc.cfg.safety, sc.cfg.model, vo);
    fs::create_directories(out_dir);
    write_file(fs::path(out_dir) / "verify.json", rep.to_json());
    std::cout << rep.to_json() << "\n";
    return rep.pass ? 0 : 2;
}

int cmd_count(long n, long m, long n_m, long na, long np, const std::string& control,
              const std::string& formulation, const std::string& sweep_csv) {
    CountingScheme s;
    s.n = n;
    s.m = m;
    s.n_M = n_m;
    s.N_a = na;
    s.N_p = np;
    s.control = control == "continuous" ? ControlType::Continuous : ControlType::Impulsive;

    auto count_as = [&](Formulation f) {
        CountingScheme c = s;
        c.formulation = f;
        return count_constraints(c);
    };
    if (formulation == "both" || formulation.empty()) {
        std::cout << "full=" << count_as(Formulation::Full)
                  << " tstar=" << count_as(Formulation::TStar) << "\n";
    } else {
        std::cout << count_as(formulation == "full" ? Formulation::Full
                                                    : Formulation::TStar)
                  << "\n";
    }
    if (!sweep_csv.empty()) {
        std::ostringstream os;
        os << "n,full,tstar\n";
        for (long nn = 60; nn <= 1800; nn += 60) {
            CountingScheme c = s;
            c.n = nn;
            // keep the maneuver grid commensurate for the impulsive case
            if (c.control == ControlType::Impulsive) c.n_M = std::max(1L, nn * n_m / n);
            c.formulation = Formulation::Full;
            long full = count_constraints(c);
            c.formulation = Formulation::TStar;
            os << nn << "," << full << "," << count_constraints(c) << "\n";
        }
        write_file(sweep_csv, os.str());
    }
    return 0;
}

int cmd_design(const std::string& kind, double a_km, double e, double eps_m,
               double c34_min_m, double theta34_deg, double c56_min_m, double theta56_deg,
               int agents) {
    double a = a_km * 1e3;
    SwarmDesign d;
    if (kind == "hd") {
        // default lattice: distinct non-zero 60-degree-basis coordinates
        static const std::vector<std::pair<int, int>> pool = {
            {1, -1}, {-1, 0}, {0, 1}, {1, 0}, {0, -1}, {-1, 1}, {2, -1}, {-2, 1}};
        if (agents > int(pool.size()))
            throw std::runtime_error("design: at most " + std::to_string(pool.size()) +
                                     " default lattice agents");
        std::vector<std::pair<int, int>> lattice(pool.begin(), pool.begin() + agents);
        d = design_high_density(a, e, eps_m, c34_min_m / a, theta34_deg * DEG, lattice);
    } else if (kind == "rn") {
        std::vector<double> m34, m56;
        for (int k = 1; k <= agents; ++k) {
            m34.push_back(double(k) * c34_min_m / a);
            m56.push_back(double(k) * c56_min_m / a);
        }
        d = design_rn_separated(a, e, eps_m, c34_min_m / a, c56_min_m / a,
                                theta34_deg * DEG, theta56_deg * DEG, m34, m56);
    } else {
        throw CLI::ValidationError("--kind must be hd|rn");
    }
    // scenario-fragment output, paste-ready
    std::ostringstream os;
    os.precision(10);
    for (std::size_t k = 0; k < d.agents.size(); ++k) {
        os << "[[agents]]\nname = \"s" << k + 1 << "\"\nactive = true\nic_m = [";
        for (int i = 0; i < 6; ++i) os << (i ? ", " : "") << a * d.agents[k].c[i];
        os << "]\n\n";
    }
    std::cout << os.str();
    return 0;
}

int cmd_simulate(const std::string& scenario_path, int trials, std::uint64_t seed,
                 const std::string& mode, const std::string& out_dir) {
    Scenario sc = load_scenario(scenario_path);
    fs::create_directories(out_dir);
    PlanResult pr = plan(sc.cfg, sc.active, sc.passive);
    if (!pr.feasible) {
        std::cout << "plan infeasible: " << pr.message << "\n";
        return 2;
    }
    write_file(fs::path(out_dir) / "plan.json", pr.to_json());

    if (mode == "closed-loop") {
        SimConfig sim;
        for (int t = 0; t < trials; ++t) {
            RunRecord rec =
                run_closed_loop(sc.cfg, sc.active, sc.passive, sim, seed + std::uint64_t(t),
                                &pr);
            write_file(fs::path(out_dir) / ("trial_" + std::to_string(t) + ".csv"),
                       rec.to_csv(sc.cfg.oe.a));
            if (t == 0) {
                nlohmann::json j;
                j["replan_count"] = rec.replan_count;
                j["total_cost_mps"] = rec.total_cost_mps;
                j["min_contingency_sep_m"] = rec.min_contingency_sep_m;
                nlohmann::json err = nlohmann::json::array();
                for (const Vec6& v : rec.terminal_error_ac_m)
                    err.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
                j["terminal_error_ac_m"] = err;
                write_file(fs::path(out_dir) / "run.json", j.dump(2));
            }
        }
        std::cout << "wrote " << trials << " closed-loop trial(s) to " << out_dir << "\n";
        return 0;
    }
    MonteCarloStats st =
        contingency_monte_carlo(sc.cfg, pr, sc.active, sc.passive, trials, seed);
    write_file(fs::path(out_dir) / "stats.json", st.to_json());
    std::cout << st.to_json() << "\n";
    return st.violation_rate < 0.01 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fuel-optimal passively safe formation reconfiguration toolkit"};
    app.require_subcommand(1);

    std::string scenario, plan_path, out_dir = ".", plane_flag, safety_mode = "ps";
    std::string control = "impulsive", formulation = "both", sweep_csv, mode = "mc";
    std::string kind = "hd";
    long n = 720, m = 720, n_m = 25, na = 1, np = 1;
    double a_km = 6878.137, ecc = 0.001, eps_m = 100.0;
    double c34_min_m = 240.0, theta34_deg = 120.0, c56_min_m = 0.0, theta56_deg = 0.0;
    int agents = 3, trials = 100;
    std::uint64_t seed = 0;

    auto* p = app.add_subcommand("plan", "solve a reconfiguration scenario");
    p->add_option("scenario", scenario, "scenario file")->required();
    p->add_option("--safety", safety_mode, "ps|ca")->check(CLI::IsMember({"ps", "ca"}));
    p->add_option("--plane", plane_flag, "rn|rt|3d override");
    p->add_option("--out-dir", out_dir, "artifact directory");

    auto* v = app.add_subcommand("verify", "re-verify a plan file against a scenario");
    v->add_option("scenario", scenario, "scenario file")->required();
    v->add_option("--plan", plan_path, "plan JSON")->required();
    v->add_option("--out-dir", out_dir, "artifact directory");

    auto* c = app.add_subcommand("count", "constraint counts per formulation");
    c->add_option("--n", n);
    c->add_option("--m", m);
    c->add_option("--n-m", n_m);
    c->add_option("--na", na);
    c->add_option("--np", np);
    c->add_option("--control", control)->check(CLI::IsMember({"impulsive", "continuous"}));
    c->add_option("--formulation", formulation)
        ->check(CLI::IsMember({"full", "tstar", "both"}));
    c->add_option("--sweep", sweep_csv, "write a sample-count sweep CSV");

    auto* d = app.add_subcommand("design", "closed-form safe swarm geometry");
    d->add_option("--kind", kind, "hd|rn")->check(CLI::IsMember({"hd", "rn"}));
    d->add_option("--a-km", a_km);
    d->add_option("--e", ecc);
    d->add_option("--eps-m", eps_m);
    d->add_option("--c34-min-m", c34_min_m);
    d->add_option("--theta34-deg", theta34_deg);
    d->add_option("--c56-min-m", c56_min_m);
    d->add_option("--theta56-deg", theta56_deg);
    d->add_option("--agents", agents);

    auto* s = app.add_subcommand("simulate", "Monte Carlo / closed-loop simulation");
    s->add_option("scenario", scenario, "scenario file")->required();
    s->add_option("--trials", trials);
    s->add_option("--seed", seed);
    s->add_option("--mode", mode)->check(CLI::IsMember({"mc", "closed-loop"}));
    s->add_option("--out-dir", out_dir, "artifact directory");

    CLI11_PARSE(app, argc, argv);
    try {
        if (p->parsed()) return cmd_plan(scenario, safety_mode, plane_flag, out_dir);
        if (v->parsed()) return cmd_verify(scenario, plan_path, out_dir);
        if (c->parsed())
            return cmd_count(n, m, n_m, na, np, control, formulation, sweep_csv);
        if (d->parsed())
            return cmd_design(kind, a_km, ecc, eps_m, c34_min_m, theta34_deg, c56_min_m,
                              theta56_deg, agents);
        if (s->parsed()) return cmd_simulate(scenario, trials, seed, mode, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
