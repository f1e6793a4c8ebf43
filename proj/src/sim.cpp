#include "psafe/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"

namespace psafe {

namespace {

using Rng = std::mt19937_64;

// Square root of a PSD matrix via eigendecomposition; negative eigenvalues
// from roundoff are clamped so sampling never produces NaNs.
Mat6 psd_sqrt(const Mat6& m) {
    Eigen::SelfAdjointEigenSolver<Mat6> es(0.5 * (m + m.transpose()));
    Vec6 d = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

Vec6 sample6(const Mat6& sqrt_cov, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vec6 z;
    for (int i = 0; i < 6; ++i) z[i] = n01(rng);
    return sqrt_cov * z;
}

// Magnitude (fractional) plus pointing (small-angle cone) execution noise.
Vec3 perturb_dv(const Vec3& dv, const NoiseModel& noise, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    double zm = n01(rng), z1 = n01(rng), z2 = n01(rng);
    double mag = dv.norm();
    if (mag < 1e-15) return dv;
    Vec3 u = dv / mag;
    Vec3 a = std::abs(u.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Vec3 e1 = u.cross(a).normalized();
    Vec3 e2 = u.cross(e1);
    return dv * (1.0 + noise.maneuver_mag_frac * zm) +
           noise.maneuver_dir_rad * mag * (z1 * e1 + z2 * e2);
}

std::vector<int> slot_samples(const CountingScheme& s) {
    std::vector<int> out;
    for (long j = 0; j < s.n_M; ++j) {
        int k = int(std::lround(double((j + 1) * s.n) / double(s.n_M)));
        out.push_back(std::clamp(k, 1, int(s.n)));
    }
    return out;
}

// Advance one IC state across sample intervals [s0, s1] of `grid` with
// midpoint drift integration and a white-noise increment per interval.
void advance_truth(const OrbitalElements& oe, Vec6& c, const std::vector<double>& grid,
                   int s0, int s1, const PerturbationModel& model, const Mat6& Lq, Rng& rng,
                   bool noisy) {
    for (int i = s0; i < s1; ++i) {
        double dt = grid[size_t(i + 1)] - grid[size_t(i)];
        Vec6 k1 = vop_drift(oe, grid[size_t(i)], ICState{c}, model);
        Vec6 cm = c + 0.5 * dt * k1;
        c += dt * vop_drift(oe, grid[size_t(i)] + 0.5 * dt, ICState{cm}, model);
        if (noisy) c += std::sqrt(dt) * sample6(Lq, rng);
    }
}

struct LoopCtx {
    PlannerConfig cfg;
    std::vector<AgentTask> tasks;
    PlanResult pr;
    std::vector<int> slots;                       // slot -> sample index
    std::vector<Trajectory> guid;                 // per active agent
    std::vector<std::vector<Covariance>> guid_cov;
};

LoopCtx make_loop_ctx(const PlannerConfig& cfg, const std::vector<AgentTask>& tasks,
                      PlanResult pr) {
    LoopCtx c;
    c.cfg = cfg;
    c.tasks = tasks;
    c.pr = std::move(pr);
    c.slots = slot_samples(cfg.scheme);
    Covariance C0(cfg.noise.nav_cov_ic(cfg.oe, cfg.t0));
    for (std::size_t k = 0; k < tasks.size(); ++k) {
        const ManeuverPlan& mp = c.pr.plan.agents[k];
        c.guid.push_back(propagate_onboard(cfg.oe, ICState{tasks[k].c0}, mp, cfg.model,
                                           c.pr.sample_times));
        c.guid_cov.push_back(
            propagate_covariance(cfg.oe, C0, c.guid.back(), mp, cfg.noise, cfg.model));
    }
    return c;
}

Vec3 planned_dv(const ManeuverPlan& mp, int sample) {
    Vec3 dv = Vec3::Zero();
    for (const Impulse& imp : mp)
        if (imp.sample == sample) dv += imp.dv;
    return dv;
}

// Worst pairwise minimum separation if every agent lost control at `t`.
// Simultaneous loss at a shared epoch is one of the certified contingency
// combinations, so a certified plan keeps this metric above eps.
double both_fail_min_sep(const OrbitalElements& oe, const std::vector<Vec6>& states,
                         double t, double t_end, Plane plane, double samples_per_deg) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < states.size(); ++a)
        for (std::size_t b = a + 1; b < states.size(); ++b) {
            MinSepResult r = t_star_search(oe, ICState{states[a]}, ICState{states[b]}, t,
                                           t_end, samples_per_deg, plane);
            best = std::min(best, r.s_star);
        }
    return best;
}

}  // namespace

std::string RunRecord::to_csv(double a) const {
    std::ostringstream os;
    os.precision(12);
    os << "epoch,t_s,agent,ac1_m,ac2_m,ac3_m,ac4_m,ac5_m,ac6_m,contingency_min_m\n";
    for (std::size_t e = 0; e < epochs.size(); ++e) {
        const EpochLog& log = epochs[e];
        for (std::size_t k = 0; k < truth_ic.size(); ++k) {
            os << log.epoch << "," << log.t_s << "," << k;
            const Vec6& c = truth_ic[k][e];
            for (int i = 0; i < 6; ++i) os << "," << a * c[i];
            os << "," << log.contingency_min_m << "\n";
        }
    }
    return os.str();
}

RunRecord run_closed_loop(const PlannerConfig& cfg, const std::vector<AgentTask>& active,
                          const std::vector<Vec6>& passive, const SimConfig& sim,
                          std::uint64_t seed, const PlanResult* initial_plan) {
    cfg.validate();
    Rng rng(seed);
    const double a = cfg.oe.a;
    const double t_end = cfg.tf + cfg.safety.horizon_s;
    const Vec6 nu_t = sim.nu_t_m / a;
    const bool noisy = cfg.noise.Q_rate.norm() > 0.0 || cfg.noise.nav_pos_sigma_m > 0.0 ||
                       cfg.noise.nav_vel_sigma_mps > 0.0;
    const Mat6 Lq = psd_sqrt(cfg.noise.Q_rate);

    PlanResult first = initial_plan ? *initial_plan : plan(cfg, active, passive, nullptr);
    if (!first.feasible)
        throw planner_error("closed loop: initial plan infeasible: " + first.message);
    LoopCtx ctx = make_loop_ctx(cfg, active, std::move(first));

    RunRecord rec;
    std::vector<Vec6> truth;
    for (const AgentTask& t : active) truth.push_back(t.c0);
    rec.truth_ic.assign(truth.size(), {});
    rec.min_contingency_sep_m = std::numeric_limits<double>::infinity();

    int epoch = 0, prev_s = 0, j = 0;
    double last_dv_mag = std::numeric_limits<double>::infinity();
    while (j < int(ctx.slots.size())) {
        int s = ctx.slots[size_t(j)];
        double t = ctx.pr.sample_times[size_t(s)];
        for (Vec6& c : truth)
            advance_truth(cfg.oe, c, ctx.pr.sample_times, prev_s, s, cfg.model, Lq, rng,
                          noisy);

        EpochLog log;
        log.epoch = epoch;
        log.t_s = t;

        // Navigation estimates and componentwise tracking feasibility against
        // the pre-impulse guidance state.
        Covariance Cnav(cfg.noise.nav_cov_ic(cfg.oe, t));
        Mat6 Lnav = psd_sqrt(Cnav.m);
        double worst = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < truth.size(); ++k) {
            Vec6 est = truth[k] + (noisy ? sample6(Lnav, rng) : Vec6::Zero());
            log.estimate.push_back(est);
            Vec6 guid_pre = ctx.guid[k].ic[size_t(s)].c -
                            control_input_matrix(cfg.oe, t) *
                                planned_dv(ctx.pr.plan.agents[k], s);
            TrackingBound tb = tracking_margin(
                cfg.oe, ICState{guid_pre}, ctx.guid_cov[k][size_t(s)], ICState{est}, Cnav, t,
                t_end, nu_t, cfg.safety, cfg.model, cfg.noise);
            log.tracking_feasible = log.tracking_feasible && tb.feasible;
            Vec6 slack =
                ((est - guid_pre).cwiseAbs() + tb.beta_t - nu_t) * a;
            worst = std::max(worst, slack.maxCoeff());
        }
        log.worst_margin_m = worst;

        // Sanity check: open-loop worst-case separation from the estimates.
        bool check = sim.cadence == SanityCadence::every_epoch ||
                     (sim.cadence == SanityCadence::after_maneuvers &&
                      last_dv_mag > sim.large_maneuver_mps);
        if (check) {
            std::vector<Vec6> est_all;
            for (const Vec6& e : log.estimate) est_all.push_back(e);
            for (const Vec6& p : passive) est_all.push_back(p);
            double pred = both_fail_min_sep(cfg.oe, est_all, t, t_end, cfg.safety.plane,
                                            cfg.samples_per_deg);
            log.sanity_ok = pred >= cfg.safety.eps_m;
        }

        // Replan from the estimates over the remaining horizon when tracking
        // or the sanity check fails; the new plan's own slots take over.
        int rem_slots = int(ctx.slots.size()) - j;
        int rem_samples = int(ctx.cfg.scheme.n) - s;
        if (sim.allow_replan && (!log.tracking_feasible || !log.sanity_ok) &&
            rem_slots >= 1 && rem_samples >= rem_slots && rec.replan_count < epoch + 1) {
            PlannerConfig c2 = ctx.cfg;
            c2.t0 = t;
            c2.scheme.n = rem_samples;
            c2.scheme.n_M = rem_slots;
            std::vector<AgentTask> t2 = ctx.tasks;
            for (std::size_t k = 0; k < t2.size(); ++k) t2[k].c0 = log.estimate[k];
            PlanResult p2 = plan(c2, t2, passive, nullptr);
            if (p2.feasible) {
                log.replanned = true;
                ++rec.replan_count;
                log.dv_applied.assign(truth.size(), Vec3::Zero());
                log.contingency_min_m = both_fail_min_sep(
                    cfg.oe, truth, t, t_end, cfg.safety.plane, cfg.samples_per_deg);
                rec.min_contingency_sep_m =
                    std::min(rec.min_contingency_sep_m, log.contingency_min_m);
                for (std::size_t k = 0; k < truth.size(); ++k)
                    rec.truth_ic[k].push_back(truth[k]);
                rec.epochs.push_back(log);
                ctx = make_loop_ctx(c2, t2, std::move(p2));
                prev_s = 0;
                j = 0;
                ++epoch;
                last_dv_mag = std::numeric_limits<double>::infinity();
                continue;
            }
            log.sanity_ok = false;  // keep flying the in-force plan
        }

        // Execute the in-force impulses at this slot with actuation noise.
        last_dv_mag = 0.0;
        for (std::size_t k = 0; k < truth.size(); ++k) {
            Vec3 dv = planned_dv(ctx.pr.plan.agents[k], s);
            Vec3 dv_real = noisy ? perturb_dv(dv, cfg.noise, rng) : dv;
            truth[k] += control_input_matrix(cfg.oe, t) * dv_real;
            rec.total_cost_mps += dv_real.norm();
            last_dv_mag = std::max(last_dv_mag, dv_real.norm());
            log.dv_applied.push_back(dv_real);
        }

        log.contingency_min_m =
            both_fail_min_sep(cfg.oe, truth, t, t_end, cfg.safety.plane, cfg.samples_per_deg);
        rec.min_contingency_sep_m =
            std::min(rec.min_contingency_sep_m, log.contingency_min_m);
        for (std::size_t k = 0; k < truth.size(); ++k)
            rec.truth_ic[k].push_back(truth[k]);
        rec.epochs.push_back(log);
        prev_s = s;
        ++j;
        ++epoch;
    }

    for (std::size_t k = 0; k < truth.size(); ++k)
        rec.terminal_error_ac_m.push_back(a * (truth[k] - ctx.tasks[k].target));
    return rec;
}

std::string MonteCarloStats::to_json() const {
    nlohmann::json j;
    j["trials"] = trials;
    j["violations"] = violations;
    j["violation_rate"] = violation_rate;
    j["coverage_ratio"] = coverage_ratio;
    j["beta_m"] = beta_m;
    j["min_separation_m"] = min_separation_m;
    j["mean_separation_m"] = mean_separation_m;
    j["histogram_edges_m"] = histogram_edges_m;
    j["histogram_counts"] = histogram_counts;
    return j.dump(2);
}

MonteCarloStats contingency_monte_carlo(const PlannerConfig& cfg, const PlanResult& plan,
                                        const std::vector<AgentTask>& active,
                                        const std::vector<Vec6>& passive, int trials,
                                        std::uint64_t seed) {
    cfg.validate();
    if (trials < 1) throw std::invalid_argument("contingency_monte_carlo: trials < 1");
    if (!plan.feasible) throw planner_error("contingency_monte_carlo: plan not feasible");
    Rng rng(seed);
    const double t_end = cfg.tf + cfg.safety.horizon_s;
    const int nA = int(active.size()), nP = int(passive.size());
    const std::vector<int> slots = slot_samples(cfg.scheme);
    const int nM = int(slots.size());

    // Shared evaluation grid with precomputed position rows.
    SeparationGrid grid =
        SeparationGrid::build(cfg.oe, cfg.t0, t_end, std::max(0.5, cfg.samples_per_deg));
    const int N = int(grid.times.size());
    std::vector<int> slot_grid;  // slot -> first grid index at/after its epoch
    for (int j = 0; j < nM; ++j)
        slot_grid.push_back(int(grid.lower_index(plan.sample_times[size_t(slots[size_t(j)])] -
                                                 1e-9)));

    // Deterministic mean paths on the grid; drift rates are frozen along them
    // (a variational approximation: meter-level dispersions barely change the
    // differential-perturbation rate).
    std::vector<std::vector<Vec6>> mean(std::size_t(nA + nP));
    std::vector<std::vector<Vec6>> drift(std::size_t(nA + nP),
                                         std::vector<Vec6>(std::size_t(N), Vec6::Zero()));
    const bool has_drift = cfg.model.kind != PerturbationModel::Kind::none;
    for (int k = 0; k < nA + nP; ++k) {
        ManeuverPlan mp;
        if (k < nA)
            for (const Impulse& imp : plan.plan.agents[size_t(k)]) {
                // Re-index impulses from planner samples onto the grid epoch.
                int j = int(std::find(slots.begin(), slots.end(), imp.sample) - slots.begin());
                if (j < nM) mp.push_back({slot_grid[size_t(j)], imp.dv});
            }
        Vec6 c0 = k < nA ? active[size_t(k)].c0 : passive[size_t(k - nA)];
        Trajectory tr = propagate_onboard(cfg.oe, ICState{c0}, mp, cfg.model, grid.times);
        for (int i = 0; i < N; ++i) {
            mean[size_t(k)].push_back(tr.ic[size_t(i)].c);
            if (has_drift)
                drift[size_t(k)][size_t(i)] =
                    vop_drift(cfg.oe, grid.times[size_t(i)], tr.ic[size_t(i)], cfg.model);
        }
    }

    // Noise-free minimum separation for a given failure, memoized.
    std::vector<std::vector<double>> predicted(std::size_t(nA),
                                               std::vector<double>(std::size_t(nM), -1.0));
    auto predict = [&](int kf, int p) {
        double& slot_val = predicted[size_t(kf)][size_t(p)];
        if (slot_val >= 0.0) return slot_val;
        int g0 = slot_grid[size_t(p)];
        Vec6 c = mean[size_t(kf)][size_t(g0)];  // pre-impulse-p state
        Vec3 dvp = Vec3::Zero();
        for (const Impulse& imp : plan.plan.agents[size_t(kf)])
            if (imp.sample == slots[size_t(p)]) dvp += imp.dv;
        c -= control_input_matrix(cfg.oe, grid.times[size_t(g0)]) * dvp;
        double best = std::numeric_limits<double>::infinity();
        for (int i = g0; i < N; ++i) {
            for (int o = 0; o < nA + nP; ++o) {
                if (o == kf) continue;
                Vec3 d = grid.rows[size_t(i)] * (c - mean[size_t(o)][size_t(i)]);
                best = std::min(best, projected(d, cfg.safety.plane).norm());
            }
            if (i + 1 < N && has_drift)
                c += (grid.times[size_t(i + 1)] - grid.times[size_t(i)]) *
                     drift[size_t(kf)][size_t(i)];
        }
        slot_val = best;
        return slot_val;
    };

    const Mat6 Lq = psd_sqrt(cfg.noise.Q_rate);
    const Mat6 Lnav = psd_sqrt(cfg.noise.nav_cov_ic(cfg.oe, cfg.t0));
    const double beta =
        cfg.beta_fixed_m >= 0.0 ? cfg.beta_fixed_m : plan.beta_max_m;

    MonteCarloStats st;
    st.trials = trials;
    st.beta_m = beta;
    std::vector<double> mins;
    mins.reserve(std::size_t(trials));
    std::uniform_int_distribution<int> pick_agent(0, nA - 1), pick_slot(0, nM - 1);
    int covered = 0;
    std::vector<Vec6> c(std::size_t(nA + nP));

    for (int trial = 0; trial < trials; ++trial) {
        int kf = pick_agent(rng), p = pick_slot(rng);
        for (int k = 0; k < nA + nP; ++k)
            c[size_t(k)] = (k < nA ? active[size_t(k)].c0 : passive[size_t(k - nA)]) +
                           sample6(Lnav, rng);
        double best = std::numeric_limits<double>::infinity();
        int g_fail = slot_grid[size_t(p)];
        int next_slot = 0;
        for (int i = 0; i < N; ++i) {
            while (next_slot < nM && slot_grid[size_t(next_slot)] == i) {
                for (int k = 0; k < nA; ++k) {
                    if (k == kf && next_slot >= p) continue;  // control lost
                    Vec3 dv = Vec3::Zero();
                    for (const Impulse& imp : plan.plan.agents[size_t(k)])
                        if (imp.sample == slots[size_t(next_slot)]) dv += imp.dv;
                    c[size_t(k)] += control_input_matrix(cfg.oe, grid.times[size_t(i)]) *
                                    perturb_dv(dv, cfg.noise, rng);
                }
                ++next_slot;
            }
            if (i >= g_fail) {
                for (int o = 0; o < nA + nP; ++o) {
                    if (o == kf) continue;
                    Vec3 d = grid.rows[size_t(i)] * (c[size_t(kf)] - c[size_t(o)]);
                    best = std::min(best, projected(d, cfg.safety.plane).norm());
                }
            }
            if (i + 1 < N) {
                double dt = grid.times[size_t(i + 1)] - grid.times[size_t(i)];
                for (int k = 0; k < nA + nP; ++k) {
                    if (has_drift) c[size_t(k)] += dt * drift[size_t(k)][size_t(i)];
                    c[size_t(k)] += std::sqrt(dt) * sample6(Lq, rng);
                }
            }
        }
        mins.push_back(best);
        if (best < cfg.safety.eps_m) ++st.violations;
        // small absolute slack so roundoff between the realized and predicted
        // paths cannot flip a noise-free trial into non-coverage
        if (best >= predict(kf, p) - beta - 1e-9) ++covered;
    }

    st.violation_rate = double(st.violations) / double(trials);
    st.coverage_ratio = double(covered) / double(trials);
    st.min_separation_m = *std::min_element(mins.begin(), mins.end());
    st.mean_separation_m = 0.0;
    for (double v : mins) st.mean_separation_m += v / double(trials);
    double lo = st.min_separation_m;
    double hi = *std::max_element(mins.begin(), mins.end());
    if (hi <= lo) hi = lo + 1.0;
    const int bins = 20;
    st.histogram_counts.assign(bins, 0);
    for (int b = 0; b <= bins; ++b)
        st.histogram_edges_m.push_back(lo + (hi - lo) * double(b) / double(bins));
    for (double v : mins) {
        int b = std::min(bins - 1, int((v - lo) / (hi - lo) * bins));
        ++st.histogram_counts[size_t(b)];
    }
    return st;
}

}  // namespace psafe
