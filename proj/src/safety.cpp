#include "psafe/safety.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace psafe {

namespace {
constexpr double kClamp = 1e-15;

double clamp0(double x) { return x < kClamp ? 0.0 : x; }
}  // namespace

void SafetySpec::validate() const {
    if (!(eps_m > 0.0)) throw std::invalid_argument("safety: eps must be > 0");
    if (horizon_s < 0.0) throw std::invalid_argument("safety: horizon must be >= 0");
    if (q < 1) throw std::invalid_argument("safety: q must be >= 1");
}

void CountingScheme::validate() const {
    if (n < 1 || m < 0 || n_M < 1) throw std::invalid_argument("counting: bad sample counts");
    if (n_M > n) throw std::invalid_argument("counting: n_M must be <= n");
    // n/n_M enters the full-count formula as a real ratio; integer-divisible
    // grids are the common case but not required
    if (N_a < 1 || N_p < 0) throw std::invalid_argument("counting: bad agent counts");
}

Vec3 projected(const Vec3& d, Plane plane) {
    Vec3 p = d;
    if (plane == Plane::RN) p(1) = 0.0;
    if (plane == Plane::RT) p(2) = 0.0;
    return p;
}

SeparationGrid SeparationGrid::build(const OrbitalElements& oe, double t_lo, double t_hi,
                                     double samples_per_deg) {
    if (!(t_lo < t_hi)) throw std::invalid_argument("separation grid: empty window");
    double nu_lo = solve_kepler(oe, t_lo);
    double nu_hi = solve_kepler(oe, t_hi);
    double span_deg = (nu_hi - nu_lo) * 180.0 / M_PI;
    int samples = std::max(2, int(std::ceil(span_deg * samples_per_deg)) + 1);

    SeparationGrid g;
    g.times = make_nu_grid(oe, t_lo, t_hi, samples);
    g.rows.reserve(g.times.size());
    for (double t : g.times) g.rows.push_back(psi_position_rows(oe, solve_kepler(oe, t), t));
    return g;
}

std::size_t SeparationGrid::lower_index(double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t - 1e-9);
    return std::size_t(it - times.begin());
}

double separation_at(const OrbitalElements& oe, double t, const ICState& ck,
                     const ICState& cj, Plane plane) {
    Mat36 P = psi_position_rows(oe, solve_kepler(oe, t), t);
    return projected(P * (ck.c - cj.c), plane).norm();
}

namespace {

double sep_continuous(const OrbitalElements& oe, double t, const Vec6& dc, Plane plane) {
    Mat36 P = psi_position_rows(oe, solve_kepler(oe, t), t);
    return projected(P * dc, plane).norm();
}

// golden-section minimization on [lo, hi]
MinSepResult golden(const OrbitalElements& oe, const Vec6& dc, Plane plane, double lo,
                    double hi) {
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = sep_continuous(oe, x1, dc, plane), f2 = sep_continuous(oe, x2, dc, plane);
    for (int it = 0; it < 64 && (b - a) > 1e-9 * std::max(1.0, std::abs(b)); ++it) {
        if (f1 < f2) {
            b = x2; x2 = x1; f2 = f1;
            x1 = b - gr * (b - a); f1 = sep_continuous(oe, x1, dc, plane);
        } else {
            a = x1; x1 = x2; f1 = f2;
            x2 = a + gr * (b - a); f2 = sep_continuous(oe, x2, dc, plane);
        }
    }
    return f1 < f2 ? MinSepResult{x1, f1} : MinSepResult{x2, f2};
}

}  // namespace

MinSepResult t_star_on_grid(const OrbitalElements& oe, const SeparationGrid& grid,
                            const Vec6& dc, std::size_t i_lo, std::size_t i_hi, Plane plane,
                            bool refine) {
    if (i_hi >= grid.times.size()) i_hi = grid.times.size() - 1;
    if (i_lo > i_hi) throw std::invalid_argument("t_star: empty window");
    std::size_t best = i_lo;
    double s_best = std::numeric_limits<double>::infinity();
    for (std::size_t i = i_lo; i <= i_hi; ++i) {
        double s = projected(grid.rows[i] * dc, plane).norm();
        if (s < s_best) { s_best = s; best = i; }
    }
    MinSepResult r{grid.times[best], s_best};
    if (refine) {
        double lo = grid.times[best > i_lo ? best - 1 : i_lo];
        double hi = grid.times[best < i_hi ? best + 1 : i_hi];
        if (hi > lo) {
            MinSepResult g = golden(oe, dc, plane, lo, hi);
            if (g.s_star < r.s_star) r = g;
        }
    }
    return r;
}

MinSepResult t_star_search(const OrbitalElements& oe, const ICState& ck, const ICState& cj,
                           double t_lo, double t_hi, double samples_per_deg, Plane plane) {
    SeparationGrid grid = SeparationGrid::build(oe, t_lo, t_hi, samples_per_deg);
    return t_star_on_grid(oe, grid, ck.c - cj.c, 0, grid.times.size() - 1, plane, true);
}

double min_sep_rn(double a, double rho_bar, const Eigen::Vector2d& c34_vec,
                  const Eigen::Vector2d& c56_vec) {
    double c34 = c34_vec.norm();
    double c56 = c56_vec.norm();
    if (c34 <= 0.0 && c56 <= 0.0)
        throw singular_geometry_error("min_sep_rn: both invariant vectors are zero");
    Eigen::Vector2d w = c56_vec / rho_bar;
    double num = std::sqrt(2.0) * a * std::abs(c34_vec.dot(w));
    if (num == 0.0) return 0.0;
    double den = std::sqrt(c34 * c34 + w.squaredNorm() +
                           (c34_vec + w).norm() * (c34_vec - w).norm());
    return num / den;
}

bool rn_sufficient_condition(double a, double e, double eps_kjil,
                             const Eigen::Vector2d& c34_vec, const Eigen::Vector2d& c56_vec,
                             double rho_bar) {
    (void)e;  // rho_bar already carries the worst-case 1+e for full-orbit use
    double c34 = c34_vec.norm();
    double c56 = c56_vec.norm();
    if (c34 <= 0.0 || c56 <= 0.0)
        throw singular_geometry_error("rn_sufficient_condition: zero-magnitude vector");
    double eps_a = eps_kjil / a;
    double A2 = c34 * c34;
    double B2 = (c56 / rho_bar) * (c56 / rho_bar);
    // the bound can never reach eps when the two semi-axes are too small
    if (A2 + B2 < 2.0 * eps_a * eps_a) return false;
    double rad = clamp0(A2 + B2 - eps_a * eps_a);
    double cos_xi = eps_a * std::sqrt(rad) / (c34 * c56 / rho_bar);
    if (cos_xi > 1.0) return false;
    double cos_phi = std::abs(c34_vec.dot(c56_vec)) / (c34 * c56);
    return cos_phi >= cos_xi;
}

double min_sep_rt(double a, double rho_bar, double c2, double c34, bool encircling,
                  double eps_kjil) {
    if (c34 < 0.0) throw std::invalid_argument("min_sep_rt: c34 must be >= 0");
    double eps_a = eps_kjil / a;
    if (!encircling) {
        double s = a * (std::abs(c2) / rho_bar - (1.0 / rho_bar + 1.0) * c34);
        return std::max(0.0, s);
    }
    if (c34 < eps_a)
        throw std::domain_error("min_sep_rt: encircling branch infeasible (c34 < eps/a)");
    if (c34 < (1.0 + rho_bar) / rho_bar * eps_a)
        return a * std::sqrt(clamp0(c34 * c34 - c2 * c2 / (1.0 + 2.0 * rho_bar)));
    return a * ((1.0 / rho_bar + 1.0) * c34 - std::abs(c2) / rho_bar);
}

bool rt_sufficient_condition(double a, double e, double eps_kjil, double c2, double c34) {
    double eps_a = eps_kjil / a;
    double c2a = std::abs(c2);
    // not-encircling guarantee over the full orbit (worst case at perigee)
    double rho = 1.0 + e;
    if (c2a >= (1.0 + rho) * c34 + rho * eps_a) return true;
    // encircling guarantee (worst case at apogee)
    rho = 1.0 - e;
    if (c34 >= eps_a) {
        if (c34 < (1.0 + rho) / rho * eps_a) {
            if (c2a * c2a <= (1.0 + 2.0 * rho) * clamp0(c34 * c34 - eps_a * eps_a)) return true;
        } else if (c2a <= (1.0 + rho) * c34 - eps_a) {
            return true;
        }
    }
    return false;
}

long count_constraints(const CountingScheme& s) {
    s.validate();
    long aa_pairs = s.N_a * (s.N_a - 1) / 2;
    long ap_pairs = s.N_a * s.N_p;
    long n = s.n, m = s.m, nM = s.n_M;

    if (s.formulation == Formulation::TStar) {
        long sM = (s.control == ControlType::Impulsive) ? nM : n;
        return sM * sM * aa_pairs + sM * ap_pairs;
    }
    if (s.control == ControlType::Continuous) {
        long aa = n * (n + 1) * (2 * n + 1) / 6 + (n + 1) * (n + 1) * m;
        long ap = n * (n + 1) / 2 + (n + 1) * m;
        return aa * aa_pairs + ap * ap_pairs;
    }
    double ratio = double(n) / double(nM);
    double aa = ratio * (nM * (nM + 1) * (2 * nM + 1) / 6) + double((nM + 1) * (nM + 1) * m);
    double ap = ratio * (nM * (nM + 1) / 2) + double((nM + 1) * m);
    return std::lround(aa * double(aa_pairs) + ap * double(ap_pairs));
}

std::vector<std::array<int, 4>> enumerate_contingency_pairs(const CountingScheme& s) {
    s.validate();
    int sM = int(s.control == ControlType::Impulsive ? s.n_M : s.n);
    std::vector<std::array<int, 4>> out;
    for (int k = 0; k < s.N_a; ++k)
        for (int j = k + 1; j < s.N_a; ++j)
            for (int i = 0; i < sM; ++i)
                for (int l = 0; l < sM; ++l) out.push_back({k, j, i, l});
    for (int k = 0; k < s.N_a; ++k)
        for (int j = int(s.N_a); j < int(s.N_a + s.N_p); ++j)
            for (int i = 0; i < sM; ++i) out.push_back({k, j, i, 0});
    return out;
}

std::string VerifyReport::to_json() const {
    nlohmann::json j;
    j["pass"] = pass;
    j["min_separation_m"] = min_separation_m;
    j["worst_pair"] = {{"k", worst.k}, {"j", worst.j}, {"i", worst.i}, {"l", worst.l},
                       {"t_star_s", worst.t_star}};
    nlohmann::json table = nlohmann::json::array();
    for (const auto& p : per_pair)
        table.push_back({{"k", p.k}, {"j", p.j}, {"i", p.i}, {"l", p.l},
                         {"t_star_s", p.t_star}, {"s_star_m", p.s_star}, {"beta_m", p.beta}});
    j["per_pair"] = table;
    return j.dump(2);
}

VerifyReport verify_passive_safety(const OrbitalElements& oe,
                                   const std::vector<Trajectory>& trajectories, int n_active,
                                   const SafetySpec& spec, const PerturbationModel& model,
                                   const VerifyOptions& opt) {
    spec.validate();
    if (trajectories.empty() || n_active < 1 || n_active > int(trajectories.size()))
        throw std::invalid_argument("verify: bad agent partition");
    const auto& base_times = trajectories[0].times;
    for (const auto& tr : trajectories)
        if (tr.times != base_times) throw std::invalid_argument("verify: trajectory grid mismatch");

    std::vector<int> samples = opt.contingency_samples;
    if (samples.empty()) {
        samples.resize(base_times.size());
        for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = int(i);
    }
    for (int s : samples)
        if (s < 0 || s >= int(base_times.size()))
            throw std::invalid_argument("verify: contingency sample out of range");

    const int n_agents = int(trajectories.size());
    const double t_end = base_times.back() + spec.horizon_s;
    double t_first = base_times[size_t(*std::min_element(samples.begin(), samples.end()))];
    if (!(t_end > t_first)) throw std::invalid_argument("verify: empty evaluation window");
    SeparationGrid grid = SeparationGrid::build(oe, t_first, t_end, opt.samples_per_deg);
    const std::size_t G = grid.times.size();

    const bool closed_form = (model.kind == PerturbationModel::Kind::none);

    // one uncontrolled arc per (agent, contingency start); passive agents get
    // a single arc starting at sample 0
    struct Arc {
        std::size_t g0 = 0;           // first valid index on the evaluation grid
        Vec6 c = Vec6::Zero();        // constant IC (closed-form path)
        std::vector<Vec3> pos;        // positions on grid[g0..] (propagated path)
    };
    auto make_arc = [&](int agent, int sample) {
        Arc arc;
        arc.g0 = grid.lower_index(base_times[size_t(sample)]);
        if (closed_form) {
            arc.c = trajectories[size_t(agent)].ic[size_t(sample)].c;
        } else {
            std::vector<double> sub(grid.times.begin() + long(arc.g0), grid.times.end());
            auto tr = propagate_ground_truth(oe, {trajectories[size_t(agent)].ic[size_t(sample)]},
                                             {}, model, sub);
            arc.pos.reserve(sub.size());
            for (const auto& r : tr[0].cart) arc.pos.push_back(r.pos);
        }
        return arc;
    };

    std::vector<std::vector<Arc>> active_arcs;
    active_arcs.resize(size_t(n_active));
    for (int k = 0; k < n_active; ++k)
        for (int s : samples) active_arcs[size_t(k)].push_back(make_arc(k, s));
    std::vector<Arc> passive_arcs;
    for (int j = n_active; j < n_agents; ++j) passive_arcs.push_back(make_arc(j, 0));

    auto pair_min = [&](const Arc& ak, const Arc& aj) {
        std::size_t g0 = std::max(ak.g0, aj.g0);
        MinSepResult r;
        if (closed_form)
            return t_star_on_grid(oe, grid, ak.c - aj.c, g0, G - 1, spec.plane, opt.refine);
        r.s_star = std::numeric_limits<double>::infinity();
        for (std::size_t g = g0; g < G; ++g) {
            Vec3 d = ak.pos[g - ak.g0] - aj.pos[g - aj.g0];
            double s = projected(d, spec.plane).norm();
            if (s < r.s_star) { r.s_star = s; r.t_star = grid.times[g]; }
        }
        return r;
    };

    VerifyReport rep;
    rep.min_separation_m = std::numeric_limits<double>::infinity();
    auto record = [&](int k, int j, int i, int l, const MinSepResult& r) {
        ContingencyPair p{k, j, i, l, r.t_star, r.s_star, 0.0};
        rep.per_pair.push_back(p);
        if (r.s_star < rep.min_separation_m) {
            rep.min_separation_m = r.s_star;
            rep.worst = p;
        }
    };

    for (int k = 0; k < n_active; ++k)
        for (int j = k + 1; j < n_active; ++j)
            for (std::size_t i = 0; i < samples.size(); ++i)
                for (std::size_t l = 0; l < samples.size(); ++l)
                    record(k, j, samples[i], samples[l],
                           pair_min(active_arcs[size_t(k)][i], active_arcs[size_t(j)][l]));
    for (int k = 0; k < n_active; ++k)
        for (int j = n_active; j < n_agents; ++j)
            for (std::size_t i = 0; i < samples.size(); ++i)
                record(k, j, samples[i], 0,
                       pair_min(active_arcs[size_t(k)][i], passive_arcs[size_t(j - n_active)]));
    for (int k = n_active; k < n_agents; ++k)
        for (int j = k + 1; j < n_agents; ++j)
            record(k, j, 0, 0,
                   pair_min(passive_arcs[size_t(k - n_active)], passive_arcs[size_t(j - n_active)]));

    rep.pass = rep.min_separation_m >= spec.eps_m;
    return rep;
}

}  // namespace psafe
