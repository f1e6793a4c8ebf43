#include "psafe/uncertainty.hpp"

#include <cmath>
#include <stdexcept>

namespace psafe {

Covariance::Covariance(const Mat6& x) {
    Mat6 sym = 0.5 * (x + x.transpose());
    Eigen::SelfAdjointEigenSolver<Mat6> es(sym);
    Vec6 ev = es.eigenvalues().cwiseMax(0.0);
    m = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    m = 0.5 * (m + m.transpose());
}

void Covariance::validate() const {
    if ((m - m.transpose()).norm() > 1e-12 * std::max(1.0, m.norm()))
        throw std::invalid_argument("covariance: not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat6> es(m);
    if (es.eigenvalues().minCoeff() < -1e-12)
        throw std::invalid_argument("covariance: not positive semidefinite");
}

NoiseModel NoiseModel::standard(const OrbitalElements& oe, double proc_m_per_orbit,
                                double mag_frac, double dir_rad, double pos_sigma,
                                double vel_sigma) {
    NoiseModel n;
    // The quoted process-noise budget models unmodeled differential drag,
    // which accumulates as an in-track phase error; radial/normal dispersion
    // from drag is orders of magnitude smaller and is covered by the
    // navigation and actuation terms.  Allocating the budget isotropically
    // would make any meter-level radial/normal safety threshold unreachable.
    double sigma_ic = proc_m_per_orbit / oe.a;  // per-orbit std, along-track IC
    n.Q_rate = Mat6::Zero();
    n.Q_rate(1, 1) = sigma_ic * sigma_ic / oe.period();
    n.maneuver_mag_frac = mag_frac;
    n.maneuver_dir_rad = dir_rad;
    n.nav_pos_sigma_m = pos_sigma;
    n.nav_vel_sigma_mps = vel_sigma;
    return n;
}

Mat3 NoiseModel::maneuver_cov(const Vec3& dv) const {
    double mag = dv.norm();
    if (mag == 0.0) return Mat3::Zero();
    Vec3 u = dv / mag;
    double s_par = maneuver_mag_frac * mag;
    double s_perp = maneuver_dir_rad * mag;
    Mat3 par = u * u.transpose();
    return s_par * s_par * par + s_perp * s_perp * (Mat3::Identity() - par);
}

Mat6 NoiseModel::nav_cov_ic(const OrbitalElements& oe, double t) const {
    Mat6 R = Mat6::Zero();
    R.diagonal().head<3>().setConstant(nav_pos_sigma_m * nav_pos_sigma_m);
    R.diagonal().tail<3>().setConstant(nav_vel_sigma_mps * nav_vel_sigma_mps);
    Mat6 Pinv = psi_matrix(oe, t).fullPivLu().inverse();
    return Pinv * R * Pinv.transpose();
}

namespace {

// transition of the onboard IC dynamics over one grid step, central FD
Mat6 step_transition(const OrbitalElements& oe, const ICState& c, double t0, double t1,
                     const PerturbationModel& model) {
    if (model.kind == PerturbationModel::Kind::none) return Mat6::Identity();
    const double h = 1e-7;
    Mat6 phi;
    std::vector<double> grid{t0, t1};
    for (int col = 0; col < 6; ++col) {
        Vec6 cp = c.c, cm = c.c;
        cp[col] += h;
        cm[col] -= h;
        Vec6 fp = propagate_onboard(oe, ICState(cp), {}, model, grid).ic.back().c;
        Vec6 fm = propagate_onboard(oe, ICState(cm), {}, model, grid).ic.back().c;
        phi.col(col) = (fp - fm) / (2.0 * h);
    }
    return phi;
}

}  // namespace

std::vector<Covariance> propagate_covariance(const OrbitalElements& oe, const Covariance& C0,
                                             const Trajectory& mean, const ManeuverPlan& plan,
                                             const NoiseModel& noise,
                                             const PerturbationModel& model) {
    C0.validate();
    std::vector<Covariance> out;
    out.reserve(mean.size());
    Mat6 C = C0.m;

    auto impulse_at = [&](int sample) {
        Vec3 dv = Vec3::Zero();
        for (const auto& imp : plan)
            if (imp.sample == sample) dv += imp.dv;
        return dv;
    };

    for (std::size_t k = 0; k < mean.size(); ++k) {
        if (k > 0) {
            double t0 = mean.times[k - 1], t1 = mean.times[k];
            Mat6 phi = step_transition(oe, mean.ic[k - 1], t0, t1, model);
            C = phi * C * phi.transpose() + noise.Q_rate * (t1 - t0);
        }
        Vec3 dv = impulse_at(int(k));
        if (dv.norm() > 0.0) {
            Mat63 B = control_input_matrix(oe, mean.times[k]);
            C += B * noise.maneuver_cov(dv) * B.transpose();
        }
        for (double te : noise.measurement_epochs) {
            bool in_step = k == 0 ? te <= mean.times[0] + 1e-9
                                  : (te > mean.times[k - 1] + 1e-9 && te <= mean.times[k] + 1e-9);
            if (in_step) C = noise.nav_cov_ic(oe, mean.times[k]);
        }
        out.emplace_back(C);
        C = out.back().m;
    }
    return out;
}

Mat6 drift_jacobian(const OrbitalElements& oe, double t, const ICState& c,
                    const PerturbationModel& model, double step) {
    Mat6 D = Mat6::Zero();
    if (model.kind == PerturbationModel::Kind::none) return D;
    for (int col = 0; col < 6; ++col) {
        Vec6 cp = c.c, cm = c.c;
        cp[col] += step;
        cm[col] -= step;
        D.col(col) = (vop_drift(oe, t, ICState(cp), model) -
                      vop_drift(oe, t, ICState(cm), model)) / (2.0 * step);
    }
    return D;
}

Vec6 min_sep_jacobian(const OrbitalElements& oe, const ICState& ck, const ICState& cj,
                      double t_lo, double t_hi, Plane plane, double step) {
    SeparationGrid grid = SeparationGrid::build(oe, t_lo, t_hi);
    Vec6 jac;
    for (int col = 0; col < 6; ++col) {
        Vec6 dp = ck.c - cj.c, dm = ck.c - cj.c;
        dp[col] += step;
        dm[col] -= step;
        double fp = t_star_on_grid(oe, grid, dp, 0, grid.times.size() - 1, plane, true).s_star;
        double fm = t_star_on_grid(oe, grid, dm, 0, grid.times.size() - 1, plane, true).s_star;
        jac[col] = (fp - fm) / (2.0 * step);
    }
    return jac;
}

Vec6 sep_sensitivity_envelope(const OrbitalElements& oe, double t_lo, double t_hi,
                              Plane plane, double samples_per_deg) {
    double orbits = std::max(0.0, t_hi - t_lo) / oe.period();
    int samples = std::max(2, int(std::ceil(orbits * 360.0 * samples_per_deg)) + 1);
    auto grid = t_hi > t_lo ? make_nu_grid(oe, t_lo, t_hi, samples)
                            : std::vector<double>{t_lo};
    Vec6 env = Vec6::Zero();
    for (double t : grid) {
        Mat36 P = psi_position_rows(oe, solve_kepler(oe, t), t);
        for (int i = 0; i < 6; ++i)
            env[i] = std::max(env[i], projected(Vec3(P.col(i)), plane).norm());
    }
    return env;
}

namespace {

struct ArcQuadrature {
    Vec6 drift_integral = Vec6::Zero();   // int d_c dtau
    Vec6 cov_diag = Vec6::Zero();         // Diag(int (DC + CD' + Q) dtau + C(t_i))
};

ArcQuadrature integrate_arc(const OrbitalElements& oe, const ICState& c_start,
                            const Mat6& C_start, double t_start, double t_end,
                            const PerturbationModel& model, const NoiseModel& noise,
                            int samples_per_orbit) {
    double orbits = (t_end - t_start) / oe.period();
    int samples = std::max(2, int(std::ceil(orbits * samples_per_orbit)) + 1);
    if (samples_per_orbit < 12)
        throw std::invalid_argument("beta quadrature: fewer than 12 samples per orbit");

    // a degenerate arc (failure epoch at the end of the horizon) contributes
    // only its initial covariance
    if (!(t_end > t_start)) {
        ArcQuadrature q;
        q.cov_diag = C_start.diagonal();
        return q;
    }
    auto grid = make_nu_grid(oe, t_start, t_end, samples);
    Trajectory mean = propagate_onboard(oe, c_start, {}, model, grid);

    // covariance of the uncontrolled arc and the integrand, trapezoid rule
    ArcQuadrature q;
    Mat6 C = C_start;
    Mat6 integrand_prev;
    Vec6 drift_prev;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        Mat6 D = drift_jacobian(oe, grid[k], mean.ic[k], model);
        Mat6 integrand = D * C + C * D.transpose() + noise.Q_rate;
        Vec6 drift = vop_drift(oe, grid[k], mean.ic[k], model);
        if (k > 0) {
            double dt = grid[k] - grid[k - 1];
            q.drift_integral += 0.5 * dt * (drift_prev + drift);
            q.cov_diag += 0.5 * dt * (integrand_prev + integrand).diagonal();
            Mat6 phi = step_transition(oe, mean.ic[k - 1], grid[k - 1], grid[k], model);
            C = phi * C * phi.transpose() + noise.Q_rate * dt;
        }
        integrand_prev = integrand;
        drift_prev = drift;
    }
    q.cov_diag += C_start.diagonal();
    return q;
}

}  // namespace

double beta_bound(const OrbitalElements& oe, const ICState& ck_ti, const ICState& cj_tl,
                  const Covariance& Ck_ti, const Covariance& Cj_tl, double t_i, double t_l,
                  double t_end, const SafetySpec& spec, const PerturbationModel& model,
                  const NoiseModel& noise, const Vec6& jac_k, const Vec6& jac_j,
                  int samples_per_orbit) {
    spec.validate();
    if (model.kind == PerturbationModel::Kind::none && noise.Q_rate.norm() == 0.0 &&
        Ck_ti.m.norm() == 0.0 && Cj_tl.m.norm() == 0.0)
        return 0.0;

    ArcQuadrature qk = integrate_arc(oe, ck_ti, Ck_ti.m, t_i, t_end, model, noise,
                                     samples_per_orbit);
    ArcQuadrature qj = integrate_arc(oe, cj_tl, Cj_tl.m, t_l, t_end, model, noise,
                                     samples_per_orbit);

    double beta = jac_k.cwiseAbs().dot(qk.drift_integral.cwiseAbs()) +
                  jac_j.cwiseAbs().dot(qj.drift_integral.cwiseAbs());
    // componentwise absolute sensitivities: a signed contraction would let
    // terms cancel and understate the dispersion
    beta += double(spec.q) * jac_k.cwiseAbs().dot(qk.cov_diag.cwiseAbs().cwiseSqrt());
    beta += double(spec.q) * jac_j.cwiseAbs().dot(qj.cov_diag.cwiseAbs().cwiseSqrt());
    return beta;
}

TrackingBound tracking_margin(const OrbitalElements& oe, const ICState& c_guidance,
                              const Covariance& C_guidance, const ICState& c_estimate,
                              const Covariance& C_estimate, double t_i, double t_end,
                              const Vec6& nu_t, const SafetySpec& spec,
                              const PerturbationModel& model, const NoiseModel& noise,
                              int samples_per_orbit) {
    ArcQuadrature g = integrate_arc(oe, c_guidance, C_guidance.m, t_i, t_end, model, noise,
                                    samples_per_orbit);
    ArcQuadrature t = integrate_arc(oe, c_estimate, C_estimate.m, t_i, t_end, model, noise,
                                    samples_per_orbit);

    TrackingBound b;
    Vec6 drift_diff = (t.drift_integral - g.drift_integral).cwiseAbs();
    Vec6 cov_diff = (double(spec.q) * t.cov_diag.cwiseAbs().cwiseSqrt() -
                     double(spec.q) * g.cov_diag.cwiseAbs().cwiseSqrt()).cwiseAbs();
    b.beta_t = drift_diff + cov_diff;

    Vec6 track_err = (c_estimate.c - c_guidance.c).cwiseAbs();
    b.feasible = true;
    for (int k = 0; k < 6; ++k)
        if (track_err[k] + b.beta_t[k] > nu_t[k]) {
            b.feasible = false;
            if (b.violating_component < 0) b.violating_component = k;
        }
    return b;
}

}  // namespace psafe
