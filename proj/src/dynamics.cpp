#include "psafe/dynamics.hpp"

#include <cmath>

namespace psafe {

namespace {
constexpr double SRP_PRESSURE = 4.56e-6;  // N/m^2 at 1 AU
}

PerturbationModel PerturbationModel::j2(double mass, double area, double cr) {
    PerturbationModel m;
    m.kind = Kind::j2;
    m.mass_kg = mass;
    m.area_m2 = area;
    m.cr = cr;
    return m;
}

PerturbationModel PerturbationModel::j2_srp(double mass, double area, double cr,
                                            const Vec3& sun) {
    PerturbationModel m;
    m.kind = Kind::j2_srp;
    m.mass_kg = mass;
    m.area_m2 = area;
    m.cr = cr;
    m.sun_dir_eci = sun.normalized();
    return m;
}

double FormationPlan::cost() const {
    double c = 0.0;
    for (const auto& plan : agents)
        for (const auto& imp : plan) c += imp.dv.norm();
    return c;
}

std::vector<double> make_nu_grid(const OrbitalElements& oe, double t0, double tf,
                                 int samples) {
    if (samples < 2 || !(tf > t0)) throw std::invalid_argument("make_nu_grid: bad grid");
    double nu_a = solve_kepler(oe, t0);
    double nu_b = solve_kepler(oe, tf);
    std::vector<double> times(samples);
    double n = oe.mean_motion(), e = oe.e;
    double M_epoch = oe.mean_anomaly_epoch();
    for (int k = 0; k < samples; ++k) {
        double nu = nu_a + (nu_b - nu_a) * k / double(samples - 1);
        // invert nu -> t through Kepler's equation, preserving revolutions
        double nu_w = wrap_pi(nu);
        double E = 2.0 * std::atan2(std::sqrt(1.0 - e) * std::sin(nu_w / 2.0),
                                    std::sqrt(1.0 + e) * std::cos(nu_w / 2.0));
        double M = E - e * std::sin(E) + (nu - nu_w);
        times[k] = (M - M_epoch) / n;
    }
    times.front() = t0;
    times.back() = tf;
    return times;
}

Mat63 control_input_matrix(const OrbitalElements& oe, double t) {
    Mat6 P = psi_matrix(oe, t);
    Mat63 B = Mat63::Zero();
    B.block<3, 3>(3, 0) = Mat3::Identity();
    return P.fullPivLu().solve(Mat6::Identity()) * B;
}

Trajectory propagate_integrable(const OrbitalElements& oe, const ICState& c0,
                                const std::vector<double>& grid) {
    Trajectory traj;
    traj.provenance = Provenance::integrable;
    traj.times = grid;
    traj.ic.assign(grid.size(), c0);
    traj.cart.reserve(grid.size());
    for (double t : grid) traj.cart.push_back(cartesian_from_ic(oe, t, c0));
    return traj;
}

Vec3 perturbed_accel(const Vec3& r, const PerturbationModel& model, double mu) {
    double rn = r.norm();
    Vec3 acc = -mu / (rn * rn * rn) * r;
    if (model.kind != PerturbationModel::Kind::none) {
        double z2 = r.z() * r.z(), r2 = rn * rn;
        double f = -1.5 * J2_EARTH * mu * R_EARTH * R_EARTH / (r2 * r2 * rn);
        Vec3 aj2;
        aj2.x() = f * r.x() * (1.0 - 5.0 * z2 / r2);
        aj2.y() = f * r.y() * (1.0 - 5.0 * z2 / r2);
        aj2.z() = f * r.z() * (3.0 - 5.0 * z2 / r2);
        acc += aj2;
    }
    if (model.kind == PerturbationModel::Kind::j2_srp && model.area_m2 > 0.0) {
        acc += (SRP_PRESSURE * model.cr * model.area_m2 / model.mass_kg) *
               model.sun_dir_eci;
    }
    return acc;
}

Vec6 eci_from_elements(const OrbitalElements& oe, double t) {
    double nu = wrap_pi(solve_kepler(oe, t));
    double p = oe.a * (1.0 - oe.e * oe.e);
    double r = p / (1.0 + oe.e * std::cos(nu));
    double h = std::sqrt(oe.mu * p);
    // perifocal
    Vec3 rp(r * std::cos(nu), r * std::sin(nu), 0.0);
    Vec3 vp(-oe.mu / h * std::sin(nu), oe.mu / h * (oe.e + std::cos(nu)), 0.0);
    Eigen::AngleAxisd Rz1(oe.raan, Vec3::UnitZ());
    Eigen::AngleAxisd Rx(oe.i, Vec3::UnitX());
    Eigen::AngleAxisd Rz2(oe.argp, Vec3::UnitZ());
    Mat3 Q = (Rz1 * Rx * Rz2).toRotationMatrix();
    Vec6 s;
    s << Q * rp, Q * vp;
    return s;
}

OrbitalElements elements_from_eci(const Vec6& state, double mu) {
    Vec3 r = state.head<3>(), v = state.tail<3>();
    double rn = r.norm();
    Vec3 h = r.cross(v);
    Vec3 node = Vec3::UnitZ().cross(h);
    Vec3 evec = v.cross(h) / mu - r / rn;
    double e = evec.norm();
    double energy = 0.5 * v.squaredNorm() - mu / rn;
    double a = -mu / (2.0 * energy);
    double inc = std::acos(std::clamp(h.z() / h.norm(), -1.0, 1.0));
    double raan = std::atan2(node.y(), node.x());
    double nn = node.norm();
    double argp, nu;
    if (nn > 1e-12 && e > 1e-12) {
        argp = std::atan2((node / nn).cross(evec / e).dot(h / h.norm()),
                          (node / nn).dot(evec / e));
        nu = std::atan2((evec / e).cross(r / rn).dot(h / h.norm()),
                        (evec / e).dot(r / rn));
    } else if (e > 1e-12) {
        argp = std::atan2(evec.y(), evec.x());
        nu = std::atan2((evec / e).cross(r / rn).dot(h / h.norm()),
                        (evec / e).dot(r / rn));
    } else {
        argp = 0.0;
        Vec3 xref = nn > 1e-12 ? Vec3(node / nn) : Vec3(Vec3::UnitX());
        nu = std::atan2(xref.cross(r / rn).dot(h / h.norm()), xref.dot(r / rn));
    }
    return OrbitalElements(a, e, inc, raan, argp, nu, mu);
}

Mat3 rtn_basis(const Vec6& ref) {
    Vec3 r = ref.head<3>(), v = ref.tail<3>();
    Vec3 R = r.normalized();
    Vec3 N = r.cross(v).normalized();
    Vec3 T = N.cross(R);
    Mat3 Q;
    Q.col(0) = R;
    Q.col(1) = T;
    Q.col(2) = N;
    return Q;
}

Vec6 absolute_from_relative(const Vec6& ref, const RelativeState& rel) {
    Mat3 Q = rtn_basis(ref);
    Vec3 r = ref.head<3>(), v = ref.tail<3>();
    Vec3 omega = r.cross(v) / r.squaredNorm();  // frame angular velocity
    Vec6 out;
    out.head<3>() = r + Q * rel.pos;
    out.tail<3>() = v + Q * rel.vel + omega.cross(Vec3(Q * rel.pos));
    return out;
}

RelativeState relative_from_absolute(const Vec6& ref, const Vec6& agent) {
    Mat3 Q = rtn_basis(ref);
    Vec3 r = ref.head<3>(), v = ref.tail<3>();
    Vec3 omega = r.cross(v) / r.squaredNorm();
    Vec3 dr = agent.head<3>() - r;
    Vec3 dv = agent.tail<3>() - v - omega.cross(dr);
    return RelativeState(Q.transpose() * dr, Q.transpose() * dv);
}

Vec6 vop_drift(const OrbitalElements& oe, double t, const ICState& c,
               const PerturbationModel& model) {
    if (model.kind == PerturbationModel::Kind::none) return Vec6::Zero();
    Vec6 ref = eci_from_elements(oe, t);
    RelativeState rel = cartesian_from_ic(oe, t, c);
    Vec6 agent = absolute_from_relative(ref, rel);
    // differential perturbation in RTN; two-body differential already lives in
    // the integrable part, so difference the perturbation-only accelerations
    PerturbationModel two_body = PerturbationModel::none();
    Vec3 da = (perturbed_accel(agent.head<3>(), model, oe.mu) -
               perturbed_accel(agent.head<3>(), two_body, oe.mu)) -
              (perturbed_accel(ref.head<3>(), model, oe.mu) -
               perturbed_accel(ref.head<3>(), two_body, oe.mu));
    Mat3 Q = rtn_basis(ref);
    Vec6 d = Vec6::Zero();
    d.tail<3>() = Q.transpose() * da;
    return psi_matrix(oe, t).fullPivLu().solve(d);
}

Trajectory propagate_onboard(const OrbitalElements& oe, const ICState& c0,
                             const ManeuverPlan& plan, const PerturbationModel& model,
                             const std::vector<double>& grid, double max_step) {
    for (const auto& imp : plan)
        if (imp.sample < 0 || imp.sample >= int(grid.size()))
            throw std::out_of_range("propagate_onboard: maneuver index out of range");

    Trajectory traj;
    traj.provenance = Provenance::onboard;
    traj.times = grid;
    traj.ic.reserve(grid.size());
    traj.cart.reserve(grid.size());

    auto rhs = [&](double t, const Vec6& c) { return vop_drift(oe, t, ICState(c), model); };
    Vec6 c = c0.c;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (k > 0) {
            double t0 = grid[k - 1], t1 = grid[k];
            if (model.kind != PerturbationModel::Kind::none) {
                int steps = std::max(1, int(std::ceil((t1 - t0) / max_step)));
                double h = (t1 - t0) / steps;
                for (int s = 0; s < steps; ++s) {
                    double t = t0 + s * h;
                    Vec6 k1 = rhs(t, c);
                    Vec6 k2 = rhs(t + 0.5 * h, c + 0.5 * h * k1);
                    Vec6 k3 = rhs(t + 0.5 * h, c + 0.5 * h * k2);
                    Vec6 k4 = rhs(t + h, c + h * k3);
                    c += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                }
            }
        }
        for (const auto& imp : plan)
            if (imp.sample == int(k)) c += control_input_matrix(oe, grid[k]) * imp.dv;
        traj.ic.emplace_back(c);
        traj.cart.push_back(cartesian_from_ic(oe, grid[k], ICState(c)));
    }
    return traj;
}

std::vector<Trajectory> propagate_ground_truth(const OrbitalElements& oe,
                                               const std::vector<ICState>& c0,
                                               const std::vector<ManeuverPlan>& plans,
                                               const PerturbationModel& model,
                                               const std::vector<double>& grid,
                                               double max_step) {
    const std::size_t n_agents = c0.size();
    // state: reference + agents, integrated together on the same steps
    std::vector<Vec6> states(n_agents + 1);
    states[0] = eci_from_elements(oe, grid.at(0));
    for (std::size_t k = 0; k < n_agents; ++k)
        states[k + 1] = absolute_from_relative(
            states[0], cartesian_from_ic(oe, grid[0], c0[k]));

    auto step_all = [&](double t, double h) {
        for (auto& s : states) {
            auto f = [&](const Vec6& x) {
                Vec6 d;
                d.head<3>() = x.tail<3>();
                d.tail<3>() = perturbed_accel(x.head<3>(), model, oe.mu);
                return d;
            };
            Vec6 k1 = f(s);
            Vec6 k2 = f(s + 0.5 * h * k1);
            Vec6 k3 = f(s + 0.5 * h * k2);
            Vec6 k4 = f(s + h * k3);
            s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        (void)t;
    };

    std::vector<Trajectory> out(n_agents);
    for (auto& tr : out) {
        tr.provenance = Provenance::ground_truth;
        tr.times = grid;
        tr.ic.reserve(grid.size());
        tr.cart.reserve(grid.size());
    }

    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (k > 0) {
            double t0 = grid[k - 1], t1 = grid[k];
            int steps = std::max(1, int(std::ceil((t1 - t0) / max_step)));
            double h = (t1 - t0) / steps;
            for (int s = 0; s < steps; ++s) step_all(t0 + s * h, h);
        }
        for (std::size_t ag = 0; ag < n_agents; ++ag) {
            if (ag < plans.size())
                for (const auto& imp : plans[ag])
                    if (imp.sample == int(k)) {
                        Mat3 Q = rtn_basis(states[0]);
                        states[ag + 1].tail<3>() += Q * imp.dv;
                    }
            RelativeState rel = relative_from_absolute(states[0], states[ag + 1]);
            out[ag].cart.push_back(rel);
            out[ag].ic.push_back(ic_from_cartesian(oe, grid[k], rel));
        }
    }
    return out;
}

}  // namespace psafe
