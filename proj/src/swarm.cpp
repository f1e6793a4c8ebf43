#include "psafe/swarm.hpp"

#include <cmath>

namespace psafe {

double high_density_c2_cap(double a, double e, double eps_m, double c34_min) {
    double eps_a = eps_m / a;
    if (c34_min < eps_a) throw design_error("high-density: c34_min below eps/a");
    if (c34_min < (2.0 - e) / (1.0 - e) * eps_a)
        return std::sqrt((3.0 - 2.0 * e) / 4.0 *
                         std::max(0.0, c34_min * c34_min - eps_a * eps_a));
    return (2.0 - e) / 2.0 * c34_min - eps_a / 2.0;
}

SwarmDesign design_high_density(double a, double e, double eps_m, double c34_min,
                                double theta34,
                                const std::vector<std::pair<int, int>>& lattice,
                                const std::vector<double>& c2) {
    if (lattice.empty()) throw design_error("high-density: no lattice points");
    for (std::size_t k = 0; k < lattice.size(); ++k) {
        if (lattice[k].first == 0 && lattice[k].second == 0)
            throw design_error("high-density: lattice point " + std::to_string(k) +
                               " is the origin");
        for (std::size_t j = k + 1; j < lattice.size(); ++j)
            if (lattice[k] == lattice[j])
                throw design_error("high-density: coincident lattice points " +
                                   std::to_string(k) + " and " + std::to_string(j));
    }
    double cap = high_density_c2_cap(a, e, eps_m, c34_min);

    SwarmDesign d;
    d.kind = SwarmKind::high_density;
    d.c34_min = c34_min;
    d.theta34 = theta34;
    for (std::size_t k = 0; k < lattice.size(); ++k) {
        double c2k = k < c2.size() ? c2[k] : 0.0;
        if (std::abs(c2k) > cap + 1e-15)
            throw design_error("high-density: agent " + std::to_string(k) +
                               " violates the |c2| cap (" + std::to_string(std::abs(c2k)) +
                               " > " + std::to_string(cap) + ")");
        double W = lattice[k].first, X = lattice[k].second;
        Vec6 v = Vec6::Zero();
        v[1] = c2k;
        v[2] = c34_min * (W * std::cos(theta34) + X * std::cos(theta34 + PI / 3.0));
        v[3] = c34_min * (W * std::sin(theta34) + X * std::sin(theta34 + PI / 3.0));
        d.agents.emplace_back(v);
    }
    return d;
}

double rn_phase_margin(double a, double e, double eps_m, double c34_min, double c56_min,
                       double theta34, double theta56) {
    double eps_a = eps_m / a;
    double w = c56_min / (1.0 + e);
    double rad = std::max(0.0, c34_min * c34_min + w * w - eps_a * eps_a);
    double threshold = eps_a * (1.0 + e) / (c34_min * c56_min) * std::sqrt(rad);
    return std::abs(std::cos(theta34 - theta56)) - threshold;
}

SwarmDesign design_rn_separated(double a, double e, double eps_m, double c34_min,
                                double c56_min, double theta34, double theta56,
                                const std::vector<double>& mags34,
                                const std::vector<double>& mags56) {
    double eps_a = eps_m / a;
    if (c34_min < eps_a) throw design_error("rn-separated: c34_min below eps/a");
    if (c56_min < eps_a * (1.0 + e))
        throw design_error("rn-separated: c56_min below (eps/a)(1+e)");
    double margin = rn_phase_margin(a, e, eps_m, c34_min, c56_min, theta34, theta56);
    if (margin < 0.0)
        throw design_error("rn-separated: phase condition violated, margin " +
                           std::to_string(margin));

    std::vector<double> m34 = mags34, m56 = mags56;
    std::size_t n = std::max(m34.size(), m56.size());
    if (n == 0) n = 2;
    for (std::size_t k = m34.size(); k < n; ++k) m34.push_back(double(k + 1) * c34_min);
    for (std::size_t k = m56.size(); k < n; ++k) m56.push_back(double(k + 1) * c56_min);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = k + 1; j < n; ++j) {
            if (std::abs(m34[k] - m34[j]) < c34_min - 1e-15)
                throw design_error("rn-separated: c34 magnitude gap below minimum for agents " +
                                   std::to_string(k) + "," + std::to_string(j));
            if (std::abs(m56[k] - m56[j]) < c56_min - 1e-15)
                throw design_error("rn-separated: c56 magnitude gap below minimum for agents " +
                                   std::to_string(k) + "," + std::to_string(j));
        }

    SwarmDesign d;
    d.kind = SwarmKind::rn_separated;
    d.c34_min = c34_min;
    d.c56_min = c56_min;
    d.theta34 = theta34;
    d.theta56 = theta56;
    for (std::size_t k = 0; k < n; ++k) {
        Vec6 v = Vec6::Zero();
        v[2] = m34[k] * std::cos(theta34);
        v[3] = m34[k] * std::sin(theta34);
        v[4] = m56[k] * std::cos(theta56);
        v[5] = m56[k] * std::sin(theta56);
        d.agents.emplace_back(v);
    }
    return d;
}

}  // namespace psafe
