#include "psafe/socp.hpp"
#include <cstdio>
#include <cstdlib>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace psafe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Minimum interior margin of u over all cones (>0 means strictly interior).
double cone_margin(const VecX& u, const ConeDims& d) {
    double m = kInf;
    for (int i = 0; i < d.nonneg; ++i) m = std::min(m, u[i]);
    int off = d.nonneg;
    for (int sz : d.soc) {
        m = std::min(m, u[off] - u.segment(off + 1, sz - 1).norm());
        off += sz;
    }
    return m;
}

// Identity element of the cone algebra.
VecX cone_e(const ConeDims& d) {
    VecX e = VecX::Zero(d.total());
    e.head(d.nonneg).setOnes();
    int off = d.nonneg;
    for (int sz : d.soc) {
        e[off] = 1.0;
        off += sz;
    }
    return e;
}

// Jordan product u o v.
VecX cone_product(const VecX& u, const VecX& v, const ConeDims& d) {
    VecX r(d.total());
    r.head(d.nonneg) = u.head(d.nonneg).cwiseProduct(v.head(d.nonneg));
    int off = d.nonneg;
    for (int sz : d.soc) {
        auto u1 = u.segment(off + 1, sz - 1);
        auto v1 = v.segment(off + 1, sz - 1);
        r[off] = u.segment(off, sz).dot(v.segment(off, sz));
        r.segment(off + 1, sz - 1) = u[off] * v1 + v[off] * u1;
        off += sz;
    }
    return r;
}

// Solve lam o x = dvec for x.
VecX cone_div(const VecX& lam, const VecX& dvec, const ConeDims& d) {
    VecX x(d.total());
    x.head(d.nonneg) = dvec.head(d.nonneg).cwiseQuotient(lam.head(d.nonneg));
    int off = d.nonneg;
    for (int sz : d.soc) {
        double l0 = lam[off];
        auto l1 = lam.segment(off + 1, sz - 1);
        double det = l0 * l0 - l1.squaredNorm();
        double x0 = (l0 * dvec[off] - l1.dot(dvec.segment(off + 1, sz - 1))) / det;
        x[off] = x0;
        x.segment(off + 1, sz - 1) = (dvec.segment(off + 1, sz - 1) - x0 * l1) / l0;
        off += sz;
    }
    return x;
}

// Largest t such that u + a*du stays in the cone for all a in [0, t].
double max_step(const VecX& u, const VecX& du, const ConeDims& d) {
    double t = kInf;
    for (int i = 0; i < d.nonneg; ++i)
        if (du[i] < 0.0) t = std::min(t, -u[i] / du[i]);
    int off = d.nonneg;
    for (int sz : d.soc) {
        double u0 = u[off], v0 = du[off];
        auto u1 = u.segment(off + 1, sz - 1);
        auto v1 = du.segment(off + 1, sz - 1);
        // f(a) = (u0 + a v0)^2 - |u1 + a v1|^2 = c + 2 b a + a_ a^2
        double a_ = v0 * v0 - v1.squaredNorm();
        double b = u0 * v0 - u1.dot(v1);
        double c = u0 * u0 - u1.squaredNorm();
        double bound = kInf;
        if (std::abs(a_) < 1e-14 * std::max(1.0, std::abs(b))) {
            if (b < 0.0) bound = -c / (2.0 * b);
        } else {
            double disc = b * b - a_ * c;
            if (disc >= 0.0) {
                double sq = std::sqrt(disc);
                double r1 = (-b - sq) / a_;
                double r2 = (-b + sq) / a_;
                if (r1 > r2) std::swap(r1, r2);
                if (r1 > 0.0)
                    bound = r1;
                else if (r2 > 0.0)
                    bound = r2;
            }
        }
        t = std::min(t, bound);
        off += sz;
    }
    return t;
}

// Nesterov-Todd scaling W with W z = W^{-1} s = lambda.
struct Scaling {
    VecX w_lp;  // sqrt(s_i / z_i)
    struct SocBlock {
        double eta;
        VecX wbar;  // unit-hyperbolic scaling point
    };
    std::vector<SocBlock> socs;
    VecX lambda;
};

Scaling compute_scaling(const VecX& s, const VecX& z, const ConeDims& d) {
    Scaling sc;
    if ((s.head(d.nonneg).array() <= 0.0).any() ||
        (z.head(d.nonneg).array() <= 0.0).any())
        throw socp_error("iterate left the cone interior");
    sc.w_lp = (s.head(d.nonneg).cwiseQuotient(z.head(d.nonneg))).cwiseSqrt();
    int off = d.nonneg;
    for (int sz : d.soc) {
        auto sb = s.segment(off, sz);
        auto zb = z.segment(off, sz);
        double sres = sb[0] * sb[0] - sb.tail(sz - 1).squaredNorm();
        double zres = zb[0] * zb[0] - zb.tail(sz - 1).squaredNorm();
        if (sres <= 0.0 || zres <= 0.0)
            throw socp_error("iterate left the cone interior");
        double snorm = std::sqrt(sres), znorm = std::sqrt(zres);
        VecX sbar = sb / snorm, zbar = zb / znorm;
        double gamma = std::sqrt((1.0 + sbar.dot(zbar)) / 2.0);
        VecX wbar(sz);
        wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
        wbar.tail(sz - 1) =
            (sbar.tail(sz - 1) - zbar.tail(sz - 1)) / (2.0 * gamma);
        double eta = std::sqrt(snorm / znorm);
        sc.socs.push_back({eta, wbar});
        off += sz;
    }
    return sc;
}

// y = W u (identity scaling when sc is null).
VecX apply_W(const Scaling& sc, const ConeDims& d, const VecX& u) {
    VecX y(d.total());
    y.head(d.nonneg) = sc.w_lp.cwiseProduct(u.head(d.nonneg));
    int off = d.nonneg;
    for (size_t k = 0; k < d.soc.size(); ++k) {
        int sz = d.soc[k];
        const auto& blk = sc.socs[k];
        const VecX& w = blk.wbar;
        double u0 = u[off];
        auto u1 = u.segment(off + 1, sz - 1);
        double w1u1 = w.tail(sz - 1).dot(u1);
        y[off] = blk.eta * (w[0] * u0 + w1u1);
        y.segment(off + 1, sz - 1) =
            blk.eta * (u1 + (u0 + w1u1 / (1.0 + w[0])) * w.tail(sz - 1));
        off += sz;
    }
    return y;
}

// y = W^{-1} u.
VecX apply_Winv(const Scaling& sc, const ConeDims& d, const VecX& u) {
    VecX y(d.total());
    y.head(d.nonneg) = u.head(d.nonneg).cwiseQuotient(sc.w_lp);
    int off = d.nonneg;
    for (size_t k = 0; k < d.soc.size(); ++k) {
        int sz = d.soc[k];
        const auto& blk = sc.socs[k];
        const VecX& w = blk.wbar;
        double u0 = u[off];
        auto u1 = u.segment(off + 1, sz - 1);
        double w1u1 = w.tail(sz - 1).dot(u1);
        y[off] = (w[0] * u0 - w1u1) / blk.eta;
        y.segment(off + 1, sz - 1) =
            (u1 + (-u0 + w1u1 / (1.0 + w[0])) * w.tail(sz - 1)) / blk.eta;
        off += sz;
    }
    return y;
}

// M <- W^{-1} M applied row-block-wise (used to form G' W^{-2} G as a syrk).
void scale_rows_Winv(const Scaling& sc, const ConeDims& d, MatX& M) {
    for (int i = 0; i < d.nonneg; ++i) M.row(i) /= sc.w_lp[i];
    int off = d.nonneg;
    for (size_t k = 0; k < d.soc.size(); ++k) {
        int sz = d.soc[k];
        const auto& blk = sc.socs[k];
        const VecX& w = blk.wbar;
        Eigen::RowVectorXd r0 = M.row(off);
        Eigen::RowVectorXd w1B =
            w.tail(sz - 1).transpose() * M.middleRows(off + 1, sz - 1);
        M.middleRows(off + 1, sz - 1) +=
            w.tail(sz - 1) * (w1B / (1.0 + w[0]) - r0);
        M.middleRows(off + 1, sz - 1) /= blk.eta;
        M.row(off) = (w[0] * r0 - w1B) / blk.eta;
        off += sz;
    }
}

// Factorization of the reduced KKT system
//   [ G'W^{-2}G   A' ] [u]   [p + G'W^{-2} t]
//   [ A           0  ] [v] = [r]
// from which the full solve of
//   [0 A' G'; A 0 0; G 0 -W'W] (u, v, w) = (p, r, t)
// is recovered via w = W^{-2}(G u - t).
struct KktFactor {
    int nx, ny;
    MatX WiG;  // W^{-1} G
    MatX K;    // exact reduced system, kept for iterative refinement
    VecX d;    // symmetric equilibration scale
    Eigen::PartialPivLU<MatX> lu;  // factorization of the scaled regularized system

    VecX solve_reg(const VecX& rhs) const {
        return d.asDiagonal() * VecX(lu.solve(VecX(d.asDiagonal() * rhs)));
    }
};

// Static regularization keeps the factorization stable when the scaling
// polarizes near the solution; iterative refinement in solve_kkt removes the
// bias it introduces.
constexpr double KKT_REG = 1e-10;

KktFactor factor_kkt(const SocpProblem& prob, const Scaling& sc) {
    KktFactor f;
    f.nx = int(prob.q.size());
    f.ny = int(prob.b.size());
    f.WiG = prob.G;
    scale_rows_Winv(sc, prob.dims, f.WiG);
    MatX H = MatX::Zero(f.nx, f.nx);
    H.selfadjointView<Eigen::Lower>().rankUpdate(f.WiG.transpose());
    H.triangularView<Eigen::Upper>() = H.transpose();
    f.K = MatX::Zero(f.nx + f.ny, f.nx + f.ny);
    f.K.topLeftCorner(f.nx, f.nx) = H;
    if (f.ny > 0) {
        f.K.topRightCorner(f.nx, f.ny) = prob.A.transpose();
        f.K.bottomLeftCorner(f.ny, f.nx) = prob.A;
    }
    MatX Kreg = f.K;
    // per-diagonal regularization: H rows span many orders of magnitude once
    // the NT scaling polarizes, the equality block is unit-normalized
    Kreg.topLeftCorner(f.nx, f.nx).diagonal() +=
        KKT_REG * (VecX::Ones(f.nx) + H.diagonal().cwiseAbs());
    Kreg.bottomRightCorner(f.ny, f.ny).diagonal().array() -= KKT_REG;
    // Ruiz equilibration: the dynamic range of the scaled system would
    // otherwise exceed what partial-pivot LU can factor accurately
    const int nk = f.nx + f.ny;
    f.d = VecX::Ones(nk);
    for (int pass = 0; pass < 3; ++pass) {
        VecX r(nk);
        for (int i = 0; i < nk; ++i) {
            double m = Kreg.row(i).cwiseAbs().maxCoeff();
            r[i] = 1.0 / std::sqrt(std::max(m, 1e-12));
        }
        Kreg = r.asDiagonal() * Kreg * r.asDiagonal();
        f.d = f.d.cwiseProduct(r);
    }
    f.lu.compute(Kreg);
    return f;
}

void solve_kkt(const KktFactor& f, const SocpProblem& prob, const Scaling& sc,
               const VecX& p, const VecX& r, const VecX& t, VecX& u, VecX& v,
               VecX& w) {
    VecX Wit = apply_Winv(sc, prob.dims, t);
    VecX rhs(f.nx + f.ny);
    rhs.head(f.nx) = p + f.WiG.transpose() * Wit;
    if (f.ny > 0) rhs.tail(f.ny) = r;
    VecX sol = f.solve_reg(rhs);
    // safeguarded refinement against the exact (unregularized) system
    double res_norm = (rhs - f.K * sol).norm();
    for (int pass = 0; pass < 3 && res_norm > 1e-12 * (1.0 + rhs.norm()); ++pass) {
        VecX cand = sol + f.solve_reg(VecX(rhs - f.K * sol));
        double cand_norm = (rhs - f.K * cand).norm();
        if (cand_norm >= res_norm) break;
        sol = cand;
        res_norm = cand_norm;
    }
    if (std::getenv("PSAFE_KKT_TRACE"))
        std::fprintf(stderr, "  kkt res=%.3e rel=%.3e\n", res_norm,
                     res_norm / (1.0 + rhs.norm()));
    u = sol.head(f.nx);
    v = sol.tail(f.ny);
    w = apply_Winv(sc, prob.dims, VecX(f.WiG * u - Wit));
}

}  // namespace

SocpSolution solve_socp(const SocpProblem& prob, const SocpOptions& opt) {
    const int nx = int(prob.q.size());
    const int m = int(prob.h.size());
    const int ny = int(prob.b.size());
    const ConeDims& dims = prob.dims;
    if (dims.total() != m) throw socp_error("cone dims do not match h");
    if (prob.G.rows() != m || prob.G.cols() != nx)
        throw socp_error("G shape mismatch");
    if (ny > 0 && (prob.A.rows() != ny || prob.A.cols() != nx))
        throw socp_error("A shape mismatch");
    for (int sz : dims.soc)
        if (sz < 2) throw socp_error("second-order cone needs size >= 2");

    const VecX e = cone_e(dims);
    const double mbar = double(dims.degree());

    // Initial point: least-squares primal/dual solves with identity scaling,
    // shifted into the cone interior if needed.
    Scaling id;
    id.w_lp = VecX::Ones(dims.nonneg);
    id.lambda = VecX();
    for (int sz : dims.soc) {
        Scaling::SocBlock blk;
        blk.eta = 1.0;
        blk.wbar = VecX::Zero(sz);
        blk.wbar[0] = 1.0;
        id.socs.push_back(blk);
    }
    KktFactor f0 = factor_kkt(prob, id);
    VecX x, y, zhat, s, z, dummy;
    solve_kkt(f0, prob, id, VecX::Zero(nx), prob.b, prob.h, x, y, zhat);
    s = prob.h - prob.G * x;
    double mp = cone_margin(s, dims);
    if (mp < 0.0) s += (1.0 - mp) * e;
    else if (mp < 1e-8) s += e;
    solve_kkt(f0, prob, id, VecX(-prob.q), VecX::Zero(ny), VecX::Zero(m), dummy,
              y, z);
    double md = cone_margin(z, dims);
    if (md < 0.0) z += (1.0 - md) * e;
    else if (md < 1e-8) z += e;
    if (ny == 0) y.resize(0);
    const double znorm0 = z.norm();

    SocpSolution sol;
    const double bnorm = std::max(1.0, prob.b.size() ? prob.b.norm() : 0.0);
    const double hnorm = std::max(1.0, prob.h.norm());
    const double qnorm = std::max(1.0, prob.q.norm());

    VecX dx, dy, dz, ds;
    for (int it = 0; it < opt.max_iters; ++it) {
        VecX rx = prob.G.transpose() * z + prob.q;
        if (ny > 0) rx += prob.A.transpose() * y;
        VecX ry = ny > 0 ? VecX(prob.A * x - prob.b) : VecX();
        VecX rz = prob.G * x + s - prob.h;

        double gap = s.dot(z);
        double pcost = prob.q.dot(x);
        double dcost = -prob.h.dot(z) - (ny > 0 ? prob.b.dot(y) : 0.0);
        double pres = std::max(ny > 0 ? ry.norm() / bnorm : 0.0, rz.norm() / hnorm);
        double dres = rx.norm() / qnorm;
        double relgap = gap / std::max(1.0, std::abs(pcost));

        sol.x = x;
        sol.y = y;
        sol.z = z;
        sol.s = s;
        sol.cost = pcost;
        sol.iterations = it;
        sol.gap = gap;
        sol.primal_res = pres;
        sol.dual_res = dres;

        if (std::getenv("PSAFE_SOCP_TRACE")) {
            double cert_t = prob.h.dot(z) + (ny > 0 ? prob.b.dot(y) : 0.0);
            VecX cres = prob.G.transpose() * z;
            if (ny > 0) cres += prob.A.transpose() * y;
            std::fprintf(stderr,
                         "it=%d pcost=%.6e gap=%.3e pres=%.3e dres=%.3e ry=%.3e rz=%.3e |z|=%.3e cert=%.3e cres/|z|=%.3e\n",
                         it, pcost, gap, pres, dres, ny > 0 ? ry.norm() : 0.0,
                         rz.norm(), z.norm(), cert_t, cres.norm() / std::max(1.0, z.norm()));
        }
        if (pres <= opt.feastol && dres <= opt.feastol &&
            (gap <= opt.tol || relgap <= opt.tol)) {
            sol.status = SocpStatus::optimal;
            return sol;
        }
        // Primal infeasibility certificate: A'y + G'z ~ 0 with h'z + b'y < 0.
        double cert = prob.h.dot(z) + (ny > 0 ? prob.b.dot(y) : 0.0);
        if (cert < -1e-10) {
            VecX res = prob.G.transpose() * z;
            if (ny > 0) res += prob.A.transpose() * y;
            double ratio = res.norm() / (-cert);
            bool ray_in_cone = cone_margin(z, dims) >= -1e-9 * z.norm();
            // Exact certificate, or a dual iterate diverging along an
            // approximate ray: the latter is how infeasibility manifests in a
            // non-homogeneous method, and waiting for the residual ratio to
            // reach feastol only drives the iterate out of the cone.
            bool diverged = z.norm() > 1e5 * (1.0 + znorm0) && ratio <= 1e-2;
            if (ray_in_cone && (ratio <= opt.feastol || diverged)) {
                sol.status = SocpStatus::infeasible;
                return sol;
            }
        }

        double mu = gap / mbar;
        // Numerical breakdown (an iterate drifting onto the cone boundary)
        // ends the solve with the best iterate seen rather than propagating.
        Scaling sc;
        try {
            sc = compute_scaling(s, z, dims);
        } catch (const socp_error&) {
            sol.status = SocpStatus::iteration_limit;
            return sol;
        }
        sc.lambda = apply_W(sc, dims, z);
        KktFactor f = factor_kkt(prob, sc);

        // Affine (predictor) direction: d = lambda o lambda, lambda \ d = lambda.
        VecX bz = sc.lambda;
        solve_kkt(f, prob, sc, VecX(-rx), ny > 0 ? VecX(-ry) : VecX(),
                  VecX(-rz + apply_W(sc, dims, bz)), dx, dy, dz);
        ds = -rz - prob.G * dx;

        double a_aff = std::min(
            {1.0, max_step(s, ds, dims), max_step(z, dz, dims)});
        double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / mbar;
        double sigma = std::pow(std::max(0.0, std::min(1.0, mu_aff / mu)), 3);

        // Combined (corrector) direction.
        VecX corr = cone_product(apply_Winv(sc, dims, ds),
                                 apply_W(sc, dims, dz), dims);
        VecX dvec = cone_product(sc.lambda, sc.lambda, dims) + corr -
                    sigma * mu * e;
        bz = cone_div(sc.lambda, dvec, dims);
        solve_kkt(f, prob, sc, VecX(-rx), ny > 0 ? VecX(-ry) : VecX(),
                  VecX(-rz + apply_W(sc, dims, bz)), dx, dy, dz);
        ds = -rz - prob.G * dx;

        double alpha = opt.step_frac *
                       std::min({1.0 / opt.step_frac, max_step(s, ds, dims),
                                 max_step(z, dz, dims)});
        alpha = std::min(alpha, 1.0);
        if (std::getenv("PSAFE_SOCP_TRACE")) {
            double lmin = kInf;
            {
                for (int i = 0; i < dims.nonneg; ++i)
                    lmin = std::min(lmin, sc.lambda[i] * sc.lambda[i]);
                int off = dims.nonneg;
                for (int szb : dims.soc) {
                    double l0 = sc.lambda[off];
                    lmin = std::min(lmin, l0 * l0 - sc.lambda.segment(off + 1, szb - 1).squaredNorm());
                    off += szb;
                }
            }
            std::fprintf(stderr,
                         "   a_aff=%.3e sigma=%.3e alpha=%.3e |dx|=%.3e |dz|=%.3e |ds|=%.3e detmin=%.3e\n",
                         a_aff, sigma, alpha, dx.norm(), dz.norm(), ds.norm(), lmin);
        }
        if (alpha < 1e-10) {
            sol.status = SocpStatus::iteration_limit;
            return sol;
        }
        x += alpha * dx;
        if (ny > 0) y += alpha * dy;
        z += alpha * dz;
        s += alpha * ds;
        sol.iterations = it + 1;
    }
    sol.status = SocpStatus::iteration_limit;
    return sol;
}

}  // namespace psafe
