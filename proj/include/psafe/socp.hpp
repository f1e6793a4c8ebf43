#pragma once

#include <stdexcept>
#include <vector>

#include "psafe/orbit.hpp"

namespace psafe {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Cone composition for the inequality block: first `nonneg` rows are
// componentwise nonnegative, followed by second-order cones of the listed
// sizes (each size counts the scalar epigraph row plus the vector part).
struct ConeDims {
    int nonneg = 0;
    std::vector<int> soc;

    int total() const {
        int t = nonneg;
        for (int s : soc) t += s;
        return t;
    }
    // Barrier degree: one per nonneg row, one per second-order cone.
    int degree() const { return nonneg + int(soc.size()); }
};

enum class SocpStatus { optimal, infeasible, iteration_limit };

// min q'x  s.t.  A x = b,  G x + s = h,  s in K(dims).
// A/b may be empty (no equality constraints).
struct SocpProblem {
    VecX q;
    MatX G;
    VecX h;
    ConeDims dims;
    MatX A;
    VecX b;
};

struct SocpOptions {
    int max_iters = 100;
    double tol = 1e-8;      // absolute and relative duality gap
    double feastol = 1e-6;  // primal/dual residual tolerance
    double step_frac = 0.99;
};

struct SocpSolution {
    SocpStatus status = SocpStatus::iteration_limit;
    VecX x, y, z, s;
    double cost = 0.0;
    int iterations = 0;
    double gap = 0.0;
    double primal_res = 0.0;
    double dual_res = 0.0;
};

class socp_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

SocpSolution solve_socp(const SocpProblem& prob, const SocpOptions& opt = {});

}  // namespace psafe
