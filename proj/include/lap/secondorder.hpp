/// @file secondorder.hpp Gaussian fluctuation law around a stationary path and
/// the conjugate-point diagnostic.
///
/// With A = D_xx psi, B = D_x D_p psi, q = D_pp psi along (x*, p*):
///   theta' = (B + theta) q^{-1} (B^T + theta) - A,   theta_T = 0,
///   K = q^{-1} (B^T + theta),
///   V' = -K V - V K^T + q^{-1},   V_0 = (D^2 phi(x*_0) + theta_0)^{-1}.
/// The Jacobi field F (F_T = I, B_T^T + q_T F'_T = 0) is integrated as the
/// first-order system in (F, Pi = q F' + B^T F):
///   F' = q^{-1} (Pi - B^T F),   Pi' = A F + B F',
/// which needs neither B' nor q'. Then theta = -Pi F^{-1}.

#pragma once

#include "model.hpp"
#include "random.hpp"
#include "variational.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace lap {

/// A, B, q at the nodes and at the interval midpoints t_j + h/2.
struct ABqPath {
    TimeGrid grid;
    std::vector<Mat> A, B, q;
    std::vector<Mat> A_half, B_half, q_half;

    int dim() const { return A.empty() ? 0 : static_cast<int>(A.front().rows()); }

    static ABqPath constant(const TimeGrid& grid, const Mat& A, const Mat& B, const Mat& q) {
        ABqPath out{grid, {}, {}, {}, {}, {}, {}};
        out.A.assign(grid.nodes(), A);
        out.B.assign(grid.nodes(), B);
        out.q.assign(grid.nodes(), q);
        out.A_half.assign(grid.steps(), A);
        out.B_half.assign(grid.steps(), B);
        out.q_half.assign(grid.steps(), q);
        return out;
    }
};

/// Second derivatives of psi along a solved path. Midpoint states use cubic
/// Hermite interpolation of (x, p) with slopes (p, dp).
inline ABqPath extract_ABq(const LeastActionPath& xstar, const ObservationSeries& obs,
                           const PartitionedModel& model) {
    const auto& path = xstar.path;
    const TimeGrid& g = path.grid;
    const double h = g.step();
    ABqPath out{g, {}, {}, {}, {}, {}, {}};
    auto put = [&](double t, const Vec& x, const Vec& p, std::vector<Mat>& A, std::vector<Mat>& B,
                   std::vector<Mat>& q, const std::string& where) {
        PsiDerivatives d;
        try {
            d = psi_derivatives(t, x, p, obs, model);
        } catch (const EvaluationError& e) {
            throw Error("extract_ABq: " + where + ": " + e.what());
        }
        A.push_back(d.A);
        B.push_back(d.B);
        q.push_back(d.q);
    };
    for (std::size_t j = 0; j < g.nodes(); ++j)
        put(g.time(j), path.x[j], path.p[j], out.A, out.B, out.q, "node " + std::to_string(j));
    const bool have_dp = xstar.dp.size() == g.nodes();
    for (std::size_t j = 0; j < g.steps(); ++j) {
        const std::string where = "midpoint of interval " + std::to_string(j);
        if (have_dp) {
            const Vec xm = detail::hermite(path.x[j], path.p[j], path.x[j + 1], path.p[j + 1], h, 0.5).first;
            const Vec pm = detail::hermite(path.p[j], xstar.dp[j], path.p[j + 1], xstar.dp[j + 1], h, 0.5).first;
            put(g.time(j) + h / 2, xm, pm, out.A_half, out.B_half, out.q_half, where);
        } else {
            put(g.time(j) + h / 2, 0.5 * (path.x[j] + path.x[j + 1]), 0.5 * (path.p[j] + path.p[j + 1]),
                out.A_half, out.B_half, out.q_half, where);
        }
    }
    return out;
}

namespace detail {

inline Mat spd_inverse(const Mat& q) {
    Eigen::LLT<Mat> llt(q);
    if (llt.info() != Eigen::Success) throw Error("matrix is not positive definite");
    return llt.solve(Mat::Identity(q.rows(), q.cols()));
}

inline Mat riccati_rhs(const Mat& theta, const Mat& A, const Mat& B, const Mat& qinv) {
    return (B + theta) * qinv * (B.transpose() + theta) - A;
}

} // namespace detail

struct RiccatiSolution {
    std::vector<Mat> theta;
    std::vector<Mat> theta_dot;  ///< right-hand side at each node
};

/// Backward RK4 from theta_T = 0, symmetrized after every step. Throws
/// BlowUpError("theta exploded") once |theta| exceeds 1e10.
inline RiccatiSolution solve_riccati(const ABqPath& c) {
    const TimeGrid& g = c.grid;
    const int n = c.dim();
    const double h = g.step();
    const std::size_t N = g.steps();
    RiccatiSolution out;
    out.theta.assign(g.nodes(), Mat::Zero(n, n));
    out.theta_dot.assign(g.nodes(), Mat::Zero(n, n));
    std::vector<Mat> qinv(g.nodes()), qinv_half(N);
    for (std::size_t j = 0; j < g.nodes(); ++j) qinv[j] = detail::spd_inverse(c.q[j]);
    for (std::size_t j = 0; j < N; ++j) qinv_half[j] = detail::spd_inverse(c.q_half[j]);

    Mat theta = Mat::Zero(n, n);
    out.theta_dot[N] = detail::riccati_rhs(theta, c.A[N], c.B[N], qinv[N]);
    for (std::size_t j = N; j-- > 0;) {
        // Step from t_{j+1} to t_j (negative step).
        const Mat k1 = out.theta_dot[j + 1];
        const Mat k2 = detail::riccati_rhs(theta - h / 2 * k1, c.A_half[j], c.B_half[j], qinv_half[j]);
        const Mat k3 = detail::riccati_rhs(theta - h / 2 * k2, c.A_half[j], c.B_half[j], qinv_half[j]);
        const Mat k4 = detail::riccati_rhs(theta - h * k3, c.A[j], c.B[j], qinv[j]);
        theta = detail::symmetrize(theta - h / 6 * (k1 + 2 * k2 + 2 * k3 + k4));
        if (!theta.allFinite() || theta.norm() > 1e10) throw BlowUpError("theta exploded", g.time(j));
        out.theta[j] = theta;
        out.theta_dot[j] = detail::riccati_rhs(theta, c.A[j], c.B[j], qinv[j]);
    }
    return out;
}

struct SecondOrderLaw {
    ABqPath coefficients;
    std::vector<Mat> theta;
    std::vector<Mat> K;
    std::vector<Mat> V;
    Mat init_precision;
    /// K at the interval midpoints, used by the V integrator and the sampler.
    std::vector<Mat> K_half;
};

namespace detail {

inline Mat lyapunov_rhs(const Mat& V, const Mat& K, const Mat& qinv) {
    return -K * V - V * K.transpose() + qinv;
}

} // namespace detail

/// Forward RK4 for V from V_0 = init_precision^{-1}; K at midpoints comes from
/// a cubic Hermite interpolant of theta.
inline std::vector<Mat> covariance_V(const RiccatiSolution& ric, const ABqPath& c, const Mat& init_precision,
                                     std::vector<Mat>* K_out = nullptr, std::vector<Mat>* K_half_out = nullptr) {
    const TimeGrid& g = c.grid;
    const double h = g.step();
    const std::size_t N = g.steps();
    std::vector<Mat> K(g.nodes()), K_half(N), qinv(g.nodes()), qinv_half(N);
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        qinv[j] = detail::spd_inverse(c.q[j]);
        K[j] = qinv[j] * (c.B[j].transpose() + ric.theta[j]);
    }
    for (std::size_t j = 0; j < N; ++j) {
        qinv_half[j] = detail::spd_inverse(c.q_half[j]);
        const Mat th = detail::hermite<Mat>(ric.theta[j], ric.theta_dot[j], ric.theta[j + 1], ric.theta_dot[j + 1],
                                            h, 0.5)
                           .first;
        K_half[j] = qinv_half[j] * (c.B_half[j].transpose() + detail::symmetrize(th));
    }
    Eigen::LLT<Mat> llt(detail::symmetrize(init_precision));
    if (llt.info() != Eigen::Success) throw Error("covariance_V: initial precision is not positive definite");
    Mat V = llt.solve(Mat::Identity(init_precision.rows(), init_precision.cols()));
    std::vector<Mat> out{detail::symmetrize(V)};
    out.reserve(g.nodes());
    for (std::size_t j = 0; j < N; ++j) {
        const Mat k1 = detail::lyapunov_rhs(V, K[j], qinv[j]);
        const Mat k2 = detail::lyapunov_rhs(V + h / 2 * k1, K_half[j], qinv_half[j]);
        const Mat k3 = detail::lyapunov_rhs(V + h / 2 * k2, K_half[j], qinv_half[j]);
        const Mat k4 = detail::lyapunov_rhs(V + h * k3, K[j + 1], qinv[j + 1]);
        V = detail::symmetrize(V + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4));
        out.push_back(V);
    }
    if (K_out) *K_out = std::move(K);
    if (K_half_out) *K_half_out = std::move(K_half);
    return out;
}

/// Full law along a solved path: coefficients, theta, K, V.
inline SecondOrderLaw second_order_law(const LeastActionPath& xstar, const ObservationSeries& obs,
                                       const PartitionedModel& model, const Prior& prior) {
    SecondOrderLaw law;
    law.coefficients = extract_ABq(xstar, obs, model);
    const RiccatiSolution ric = solve_riccati(law.coefficients);
    law.theta = ric.theta;
    law.init_precision = detail::symmetrize(prior.hess(xstar.path.x.front()) + ric.theta.front());
    law.V = covariance_V(ric, law.coefficients, law.init_precision, &law.K, &law.K_half);
    return law;
}

enum class Verdict { local_min, not_local_min, inconclusive };

inline const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::local_min: return "local_min";
    case Verdict::not_local_min: return "not_local_min";
    default: return "inconclusive";
    }
}

struct FDiagnostic {
    std::vector<Mat> F;
    std::vector<Mat> F_dot;
    /// det F_t; may overflow to +-inf on long unstable horizons, see log_abs_det.
    std::vector<double> detF;
    std::vector<double> log_abs_det;
    std::vector<int> det_sign;
    double min_abs_det = 0;
    /// min over t of |det F_t| / max_{s >= t} |det F_s|.
    double min_det_ratio = 0;
    bool sign_change = false;
    Verdict verdict = Verdict::inconclusive;
};

/// Relative size below which |det F| counts as vanished.
inline constexpr double kDetTolerance = 1e-8;

/// Backward RK4 for (F, Pi). Both are rescaled by a common factor whenever
/// they grow large; the scale is carried in log_abs_det.
inline FDiagnostic solve_F(const ABqPath& c) {
    const TimeGrid& g = c.grid;
    const int n = c.dim();
    const double h = g.step();
    const std::size_t N = g.steps();
    auto rhs = [&](const Mat& F, const Mat& Pi, const Mat& A, const Mat& B, const Mat& q, Mat& dF, Mat& dPi) {
        dF = detail::spd_inverse(q) * (Pi - B.transpose() * F);
        dPi = A * F + B * dF;
    };
    FDiagnostic out;
    out.F.resize(g.nodes());
    out.F_dot.resize(g.nodes());
    out.log_abs_det.resize(g.nodes());
    out.det_sign.resize(g.nodes());
    out.detF.resize(g.nodes());

    Mat F = Mat::Identity(n, n), Pi = Mat::Zero(n, n);
    double log_scale = 0;
    auto record = [&](std::size_t j) {
        Mat dF, dPi;
        rhs(F, Pi, c.A[j], c.B[j], c.q[j], dF, dPi);
        out.F[j] = F;
        out.F_dot[j] = dF;
        const Eigen::PartialPivLU<Mat> lu(F);
        const double d = lu.determinant();
        out.det_sign[j] = d > 0 ? 1 : (d < 0 ? -1 : 0);
        out.log_abs_det[j] = std::log(std::abs(d)) + n * log_scale;
        out.detF[j] = out.det_sign[j] * std::exp(out.log_abs_det[j]);
    };
    record(N);
    for (std::size_t j = N; j-- > 0;) {
        Mat a1, b1, a2, b2, a3, b3, a4, b4;
        rhs(F, Pi, c.A[j + 1], c.B[j + 1], c.q[j + 1], a1, b1);
        rhs(F - h / 2 * a1, Pi - h / 2 * b1, c.A_half[j], c.B_half[j], c.q_half[j], a2, b2);
        rhs(F - h / 2 * a2, Pi - h / 2 * b2, c.A_half[j], c.B_half[j], c.q_half[j], a3, b3);
        rhs(F - h * a3, Pi - h * b3, c.A[j], c.B[j], c.q[j], a4, b4);
        F -= h / 6 * (a1 + 2 * a2 + 2 * a3 + a4);
        Pi -= h / 6 * (b1 + 2 * b2 + 2 * b3 + b4);
        const double size = std::max(F.cwiseAbs().maxCoeff(), Pi.cwiseAbs().maxCoeff());
        if (size > 1e100) {
            F /= size;
            Pi /= size;
            log_scale += std::log(size);
        }
        record(j);
    }
    // After a rescale the stored F (and F') carry a positive factor; det
    // signs, log_abs_det and theta = -q F' F^{-1} - B^T are unaffected.
    out.min_abs_det = std::numeric_limits<double>::infinity();
    out.min_det_ratio = std::numeric_limits<double>::infinity();
    double running_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = g.nodes(); j-- > 0;) {
        running_max = std::max(running_max, out.log_abs_det[j]);
        out.min_abs_det = std::min(out.min_abs_det, std::abs(out.detF[j]));
        out.min_det_ratio = std::min(out.min_det_ratio, std::exp(out.log_abs_det[j] - running_max));
        if (j + 1 < g.nodes() && out.det_sign[j] != out.det_sign[j + 1]) out.sign_change = true;
    }
    if (out.sign_change) out.verdict = Verdict::not_local_min;
    else if (out.min_det_ratio > kDetTolerance) out.verdict = Verdict::local_min;
    else out.verdict = Verdict::inconclusive;
    return out;
}

/// theta reconstructed from the Jacobi field: theta = -q F' F^{-1} - B^T.
inline std::vector<Mat> theta_from_F(const FDiagnostic& f, const ABqPath& c) {
    std::vector<Mat> out;
    out.reserve(f.F.size());
    for (std::size_t j = 0; j < f.F.size(); ++j) {
        const Mat Finv = f.F[j].partialPivLu().inverse();
        out.push_back(-c.q[j] * f.F_dot[j] * Finv - c.B[j].transpose());
    }
    return out;
}

struct LocalMinReport {
    Verdict verdict = Verdict::inconclusive;
    FDiagnostic F;
    double min_abs_det = 0;
    double min_det_ratio = 0;
    std::optional<Mat> theta0;
    std::optional<Vec> init_precision_eigenvalues;
};

/// Conjugate-point test along x*. A sign change of det F means x* is not a
/// local minimizer. Otherwise, when the Riccati equation also solves, the
/// initial precision D^2 phi + theta_0 must not have a negative eigenvalue.
inline LocalMinReport check_local_min(const LeastActionPath& xstar, const ObservationSeries& obs,
                                      const PartitionedModel& model, const Prior& prior) {
    LocalMinReport rep;
    const ABqPath c = extract_ABq(xstar, obs, model);
    rep.F = solve_F(c);
    rep.verdict = rep.F.verdict;
    rep.min_abs_det = rep.F.min_abs_det;
    rep.min_det_ratio = rep.F.min_det_ratio;
    try {
        const RiccatiSolution ric = solve_riccati(c);
        rep.theta0 = ric.theta.front();
        const Mat P = detail::symmetrize(prior.hess(xstar.path.x.front()) + ric.theta.front());
        Eigen::SelfAdjointEigenSolver<Mat> es(P);
        rep.init_precision_eigenvalues = es.eigenvalues();
        // A zero eigenvalue is a flat direction (e.g. a flat prior), not a saddle.
        const double tol = 1e-10 * (1 + es.eigenvalues().cwiseAbs().maxCoeff());
        if (rep.verdict == Verdict::local_min && es.eigenvalues().minCoeff() < -tol)
            rep.verdict = Verdict::not_local_min;
    } catch (const Error&) {
    }
    return rep;
}

/// Second variation Q(xi) of the action on a discrete perturbation: the prior
/// term plus the trapezoid rule for 1/2 xi A xi + xi B xi' + 1/2 xi' q xi',
/// with xi' from forward differences paired with interval-averaged xi.
inline double second_variation(const std::vector<Vec>& xi, const ABqPath& c, const Mat& prior_hessian) {
    const double h = c.grid.step();
    double total = 0.5 * xi.front().dot(prior_hessian * xi.front());
    for (std::size_t j = 0; j + 1 < xi.size(); ++j) {
        const Vec m = 0.5 * (xi[j] + xi[j + 1]);
        const Vec d = (xi[j + 1] - xi[j]) / h;
        total += h * (0.5 * m.dot(c.A_half[j] * m) + m.dot(c.B_half[j] * d) + 0.5 * d.dot(c.q_half[j] * d));
    }
    return total;
}

/// One draw of xi: xi_0 ~ N(0, init_precision^{-1}), then Euler-Maruyama for
/// d xi = -K xi dt + q^{-1/2} dW. The returned p holds the drift -K xi.
inline HiddenPath sample_perturbation(const SecondOrderLaw& law, std::uint64_t seed) {
    const TimeGrid& g = law.coefficients.grid;
    const int n = law.coefficients.dim();
    const double h = g.step();
    Rng rng(seed, 0);
    const Mat V0 = detail::spd_inverse(detail::symmetrize(law.init_precision));
    const Mat root0 = detail::symmetric_apply(V0, [](double e) { return std::sqrt(e); });
    HiddenPath out{g, {}, {}};
    out.x.reserve(g.nodes());
    out.p.reserve(g.nodes());
    Vec xi = root0 * rng.normal_vec(n);
    for (std::size_t j = 0; j < g.steps(); ++j) {
        const Mat diffusion =
            detail::symmetric_apply(law.coefficients.q[j], [](double e) { return 1.0 / std::sqrt(e); });
        const Vec drift = -law.K[j] * xi;
        out.x.push_back(xi);
        out.p.push_back(drift);
        xi = xi + h * drift + std::sqrt(h) * (diffusion * rng.normal_vec(n));
    }
    out.x.push_back(xi);
    out.p.push_back(-law.K.back() * xi);
    return out;
}

} // namespace lap
