/// @file oracle.hpp Independent reference computations: the exact Kalman/RTS
/// smoother on the Euler-Maruyama chain of a linear model, a dense Hessian of
/// the discrete objective, and the expected number of uniform trials needed to
/// hit a ball.

#pragma once

#include "action.hpp"
#include "model.hpp"
#include "optimize.hpp"

#include <cmath>
#include <numbers>
#include <vector>

namespace lap {

struct LinearForm {
    Mat sigma;
    Mat A;
    Vec c;
};

/// Reads off dz = sigma dW + (A z + c) dt from a model, checking on probe
/// points that sigma is constant and mu is affine and time independent.
inline LinearForm certify_linear(const DiffusionModel& m, double horizon = 1.0) {
    const int d = m.dim();
    const Vec zero = Vec::Zero(d);
    LinearForm f;
    f.sigma = m.sigma(0.0, zero);
    f.c = m.mu(0.0, zero);
    f.A.resize(d, d);
    for (int k = 0; k < d; ++k) f.A.col(k) = m.mu(0.0, Vec::Unit(d, k)) - f.c;

    const Vec probes[] = {Vec::Constant(d, 1.7), Vec::LinSpaced(d, -3.0, 2.0), Vec::LinSpaced(d, 5.0, -11.0)};
    const double times[] = {0.0, 0.37 * horizon, horizon};
    for (const Vec& z : probes)
        for (double t : times) {
            const Vec mu = m.mu(t, z), lin = f.A * z + f.c;
            if ((mu - lin).cwiseAbs().maxCoeff() > 1e-9 * (1 + lin.cwiseAbs().maxCoeff()))
                throw Error("kalman_rts: drift is not affine and time independent");
            const Mat s = m.sigma(t, z);
            if ((s - f.sigma).cwiseAbs().maxCoeff() > 1e-12 * (1 + f.sigma.cwiseAbs().maxCoeff()))
                throw Error("kalman_rts: sigma is not constant");
        }
    return f;
}

struct SmootherResult {
    std::vector<Vec> mean;
    std::vector<Mat> cov;
};

/// Posterior of the hidden nodes given the observed nodes under the
/// Euler-Maruyama transition densities and a Gaussian prior on x_0.
inline SmootherResult kalman_rts(const PartitionedModel& model, const ObservationSeries& obs, const Prior& prior,
                                 const TimeGrid& grid) {
    if (!prior.gaussian) throw Error("kalman_rts: prior must be Gaussian");
    if (!(obs.grid() == grid)) throw Error("kalman_rts: observations are not sampled on the grid");
    const LinearForm lf = certify_linear(model.base, grid.horizon());
    const int n = model.hidden, s = model.observed;
    const double h = grid.step();
    const Mat S = lf.sigma * lf.sigma.transpose();
    const Mat Axx = lf.A.topLeftCorner(n, n);
    const Vec cx = lf.c.head(n);
    const auto& ys = obs.samples();
    const std::size_t N = grid.steps();

    Mat G = Mat::Zero(n, s), Ayx, Ayy, Axy, Syy_inv, R;
    Mat Q = h * S.topLeftCorner(n, n);
    Vec cy;
    if (s) {
        Ayx = lf.A.bottomLeftCorner(s, n);
        Ayy = lf.A.bottomRightCorner(s, s);
        Axy = lf.A.topRightCorner(n, s);
        cy = lf.c.tail(s);
        Eigen::LLT<Mat> llt(S.bottomRightCorner(s, s));
        if (llt.info() != Eigen::Success) throw Error("kalman_rts: observation noise is singular");
        Syy_inv = llt.solve(Mat::Identity(s, s));
        G = S.topRightCorner(n, s) * Syy_inv;
        Q = h * (S.topLeftCorner(n, n) - G * S.bottomLeftCorner(s, n));
        R = h * S.bottomRightCorner(s, s);
    }
    const Mat F = Mat::Identity(n, n) + h * Axx - (s ? Mat(G * (h * Ayx)) : Mat(Mat::Zero(n, n)));

    std::vector<Vec> m_upd(N + 1), m_pred(N + 1);
    std::vector<Mat> P_upd(N + 1), P_pred(N + 1);
    m_pred[0] = prior.gaussian->mean;
    P_pred[0] = prior.gaussian->covariance;
    for (std::size_t j = 0;; ++j) {
        Vec m = m_pred[j];
        Mat P = P_pred[j];
        if (j == N) {
            m_upd[j] = m;
            P_upd[j] = P;
            break;
        }
        Vec innov_free;  // observed increment minus its x-independent mean
        if (s) {
            innov_free = ys[j + 1] - ys[j] - h * (Ayy * ys[j] + cy);
            const Mat H = h * Ayx;
            const Mat Sk = detail::symmetrize(H * P * H.transpose() + R);
            const Mat Kg = P * H.transpose() * Sk.llt().solve(Mat::Identity(s, s));
            m = m + Kg * (innov_free - H * m);
            P = detail::symmetrize((Mat::Identity(n, n) - Kg * H) * P);
        }
        m_upd[j] = m;
        P_upd[j] = P;
        Vec cj = h * cx;
        if (s) cj += h * Axy * ys[j] + G * innov_free;
        m_pred[j + 1] = F * m + cj;
        P_pred[j + 1] = detail::symmetrize(F * P * F.transpose() + Q);
    }

    SmootherResult out;
    out.mean.resize(N + 1);
    out.cov.resize(N + 1);
    out.mean[N] = m_upd[N];
    out.cov[N] = P_upd[N];
    for (std::size_t j = N; j-- > 0;) {
        const Mat J = P_upd[j] * F.transpose() * P_pred[j + 1].ldlt().solve(Mat::Identity(n, n));
        out.mean[j] = m_upd[j] + J * (out.mean[j + 1] - m_pred[j + 1]);
        out.cov[j] = detail::symmetrize(P_upd[j] + J * (out.cov[j + 1] - P_pred[j + 1]) * J.transpose());
    }
    return out;
}

inline constexpr std::size_t kDenseHessianLimit = 2000;

/// Central-difference Hessian of -lambda_n built from its exact gradient.
inline DMat dense_hessian(const std::vector<Vec>& xpath, const ObservationSeries& obs, const PartitionedModel& model,
                          const Prior& prior, const TimeGrid& grid) {
    const int n = model.hidden;
    const std::size_t dim = static_cast<std::size_t>(n) * xpath.size();
    if (dim > kDenseHessianLimit) throw Error("dense_hessian: problem exceeds the size guard");
    DMat H(dim, dim);
    std::vector<Vec> xs = xpath;
    for (std::size_t j = 0; j < xs.size(); ++j)
        for (int i = 0; i < n; ++i) {
            const double orig = xs[j][i];
            const double d = std::cbrt(kEps) * std::max(1.0, std::abs(orig));
            xs[j][i] = orig + d;
            const DVec gp = detail::flatten(discrete_loglik_grad(xs, obs, model, prior, grid));
            xs[j][i] = orig - d;
            const DVec gm = detail::flatten(discrete_loglik_grad(xs, obs, model, prior, grid));
            xs[j][i] = orig;
            H.col(static_cast<Eigen::Index>(j * n + i)) = -(gp - gm) / (2 * d);
        }
    return 0.5 * (H + H.transpose());
}

/// Smallest eigenvalue of the dense Hessian of -lambda_n at xpath.
inline double dense_hessian_eigmin(const std::vector<Vec>& xpath, const ObservationSeries& obs,
                                   const PartitionedModel& model, const Prior& prior, const TimeGrid& grid) {
    const DMat H = dense_hessian(xpath, obs, model, prior, grid);
    Eigen::SelfAdjointEigenSolver<DMat> es(H, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error("dense_hessian_eigmin: eigen solver failed");
    return es.eigenvalues().minCoeff();
}

/// Expected number of uniform draws from the unit cube needed to land in a
/// ball of radius b: b^{-d} / V_d, V_d the volume of the unit d-ball.
inline double balls_mean_trials(double b, int d) {
    if (!(b > 0 && b <= 1)) throw Error("balls_mean_trials: radius must lie in (0, 1]");
    if (d < 1) throw Error("balls_mean_trials: dimension must be positive");
    const double log_vd = 0.5 * d * std::log(std::numbers::pi) - std::lgamma(1.0 + 0.5 * d);
    return std::exp(-d * std::log(b) - log_vd);
}

} // namespace lap
