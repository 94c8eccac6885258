/// @file model.hpp Joint diffusion model, hidden/observed partition, prior,
/// observation interpolant and the local action density psi.
///
/// The joint process z = [x; y] solves dz = sigma(t, z) dW + mu(t, z) dt with
/// x the first `hidden` coordinates. Along a hidden path with derivative p and
/// an interpolated observation y(t), the action density is
///
///     psi(t, x, p) = 1/2 | sigma^{-1} ([p; y'(t)] - mu(t, [x; y(t)])) |^2.
///
/// psi is quadratic in p, so everything that only differentiates in p is exact
/// here; derivatives in x and t either use analytic drift derivatives supplied
/// by the model (constant-sigma models) or central finite differences.

#pragma once

#include "spline.hpp"
#include "types.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace lap {

struct Coefficients {
    Mat sigma;
    Vec mu;
};

class DiffusionModel {
public:
    using SigmaFn = std::function<Mat(double, const Vec&)>;
    using DriftFn = std::function<Vec(double, const Vec&)>;
    /// d x d Jacobian of mu in z.
    using JacobianFn = std::function<Mat(double, const Vec&)>;
    /// sum_k w_k * Hessian(mu_k) in z, a d x d matrix.
    using CurvatureFn = std::function<Mat(double, const Vec&, const Vec&)>;

    DiffusionModel() = default;

    DiffusionModel(int dim, SigmaFn sigma, DriftFn mu, double coefficient_cap = 1e8)
        : dim_(dim), sigma_(std::move(sigma)), mu_(std::move(mu)), cap_(coefficient_cap) {
        if (dim < 1 || dim > kMaxDim) throw Error("DiffusionModel: dimension out of range");
        if (!(coefficient_cap > 0)) throw Error("DiffusionModel: coefficient cap must be positive");
    }

    int dim() const { return dim_; }
    double coefficient_cap() const { return cap_; }
    bool constant_sigma() const { return static_cast<bool>(constant_sigma_value_); }
    bool autonomous() const { return autonomous_; }
    bool has_analytic_derivatives() const {
        return constant_sigma() && static_cast<bool>(jacobian_) && static_cast<bool>(curvature_);
    }

    /// Declares sigma independent of (t, z); the precision is computed once.
    /// A singular constant sigma is accepted here (simulation needs no
    /// precision) and only fails once the precision is requested.
    DiffusionModel& set_constant_sigma() {
        const Mat s = sigma(0.0, Vec::Zero(dim_));
        try {
            constant_precision_ = std::make_shared<const Mat>(precision_from(s, 0.0, Vec::Zero(dim_)));
        } catch (const EvaluationError&) {
            constant_precision_.reset();
        }
        constant_sigma_value_ = std::make_shared<const Mat>(s);
        return *this;
    }

    DiffusionModel& set_autonomous(bool value = true) {
        autonomous_ = value;
        return *this;
    }

    DiffusionModel& set_drift_derivatives(JacobianFn jacobian, CurvatureFn curvature) {
        jacobian_ = std::move(jacobian);
        curvature_ = std::move(curvature);
        return *this;
    }

    Mat sigma(double t, const Vec& z) const {
        if (constant_sigma_value_) return *constant_sigma_value_;
        Mat s = sigma_(t, z);
        if (s.rows() != dim_ || s.cols() != dim_) throw EvaluationError("sigma has wrong shape", t, z);
        if (!s.allFinite()) throw EvaluationError("sigma is not finite", t, z);
        if (s.norm() > cap_) throw EvaluationError("sigma exceeds coefficient cap", t, z);
        return s;
    }

    Vec mu(double t, const Vec& z) const {
        Vec m = mu_(t, z);
        if (m.size() != dim_) throw EvaluationError("mu has wrong size", t, z);
        if (!m.allFinite()) throw EvaluationError("mu is not finite", t, z);
        if (m.norm() > cap_) throw EvaluationError("mu exceeds coefficient cap", t, z);
        return m;
    }

    Coefficients eval(double t, const Vec& z) const { return {sigma(t, z), mu(t, z)}; }

    /// (sigma sigma^T)^{-1}, failing loudly when sigma is ill-conditioned.
    Mat precision(double t, const Vec& z) const {
        if (constant_precision_) return *constant_precision_;
        return precision_from(sigma(t, z), t, z);  // throws for a singular constant sigma
    }

    Mat drift_jacobian(double t, const Vec& z) const {
        if (jacobian_) return jacobian_(t, z);
        Mat j(dim_, dim_);
        for (int k = 0; k < dim_; ++k) {
            const double d = std::cbrt(kEps) * std::max(1.0, std::abs(z[k]));
            Vec zp = z, zm = z;
            zp[k] += d;
            zm[k] -= d;
            j.col(k) = (mu(t, zp) - mu(t, zm)) / (zp[k] - zm[k]);
        }
        return j;
    }

    Mat drift_curvature(double t, const Vec& z, const Vec& w) const {
        if (curvature_) return curvature_(t, z, w);
        Mat c(dim_, dim_);
        auto f = [&](const Vec& zz) { return w.dot(mu(t, zz)); };
        for (int i = 0; i < dim_; ++i) {
            const double di = std::pow(kEps, 0.25) * std::max(1.0, std::abs(z[i]));
            for (int k = i; k < dim_; ++k) {
                const double dk = std::pow(kEps, 0.25) * std::max(1.0, std::abs(z[k]));
                Vec a = z, b = z, cc = z, e = z;
                a[i] += di; a[k] += dk;
                b[i] += di; b[k] -= dk;
                cc[i] -= di; cc[k] += dk;
                e[i] -= di; e[k] -= dk;
                c(i, k) = c(k, i) = (f(a) - f(b) - f(cc) + f(e)) / (4 * di * dk);
            }
        }
        return c;
    }

    /// Explicit time derivative of mu, zero for autonomous models.
    Vec drift_time_derivative(double t, const Vec& z) const {
        if (autonomous_) return Vec::Zero(dim_);
        const double d = std::cbrt(kEps) * std::max(1.0, std::abs(t));
        return (mu(t + d, z) - mu(t - d, z)) / (2 * d);
    }

private:
    Mat precision_from(const Mat& s, double t, const Vec& z) const {
        if (s.rows() != dim_ || s.cols() != dim_) throw EvaluationError("sigma has wrong shape", t, z);
        if (!s.allFinite()) throw EvaluationError("sigma is not finite", t, z);
        Eigen::PartialPivLU<Mat> lu(s);
        if (!(lu.rcond() > kEps)) throw EvaluationError("sigma is singular or ill-conditioned", t, z);
        const Mat inv = lu.inverse();
        return detail::symmetrize(inv.transpose() * inv);
    }

    int dim_ = 1;
    SigmaFn sigma_;
    DriftFn mu_;
    double cap_ = 1e8;
    bool autonomous_ = false;
    std::shared_ptr<const Mat> constant_precision_;
    std::shared_ptr<const Mat> constant_sigma_value_;
    JacobianFn jacobian_;
    CurvatureFn curvature_;
};

/// Joint model with z = [x; y], x the first `hidden` coordinates.
struct PartitionedModel {
    DiffusionModel base;
    int hidden = 1;
    int observed = 0;
    /// Optional observation-consistent guess x(t) from y(t), used to seed solvers.
    std::function<Vec(double, const Vec&)> hidden_guess;

    PartitionedModel() = default;
    PartitionedModel(DiffusionModel model, int hidden_dim,
                     std::function<Vec(double, const Vec&)> guess = {})
        : base(std::move(model)), hidden(hidden_dim), observed(base.dim() - hidden_dim),
          hidden_guess(std::move(guess)) {
        if (hidden_dim < 1 || observed < 0)
            throw Error("PartitionedModel: hidden dimension must lie in [1, d]");
    }

    int dim() const { return base.dim(); }

    Vec join(const Vec& x, const Vec& y) const {
        Vec z(dim());
        z.head(hidden) = x;
        if (observed) z.tail(observed) = y;
        return z;
    }
};

struct GaussianPrior {
    Vec mean;
    Mat covariance;
};

/// Negative log prior density phi of x_0 with its gradient and Hessian.
struct Prior {
    std::function<double(const Vec&)> phi;
    std::function<Vec(const Vec&)> grad;
    std::function<Mat(const Vec&)> hess;
    std::optional<GaussianPrior> gaussian;

    /// phi(x) = |x - mean|^2 / (2 variance).
    static Prior isotropic_gaussian(const Vec& mean, double variance) {
        if (!(variance > 0)) throw Error("Prior: variance must be positive");
        Mat cov = Mat::Identity(mean.size(), mean.size()) * variance;
        return gaussian_prior(mean, cov);
    }

    static Prior gaussian_prior(const Vec& mean, const Mat& covariance) {
        Eigen::LLT<Mat> llt(covariance);
        if (llt.info() != Eigen::Success) throw Error("Prior: covariance must be positive definite");
        const Mat prec = detail::symmetrize(llt.solve(Mat::Identity(mean.size(), mean.size())));
        Prior p;
        p.phi = [mean, prec](const Vec& x) { return 0.5 * (x - mean).dot(prec * (x - mean)); };
        p.grad = [mean, prec](const Vec& x) -> Vec { return prec * (x - mean); };
        p.hess = [prec](const Vec&) -> Mat { return prec; };
        p.gaussian = GaussianPrior{mean, covariance};
        return p;
    }

    /// phi == 0. Not coercive; useful for degenerate test problems.
    static Prior flat(int n) {
        Prior p;
        p.phi = [](const Vec&) { return 0.0; };
        p.grad = [n](const Vec&) -> Vec { return Vec::Zero(n); };
        p.hess = [n](const Vec&) -> Mat { return Mat::Zero(n, n); };
        return p;
    }

    /// Scalar prior on a positive intensity: phi(x) = (log x - m)^2 / (2 v) + log x.
    static Prior lognormal_intensity(double m, double v) {
        if (!(v > 0)) throw Error("Prior: variance must be positive");
        Prior p;
        p.phi = [m, v](const Vec& x) {
            if (!(x[0] > 0)) return std::numeric_limits<double>::infinity();
            const double l = std::log(x[0]);
            return (l - m) * (l - m) / (2 * v) + l;
        };
        p.grad = [m, v](const Vec& x) -> Vec {
            Vec g(1);
            g[0] = ((std::log(x[0]) - m) / v + 1.0) / x[0];
            return g;
        };
        p.hess = [m, v](const Vec& x) -> Mat {
            Mat h(1, 1);
            const double l = std::log(x[0]);
            h(0, 0) = (1.0 / v - (l - m) / v - 1.0) / (x[0] * x[0]);
            return h;
        };
        return p;
    }

    /// phi(R e) > phi(0) along every signed coordinate ray with R = 1e3 * scale.
    bool coercive_on_rays(int n, double scale = 1.0) const {
        const Vec origin = Vec::Zero(n);
        const double base = phi(origin);
        for (int i = 0; i < n; ++i)
            for (double sgn : {-1.0, 1.0}) {
                Vec e = Vec::Zero(n);
                e[i] = sgn * 1e3 * scale;
                if (!(phi(e) > base)) return false;
            }
        return true;
    }
};

/// Discretely sampled observed path with its C2 natural-spline interpolant.
class ObservationSeries {
public:
    ObservationSeries() = default;

    ObservationSeries(const TimeGrid& grid, std::vector<Vec> samples)
        : grid_(grid), samples_(std::move(samples)), spline_(std::make_shared<NaturalCubicSpline>(grid_, samples_)) {}

    /// No observed coordinates: y(t) is the empty vector.
    static ObservationSeries none(const TimeGrid& grid) {
        return ObservationSeries(grid, std::vector<Vec>(grid.nodes(), Vec(0)));
    }

    /// Observed block of a joint path sampled on `grid`.
    static ObservationSeries from_joint(const TimeGrid& grid, const std::vector<Vec>& z, int hidden) {
        std::vector<Vec> ys;
        ys.reserve(z.size());
        for (const auto& zz : z) ys.push_back(zz.tail(zz.size() - hidden));
        return ObservationSeries(grid, std::move(ys));
    }

    const TimeGrid& grid() const { return grid_; }
    const std::vector<Vec>& samples() const { return samples_; }
    int dim() const { return spline_ ? spline_->dim() : 0; }

    SplinePoint at(double t) const { return (*spline_)(t); }

    /// Samples of this interpolant at the nodes of another grid over the same horizon.
    ObservationSeries resample(const TimeGrid& grid) const {
        if (grid.horizon() != grid_.horizon()) throw Error("resample: horizon mismatch");
        std::vector<Vec> ys;
        ys.reserve(grid.nodes());
        const std::size_t ratio_up = grid.level() >= grid_.level()
                                         ? std::size_t{1} << (grid.level() - grid_.level())
                                         : 0;
        for (std::size_t j = 0; j < grid.nodes(); ++j) {
            if (ratio_up && j % ratio_up == 0) {
                ys.push_back(samples_[j / ratio_up]);
            } else if (!ratio_up) {
                ys.push_back(samples_[j << (grid_.level() - grid.level())]);
            } else {
                ys.push_back(at(grid.time(j)).value);
            }
        }
        return ObservationSeries(grid, std::move(ys));
    }

    /// Pooled standard deviation of all observed coordinates (1 when unobserved).
    double pooled_std() const {
        if (dim() == 0) return 1.0;
        double s = 0, s2 = 0;
        std::size_t n = 0;
        for (const auto& y : samples_)
            for (int i = 0; i < y.size(); ++i) {
                s += y[i];
                s2 += y[i] * y[i];
                ++n;
            }
        const double mean = s / n;
        return std::sqrt(std::max(s2 / n - mean * mean, 0.0));
    }

private:
    TimeGrid grid_;
    std::vector<Vec> samples_;
    std::shared_ptr<const NaturalCubicSpline> spline_;
};

struct PsiDerivatives {
    Vec grad_x;
    Vec grad_p;
    Mat A;  ///< D_x D_x psi
    Mat B;  ///< B(i, j) = D_{x_i} D_{p_j} psi
    Mat q;  ///< D_p D_p psi
    Vec dt_grad_p;  ///< total time derivative of D_p psi at fixed (x, p)
};

namespace detail {

/// Observation-dependent pieces of psi at a fixed time.
struct ObsPoint {
    Vec y, dy, ddy;
};

inline ObsPoint obs_point(const ObservationSeries& obs, double t) {
    auto s = obs.at(t);
    return {std::move(s.value), std::move(s.slope), std::move(s.curvature)};
}

inline Vec residual(const PartitionedModel& m, double t, const Vec& x, const Vec& p, const Vec& y,
                    const Vec& dy, Vec* z_out = nullptr) {
    const Vec z = m.join(x, y);
    Vec w(m.dim());
    w.head(m.hidden) = p;
    if (m.observed) w.tail(m.observed) = dy;
    if (z_out) *z_out = z;
    return w - m.base.mu(t, z);
}

inline double psi_at(const PartitionedModel& m, double t, const Vec& x, const Vec& p, const ObsPoint& o) {
    Vec z;
    const Vec r = residual(m, t, x, p, o.y, o.dy, &z);
    return 0.5 * r.dot(m.base.precision(t, z) * r);
}

inline Vec grad_p_at(const PartitionedModel& m, double t, const Vec& x, const Vec& p, const Vec& y,
                     const Vec& dy) {
    Vec z;
    const Vec r = residual(m, t, x, p, y, dy, &z);
    return (m.base.precision(t, z) * r).head(m.hidden);
}

inline void require_pd(const Mat& q, double t, const Vec& z) {
    Eigen::LLT<Mat> llt(q);
    if (llt.info() != Eigen::Success) throw EvaluationError("q is not positive definite", t, z);
}

inline double fd_step1(double v) { return std::cbrt(kEps) * std::max(1.0, std::abs(v)); }
inline double fd_step2(double v) { return std::pow(kEps, 0.25) * std::max(1.0, std::abs(v)); }

inline PsiDerivatives psi_derivatives_analytic(const PartitionedModel& m, double t, const Vec& x, const Vec& p,
                                               const ObsPoint& o, bool need_A = true) {
    const int n = m.hidden, s = m.observed;
    Vec z;
    const Vec r = residual(m, t, x, p, o.y, o.dy, &z);
    const Mat P = m.base.precision(t, z);
    const Mat J = m.base.drift_jacobian(t, z);
    const Vec Pr = P * r;
    const Mat Jx = J.leftCols(n);

    PsiDerivatives d;
    d.grad_p = Pr.head(n);
    d.q = symmetrize(P.topLeftCorner(n, n));
    d.grad_x = -Jx.transpose() * Pr;
    if (need_A) {
        const Mat curv = m.base.drift_curvature(t, z, Pr);
        d.A = symmetrize(Jx.transpose() * P * Jx - curv.topLeftCorner(n, n));
    }
    d.B = -(P * Jx).topRows(n).transpose();

    Vec rdot = -m.base.drift_time_derivative(t, z);
    if (s) {
        rdot -= J.rightCols(s) * o.dy;
        rdot.tail(s) += o.ddy;
    }
    d.dt_grad_p = (P * rdot).head(n);
    require_pd(d.q, t, z);
    return d;
}

inline PsiDerivatives psi_derivatives_fd(const PartitionedModel& m, double t, const Vec& x, const Vec& p,
                                         const ObsPoint& o, bool need_A = true) {
    const int n = m.hidden, s = m.observed;
    Vec z;
    const Vec r = residual(m, t, x, p, o.y, o.dy, &z);
    const Mat P = m.base.precision(t, z);

    PsiDerivatives d;
    d.grad_p = (P * r).head(n);
    d.q = symmetrize(P.topLeftCorner(n, n));
    require_pd(d.q, t, z);

    auto psi = [&](const Vec& xx) { return psi_at(m, t, xx, p, o); };
    const double f0 = psi(x);

    d.grad_x.resize(n);
    d.B.resize(n, n);
    for (int i = 0; i < n; ++i) {
        Vec xp = x, xm = x;
        const double h = fd_step1(x[i]);
        xp[i] += h;
        xm[i] -= h;
        const double width = xp[i] - xm[i];
        d.grad_x[i] = (psi(xp) - psi(xm)) / width;
        d.B.row(i) = ((grad_p_at(m, t, xp, p, o.y, o.dy) - grad_p_at(m, t, xm, p, o.y, o.dy)) / width).transpose();
    }

    if (need_A) d.A.resize(n, n);
    for (int i = 0; need_A && i < n; ++i) {
        const double hi = fd_step2(x[i]);
        Vec xp = x, xm = x;
        xp[i] += hi;
        xm[i] -= hi;
        d.A(i, i) = (psi(xp) - 2 * f0 + psi(xm)) / (hi * hi);
        for (int k = i + 1; k < n; ++k) {
            const double hk = fd_step2(x[k]);
            Vec a = x, b = x, c = x, e = x;
            a[i] += hi; a[k] += hk;
            b[i] += hi; b[k] -= hk;
            c[i] -= hi; c[k] += hk;
            e[i] -= hi; e[k] -= hk;
            d.A(i, k) = d.A(k, i) = (psi(a) - psi(b) - psi(c) + psi(e)) / (4 * hi * hk);
        }
    }

    // d/dt D_p psi = explicit t part + (d/dy D_p psi) y' + P_xy y''.
    d.dt_grad_p = Vec::Zero(n);
    if (!m.base.autonomous()) {
        const double h = fd_step1(t);
        d.dt_grad_p += (grad_p_at(m, t + h, x, p, o.y, o.dy) - grad_p_at(m, t - h, x, p, o.y, o.dy)) / (2 * h);
    }
    if (s) {
        for (int k = 0; k < s; ++k) {
            const double h = fd_step1(o.y[k]);
            Vec yp = o.y, ym = o.y;
            yp[k] += h;
            ym[k] -= h;
            d.dt_grad_p += (grad_p_at(m, t, x, p, yp, o.dy) - grad_p_at(m, t, x, p, ym, o.dy)) /
                           (yp[k] - ym[k]) * o.dy[k];
        }
        d.dt_grad_p += P.topRightCorner(n, s) * o.ddy;
    }
    return d;
}

/// `need_A = false` skips D_x D_x psi (left empty), which the
/// Euler-Lagrange right-hand side does not use.
inline PsiDerivatives psi_derivatives_at(const PartitionedModel& m, double t, const Vec& x, const Vec& p,
                                         const ObsPoint& o, bool need_A = true) {
    return m.base.has_analytic_derivatives() ? psi_derivatives_analytic(m, t, x, p, o, need_A)
                                             : psi_derivatives_fd(m, t, x, p, o, need_A);
}

} // namespace detail

/// psi(t, x, p) = 1/2 |sigma^{-1}([p; y'] - mu)|^2 with z = [x; y(t)].
inline double eval_psi(double t, const Vec& x, const Vec& p, const ObservationSeries& obs,
                       const PartitionedModel& model) {
    return detail::psi_at(model, t, x, p, detail::obs_point(obs, t));
}

inline PsiDerivatives psi_derivatives(double t, const Vec& x, const Vec& p, const ObservationSeries& obs,
                                      const PartitionedModel& model) {
    return detail::psi_derivatives_at(model, t, x, p, detail::obs_point(obs, t));
}

/// Same as psi_derivatives but always through central finite differences.
inline PsiDerivatives psi_derivatives_numeric(double t, const Vec& x, const Vec& p, const ObservationSeries& obs,
                                              const PartitionedModel& model) {
    return detail::psi_derivatives_fd(model, t, x, p, detail::obs_point(obs, t));
}

/// Derivatives of the drift and of the precision in the hidden coordinates.
struct HiddenSensitivity {
    Mat drift_x;                    ///< d x n block of the drift Jacobian
    std::vector<Mat> precision_x;   ///< empty when sigma is constant
};

inline HiddenSensitivity hidden_sensitivity(const PartitionedModel& m, double t, const Vec& z) {
    HiddenSensitivity s;
    s.drift_x = m.base.drift_jacobian(t, z).leftCols(m.hidden);
    if (!m.base.constant_sigma()) {
        for (int i = 0; i < m.hidden; ++i) {
            const double h = detail::fd_step1(z[i]);
            Vec zp = z, zm = z;
            zp[i] += h;
            zm[i] -= h;
            s.precision_x.push_back((m.base.precision(t, zp) - m.base.precision(t, zm)) / (zp[i] - zm[i]));
        }
    }
    return s;
}

} // namespace lap
