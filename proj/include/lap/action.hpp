/// @file action.hpp Discrete log-likelihood of the Euler-Maruyama chain, the
/// continuous action functional and a dense discrete minimizer used as an
/// oracle for the continuous solver.

#pragma once

#include "model.hpp"
#include "optimize.hpp"

#include <vector>

namespace lap {

namespace detail {

inline void check_discrete_inputs(const std::vector<Vec>& xpath, const ObservationSeries& obs,
                                  const PartitionedModel& model, const TimeGrid& grid) {
    if (!(obs.grid() == grid)) throw Error("discrete log-likelihood: observations are not sampled on the grid");
    if (xpath.size() != grid.nodes()) throw Error("discrete log-likelihood: path length does not match grid");
    if (obs.dim() != model.observed) throw Error("discrete log-likelihood: observation dimension mismatch");
    for (const auto& x : xpath)
        if (x.size() != model.hidden) throw Error("discrete log-likelihood: hidden dimension mismatch");
}

/// -lambda_n without the prior: 1/2 sum_j h |sigma^{-1}(dz/h - mu)|^2.
inline double discrete_quadratic(const std::vector<Vec>& xpath, const ObservationSeries& obs,
                                 const PartitionedModel& model, const TimeGrid& grid) {
    const double h = grid.step();
    const auto& ys = obs.samples();
    double sum = 0;
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        const double t = grid.time(j);
        const Vec z0 = model.join(xpath[j], ys[j]);
        const Vec z1 = model.join(xpath[j + 1], ys[j + 1]);
        const Vec r = (z1 - z0) / h - model.base.mu(t, z0);
        sum += 0.5 * h * r.dot(model.base.precision(t, z0) * r);
    }
    return sum;
}

} // namespace detail

/// lambda_n(x | y) = -1/2 sum_j h |sigma^{-1}((z_{j+1} - z_j)/h - mu(t_j, z_j))|^2 - phi(x_0).
inline double discrete_loglik(const std::vector<Vec>& xpath, const ObservationSeries& obs,
                              const PartitionedModel& model, const Prior& prior, const TimeGrid& grid) {
    detail::check_discrete_inputs(xpath, obs, model, grid);
    return -detail::discrete_quadratic(xpath, obs, model, grid) - prior.phi(xpath.front());
}

/// Exact gradient of discrete_loglik with respect to every hidden node.
inline std::vector<Vec> discrete_loglik_grad(const std::vector<Vec>& xpath, const ObservationSeries& obs,
                                             const PartitionedModel& model, const Prior& prior,
                                             const TimeGrid& grid) {
    detail::check_discrete_inputs(xpath, obs, model, grid);
    const int n = model.hidden;
    const double h = grid.step();
    const auto& ys = obs.samples();
    std::vector<Vec> g(grid.nodes(), Vec::Zero(n));
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        const double t = grid.time(j);
        const Vec z0 = model.join(xpath[j], ys[j]);
        const Vec z1 = model.join(xpath[j + 1], ys[j + 1]);
        const Vec r = (z1 - z0) / h - model.base.mu(t, z0);
        const Mat P = model.base.precision(t, z0);
        const Vec Pr = P * r;
        const HiddenSensitivity sens = hidden_sensitivity(model, t, z0);
        // Gradient of the positive quadratic term; negated below.
        g[j + 1] += Pr.head(n);
        g[j] -= Pr.head(n) + h * sens.drift_x.transpose() * Pr;
        for (int i = 0; i < static_cast<int>(sens.precision_x.size()); ++i)
            g[j][i] += 0.5 * h * r.dot(sens.precision_x[i] * r);
    }
    g.front() += prior.grad(xpath.front());
    for (auto& v : g) v = -v;
    return g;
}

/// -Lambda(x | y) = phi(x_0) + int_0^T psi(t, x_t, p_t) dt by the composite trapezoid rule.
inline double continuous_action(const HiddenPath& path, const ObservationSeries& obs, const PartitionedModel& model,
                                const Prior& prior) {
    if (path.x.size() != path.grid.nodes() || path.p.size() != path.x.size())
        throw Error("continuous_action: path does not match its grid");
    const double h = path.grid.step();
    double integral = 0;
    for (std::size_t j = 0; j < path.x.size(); ++j) {
        const double w = (j == 0 || j + 1 == path.x.size()) ? 0.5 : 1.0;
        integral += w * eval_psi(path.grid.time(j), path.x[j], path.p[j], obs, model);
    }
    return prior.phi(path.x.front()) + h * integral;
}

struct DiscreteMinimum {
    std::vector<Vec> xpath;
    double value = 0;  ///< attained -lambda_n
    double grad_sup = 0;
    int iterations = 0;
    bool converged = false;
};

namespace detail {

inline DVec flatten(const std::vector<Vec>& xs) {
    const int n = xs.empty() ? 0 : static_cast<int>(xs.front().size());
    DVec u(static_cast<Eigen::Index>(xs.size()) * n);
    for (std::size_t j = 0; j < xs.size(); ++j) u.segment(static_cast<Eigen::Index>(j) * n, n) = xs[j];
    return u;
}

inline std::vector<Vec> unflatten(const DVec& u, int n) {
    std::vector<Vec> xs(static_cast<std::size_t>(u.size() / n));
    for (std::size_t j = 0; j < xs.size(); ++j) xs[j] = u.segment(static_cast<Eigen::Index>(j) * n, n);
    return xs;
}

} // namespace detail

inline constexpr std::size_t kDenseDiscreteLimit = 5000;

/// Minimizes -lambda_n over all hidden nodes with a first-order quasi-Newton
/// method. Returns the best iterate flagged `converged = false` at the cap.
inline DiscreteMinimum minimize_discrete(const ObservationSeries& obs, const PartitionedModel& model,
                                         const Prior& prior, const TimeGrid& grid, const std::vector<Vec>& init,
                                         double grad_tol = 1e-8, int max_iter = 100000) {
    const int n = model.hidden;
    if (static_cast<std::size_t>(n) * grid.nodes() > kDenseDiscreteLimit)
        throw Error("minimize_discrete: problem exceeds the dense size guard");
    detail::check_discrete_inputs(init, obs, model, grid);
    Objective f = [&](const DVec& u, DVec& g) {
        const auto xs = detail::unflatten(u, n);
        double v;
        try {
            v = -discrete_loglik(xs, obs, model, prior, grid);
        } catch (const EvaluationError&) {
            return std::numeric_limits<double>::infinity();
        }
        g = -detail::flatten(discrete_loglik_grad(xs, obs, model, prior, grid));
        return v;
    };
    const MinimizeResult r = lbfgs_minimize(f, detail::flatten(init), grad_tol, max_iter);
    return {detail::unflatten(r.x, n), r.value, r.grad_sup, r.iterations, r.converged};
}

} // namespace lap
