/// @file variational.hpp Euler-Lagrange boundary-value problem for the
/// least-action path, solved by single or multiple shooting.
///
/// Along a stationary path d/dt D_p psi = D_x psi, with D_p psi(0) = D phi(x_0)
/// and D_p psi(T) = 0. Because psi is quadratic in p this is an explicit
/// first-order system in (x, p).

#pragma once

#include "action.hpp"
#include "model.hpp"
#include "optimize.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

namespace lap {

struct ElRhs {
    Vec dx;
    Vec dp;
};

namespace detail {

inline ElRhs el_rhs_at(const PartitionedModel& m, double t, const Vec& x, const Vec& p, const ObsPoint& o) {
    const PsiDerivatives d = psi_derivatives_at(m, t, x, p, o, false);
    const Vec rhs = d.grad_x - d.dt_grad_p - d.B.transpose() * p;
    Eigen::LLT<Mat> llt(d.q);
    if (llt.info() != Eigen::Success) throw EvaluationError("q is singular", t, m.join(x, o.y));
    return {p, llt.solve(rhs)};
}

} // namespace detail

/// dx = p, dp = q^{-1} (D_x psi - d/dt D_p psi - (D_p D_x psi) p).
inline ElRhs el_rhs(double t, const Vec& x, const Vec& p, const ObservationSeries& obs,
                    const PartitionedModel& model) {
    return detail::el_rhs_at(model, t, x, p, detail::obs_point(obs, t));
}

/// Solves D_p psi(0, x0, p0) = D phi(x0) for p0 (affine in p).
inline Vec initial_p_from_bc0(const Vec& x0, const ObservationSeries& obs, const PartitionedModel& model,
                              const Prior& prior) {
    const detail::ObsPoint o = detail::obs_point(obs, 0.0);
    const Vec zero = Vec::Zero(model.hidden);
    const Vec c = detail::grad_p_at(model, 0.0, x0, zero, o.y, o.dy);
    Vec z;
    detail::residual(model, 0.0, x0, zero, o.y, o.dy, &z);
    const Mat q = detail::symmetrize(model.base.precision(0.0, z).topLeftCorner(model.hidden, model.hidden));
    Eigen::LLT<Mat> llt(q);
    if (llt.info() != Eigen::Success) throw EvaluationError("q is singular", 0.0, z);
    return llt.solve(prior.grad(x0) - c);
}

/// D_p psi(t, x, p); the terminal boundary residual when evaluated at T.
inline Vec momentum(double t, const Vec& x, const Vec& p, const ObservationSeries& obs,
                    const PartitionedModel& model) {
    const detail::ObsPoint o = detail::obs_point(obs, t);
    return detail::grad_p_at(model, t, x, p, o.y, o.dy);
}

struct ShootResult {
    Vec terminal_residual;
    HiddenPath path;
    std::vector<Vec> dp;  ///< el_rhs dp at every node
};

namespace detail {

/// RK4 for the Euler-Lagrange system over nodes [j0, j1], starting from (x, p)
/// at node j0. Fills x, p, dp at nodes j0..j1 of the output arrays.
inline void integrate_el(const PartitionedModel& m, const ObservationSeries& obs, const TimeGrid& grid,
                         std::size_t j0, std::size_t j1, Vec x, Vec p, std::vector<Vec>& xs, std::vector<Vec>& ps,
                         std::vector<Vec>& dps) {
    const double h = grid.step();
    const double cap = m.base.coefficient_cap();
    auto f = [&](double t, const Vec& xx, const Vec& pp) {
        try {
            return el_rhs_at(m, t, xx, pp, obs_point(obs, t));
        } catch (const EvaluationError& e) {
            throw BlowUpError(std::string("Euler-Lagrange evaluation failed: ") + e.what(), t);
        }
    };
    auto check = [&](double t, const Vec& xx, const Vec& pp) {
        if (!xx.allFinite() || !pp.allFinite() || xx.norm() > cap || pp.norm() > cap)
            throw BlowUpError("Euler-Lagrange trajectory blew up", t);
    };
    ElRhs k1 = f(grid.time(j0), x, p);
    xs[j0] = x;
    ps[j0] = p;
    dps[j0] = k1.dp;
    for (std::size_t j = j0; j < j1; ++j) {
        const double t = grid.time(j);
        const ElRhs k2 = f(t + h / 2, x + h / 2 * k1.dx, p + h / 2 * k1.dp);
        const ElRhs k3 = f(t + h / 2, x + h / 2 * k2.dx, p + h / 2 * k2.dp);
        const ElRhs k4 = f(t + h, x + h * k3.dx, p + h * k3.dp);
        x += h / 6 * (k1.dx + 2 * k2.dx + 2 * k3.dx + k4.dx);
        p += h / 6 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
        check(grid.time(j + 1), x, p);
        k1 = f(grid.time(j + 1), x, p);
        xs[j + 1] = x;
        ps[j + 1] = p;
        dps[j + 1] = k1.dp;
    }
}

} // namespace detail

/// Integrates the Euler-Lagrange system from (x0, p0(x0)) over the grid with RK4.
/// Throws BlowUpError if the trajectory leaves the coefficient cap.
inline ShootResult shoot(const Vec& x0, const ObservationSeries& obs, const PartitionedModel& model,
                         const Prior& prior, const TimeGrid& grid) {
    if (x0.size() != model.hidden) throw Error("shoot: x0 has wrong dimension");
    ShootResult out;
    out.path.grid = grid;
    out.path.x.resize(grid.nodes());
    out.path.p.resize(grid.nodes());
    out.dp.resize(grid.nodes());
    detail::integrate_el(model, obs, grid, 0, grid.steps(), x0, initial_p_from_bc0(x0, obs, model, prior),
                         out.path.x, out.path.p, out.dp);
    out.terminal_residual = momentum(grid.horizon(), out.path.x.back(), out.path.p.back(), obs, model);
    return out;
}

struct Candidate {
    Vec start;
    Vec x0;
    double action = 0;
    bool converged = false;
};

struct LeastActionPath {
    HiddenPath path;
    std::vector<Vec> dp;
    double action = 0;  ///< -Lambda of the returned path
    Vec residual_bc0;
    Vec residual_bcT;
    bool converged = false;
    int starts_tried = 0;
    int segments = 1;
    /// One entry per start, in start order.
    std::vector<Candidate> candidates;
};

struct SolveOptions {
    double tol = 1e-9;
    int max_newton = 50;
    /// Multiple shooting once T * (Lipschitz estimate of el_rhs) exceeds this.
    double shooting_threshold = 20.0;
    /// Target growth exponent per multiple-shooting segment.
    double segment_growth = 8.0;
    double max_segment_length = 5.0;
    bool force_multiple = false;
};

namespace detail {

/// Infinity-norm of a finite-difference Jacobian of el_rhs, maximized over
/// sample times along a guess path.
inline double el_lipschitz(const PartitionedModel& m, const ObservationSeries& obs, const TimeGrid& grid,
                           const std::function<Vec(double)>& guess) {
    const int n = m.hidden;
    double best = 0;
    constexpr int samples = 17;
    for (int k = 0; k < samples; ++k) {
        const double t = grid.horizon() * k / (samples - 1);
        const ObsPoint o = obs_point(obs, t);
        const Vec x = guess(t);
        const Vec p = Vec::Zero(n);
        Mat J(2 * n, 2 * n);
        try {
            for (int i = 0; i < 2 * n; ++i) {
                Vec xp = x, xm = x, pp = p, pm = p;
                const double d = fd_step1(i < n ? x[i] : 0.0);
                if (i < n) { xp[i] += d; xm[i] -= d; }
                else { pp[i - n] += d; pm[i - n] -= d; }
                const ElRhs a = el_rhs_at(m, t, xp, pp, o), b = el_rhs_at(m, t, xm, pm, o);
                J.col(i).head(n) = (a.dx - b.dx) / (2 * d);
                J.col(i).tail(n) = (a.dp - b.dp) / (2 * d);
            }
        } catch (const Error&) {
            continue;
        }
        best = std::max(best, J.cwiseAbs().rowwise().sum().maxCoeff());
    }
    return best;
}

inline DVec forward_jacobian_column(const std::function<DVec(const DVec&)>& F, const DVec& u, const DVec& r,
                                    Eigen::Index i) {
    DVec v = u;
    const double d = 1e-6 * (1 + std::abs(u[i]));
    v[i] += d;
    return (F(v) - r) / (v[i] - u[i]);
}

struct ShootingProblem {
    const PartitionedModel& m;
    const ObservationSeries& obs;
    const Prior& prior;
    const TimeGrid& grid;
    std::vector<std::size_t> knots;  ///< node indices 0 = k_0 < ... < k_M = N

    int n() const { return m.hidden; }
    std::size_t segments() const { return knots.size() - 1; }
    Eigen::Index unknowns() const { return n() + 2 * n() * static_cast<Eigen::Index>(segments() - 1); }

    /// Start state of segment s.
    std::pair<Vec, Vec> start_of(const DVec& u, std::size_t s) const {
        if (s == 0) {
            const Vec x0 = u.head(n());
            return {x0, initial_p_from_bc0(x0, obs, m, prior)};
        }
        const Eigen::Index off = n() + 2 * n() * static_cast<Eigen::Index>(s - 1);
        return {u.segment(off, n()), u.segment(off + n(), n())};
    }

    /// End state of segment s integrated from its start.
    std::pair<Vec, Vec> end_of(const DVec& u, std::size_t s, std::vector<Vec>& xs, std::vector<Vec>& ps,
                               std::vector<Vec>& dps) const {
        auto [x, p] = start_of(u, s);
        integrate_el(m, obs, grid, knots[s], knots[s + 1], x, p, xs, ps, dps);
        return {xs[knots[s + 1]], ps[knots[s + 1]]};
    }

    /// Residual block written by segment s: mismatch with the next knot, or bcT.
    DVec block(const DVec& u, std::size_t s, const Vec& xe, const Vec& pe) const {
        if (s + 1 == segments()) return momentum(grid.horizon(), xe, pe, obs, m);
        const auto [xn, pn] = start_of(u, s + 1);
        DVec r(2 * n());
        r.head(n()) = xe - xn;
        r.tail(n()) = pe - pn;
        return r;
    }

    Eigen::Index block_offset(std::size_t s) const { return 2 * n() * static_cast<Eigen::Index>(s); }

    DVec residual(const DVec& u, std::vector<Vec>& xs, std::vector<Vec>& ps, std::vector<Vec>& dps) const {
        DVec r(unknowns());
        for (std::size_t s = 0; s < segments(); ++s) {
            const auto [xe, pe] = end_of(u, s, xs, ps, dps);
            const DVec b = block(u, s, xe, pe);
            r.segment(block_offset(s), b.size()) = b;
        }
        return r;
    }

    /// Forward-difference Jacobian; each unknown only moves its own segment and
    /// the matching condition of the previous one.
    DMat jacobian(const DVec& u, const DVec& r) const {
        const Eigen::Index dim = unknowns();
        DMat J = DMat::Zero(dim, dim);
        std::vector<Vec> xs(grid.nodes()), ps(grid.nodes()), dps(grid.nodes());
        for (Eigen::Index i = 0; i < dim; ++i) {
            const std::size_t s = i < n() ? 0 : static_cast<std::size_t>((i - n()) / (2 * n())) + 1;
            DVec v = u;
            const double d = 1e-6 * (1 + std::abs(u[i]));
            v[i] += d;
            const double width = v[i] - u[i];
            const auto [xe, pe] = end_of(v, s, xs, ps, dps);
            const DVec b = block(v, s, xe, pe);
            J.col(i).segment(block_offset(s), b.size()) = (b - r.segment(block_offset(s), b.size())) / width;
            if (s > 0) J(block_offset(s - 1) + (i - n()) % (2 * n()), i) = -1.0;
        }
        return J;
    }
};

inline std::vector<std::size_t> segment_knots(const TimeGrid& grid, std::size_t segments) {
    segments = std::clamp<std::size_t>(segments, 1, grid.steps());
    std::vector<std::size_t> k(segments + 1);
    for (std::size_t s = 0; s <= segments; ++s)
        k[s] = static_cast<std::size_t>(std::llround(static_cast<double>(grid.steps()) * s / segments));
    return k;
}

struct SolvedStart {
    bool converged = false;
    DVec u;
    DVec residual;
    ShootResult result;
};

inline SolvedStart solve_single(const PartitionedModel& m, const ObservationSeries& obs, const Prior& prior,
                                const TimeGrid& grid, const Vec& start, const SolveOptions& opt) {
    auto F = [&](const DVec& u) -> DVec { return DVec(shoot(Vec(u), obs, m, prior, grid).terminal_residual); };
    JacobianFn J = [&](const DVec& u, const DVec& r) {
        DMat jac(u.size(), u.size());
        for (Eigen::Index i = 0; i < u.size(); ++i) jac.col(i) = forward_jacobian_column(F, u, r, i);
        return jac;
    };
    const NewtonResult nr = damped_newton(F, J, DVec(start), opt.tol, opt.max_newton);
    SolvedStart out;
    out.u = nr.u;
    out.residual = nr.residual;
    out.converged = nr.converged;
    out.result = shoot(Vec(nr.u), obs, m, prior, grid);
    return out;
}

inline SolvedStart solve_multiple(const PartitionedModel& m, const ObservationSeries& obs, const Prior& prior,
                                  const TimeGrid& grid, const std::vector<std::size_t>& knots,
                                  const std::function<Vec(double)>& guess, const Vec& start,
                                  const SolveOptions& opt) {
    const ShootingProblem prob{m, obs, prior, grid, knots};
    const int n = m.hidden;
    DVec u(prob.unknowns());
    u.head(n) = start;
    for (std::size_t s = 1; s < prob.segments(); ++s) {
        const double t = grid.time(knots[s]);
        const double d = grid.step();
        const Eigen::Index off = n + 2 * n * static_cast<Eigen::Index>(s - 1);
        u.segment(off, n) = guess(t);
        u.segment(off + n, n) = (guess(t + d) - guess(t - d)) / (2 * d);
    }
    std::vector<Vec> xs(grid.nodes()), ps(grid.nodes()), dps(grid.nodes());
    auto F = [&](const DVec& v) { return prob.residual(v, xs, ps, dps); };
    JacobianFn J = [&](const DVec& v, const DVec& r) { return prob.jacobian(v, r); };
    const NewtonResult nr = damped_newton(F, J, u, opt.tol, opt.max_newton);
    SolvedStart out;
    out.u = nr.u;
    out.converged = nr.converged;
    out.residual = prob.residual(nr.u, xs, ps, dps);
    out.result.path.grid = grid;
    out.result.path.x = xs;
    out.result.path.p = ps;
    out.result.dp = dps;
    out.result.terminal_residual = momentum(grid.horizon(), xs.back(), ps.back(), obs, m);
    return out;
}

inline double halton(std::size_t index, int base) {
    double f = 1, r = 0;
    while (index > 0) {
        f /= base;
        r += f * static_cast<double>(index % base);
        index /= base;
    }
    return r;
}

} // namespace detail

/// Default starting points: the origin, the model's observation-based guess at
/// t = 0 (if any), and 8 Halton points in a box of half-width 3 std(y).
inline std::vector<Vec> auto_starts(const ObservationSeries& obs, const PartitionedModel& model) {
    const int n = model.hidden;
    std::vector<Vec> starts{Vec::Zero(n)};
    if (model.hidden_guess) starts.push_back(model.hidden_guess(0.0, obs.at(0.0).value));
    const double half = 3.0 * obs.pooled_std();
    static constexpr int primes[kMaxDim] = {2, 3, 5, 7, 11, 13, 17, 19};
    for (std::size_t k = 1; k <= 8; ++k) {
        Vec s(n);
        for (int i = 0; i < n; ++i) s[i] = half * (2 * detail::halton(k, primes[i]) - 1);
        starts.push_back(s);
    }
    return starts;
}

/// Least-action path by damped Newton shooting from each start, keeping the
/// converged stationary path of smallest action (ties: smallest |x0|, then
/// lexicographic x0). Long or unstable horizons use multiple shooting.
inline LeastActionPath solve_least_action(const ObservationSeries& obs, const PartitionedModel& model,
                                          const Prior& prior, const TimeGrid& grid,
                                          std::optional<std::vector<Vec>> starts = std::nullopt,
                                          const SolveOptions& opt = {}) {
    if (!(obs.grid() == grid)) throw Error("solve_least_action: observations are not sampled on the grid");
    const std::vector<Vec> start_list = starts ? *starts : auto_starts(obs, model);
    if (start_list.empty()) throw Error("solve_least_action: no starting points");
    for (const auto& s : start_list)
        if (s.size() != model.hidden) throw Error("solve_least_action: start has wrong dimension");

    const double T = grid.horizon();
    LeastActionPath best;
    best.starts_tried = 0;
    std::optional<detail::SolvedStart> chosen;
    double chosen_action = 0;
    double best_unconverged_norm = std::numeric_limits<double>::infinity();
    std::optional<detail::SolvedStart> fallback;

    for (std::size_t k = 0; k < start_list.size(); ++k) {
        const Vec& start = start_list[k];
        ++best.starts_tried;
        std::function<Vec(double)> guess = [start](double) { return start; };
        // The automatic list puts the observation-based guess second; its
        // knots follow the whole guessed path instead of a constant.
        if (!starts && model.hidden_guess && k == 1)
            guess = [&](double t) { return model.hidden_guess(t, obs.at(t).value); };
        const double lip = detail::el_lipschitz(model, obs, grid, guess);
        std::optional<detail::SolvedStart> solved;
        int segments = 1;
        if (!opt.force_multiple && T * lip <= opt.shooting_threshold) {
            try {
                solved = detail::solve_single(model, obs, prior, grid, start, opt);
            } catch (const Error&) {
            }
        }
        if (!solved || !solved->converged) {
            const double seg_len = std::min(opt.max_segment_length, opt.segment_growth / std::max(lip, 1e-12));
            segments = static_cast<int>(std::ceil(T / seg_len));
            try {
                solved = detail::solve_multiple(model, obs, prior, grid,
                                                detail::segment_knots(grid, static_cast<std::size_t>(segments)),
                                                guess, start, opt);
            } catch (const Error&) {
                solved.reset();
            }
        }
        Candidate cand{start, start, std::numeric_limits<double>::infinity(), false};
        if (solved) {
            cand.x0 = solved->result.path.x.front();
            cand.converged = solved->converged;
            try {
                cand.action = continuous_action(solved->result.path, obs, model, prior);
            } catch (const Error&) {
                cand.converged = false;
            }
        }
        best.candidates.push_back(cand);
        if (!solved) continue;
        if (cand.converged) {
            bool better = !chosen;
            if (chosen) {
                const double tie = 1e-9 * (1 + std::abs(chosen_action));
                const Vec& cx = chosen->result.path.x.front();
                if (cand.action < chosen_action - tie) better = true;
                else if (std::abs(cand.action - chosen_action) <= tie) {
                    const double a = cand.x0.norm(), b = cx.norm();
                    if (a < b - 1e-12) better = true;
                    else if (std::abs(a - b) <= 1e-12)
                        better = std::lexicographical_compare(cand.x0.data(), cand.x0.data() + cand.x0.size(),
                                                              cx.data(), cx.data() + cx.size());
                }
            }
            if (better) {
                chosen = std::move(solved);
                chosen_action = cand.action;
                best.segments = segments;
            }
        } else if (!chosen) {
            const double norm = solved->residual.lpNorm<Eigen::Infinity>();
            if (norm < best_unconverged_norm) {
                best_unconverged_norm = norm;
                fallback = std::move(solved);
                best.segments = segments;
            }
        }
    }

    const detail::SolvedStart* pick = chosen ? &*chosen : (fallback ? &*fallback : nullptr);
    if (!pick) throw BlowUpError("solve_least_action: every start failed", 0.0);
    best.path = pick->result.path;
    best.dp = pick->result.dp;
    best.converged = static_cast<bool>(chosen);
    best.action = continuous_action(best.path, obs, model, prior);
    best.residual_bcT = pick->result.terminal_residual;
    best.residual_bc0 = momentum(0.0, best.path.x.front(), best.path.p.front(), obs, model) -
                        prior.grad(best.path.x.front());
    return best;
}

/// Integrated Euler-Lagrange residual on each grid interval:
/// |D_p psi(t_{j+1}) - D_p psi(t_j) - int D_x psi| / h, sup over intervals.
/// Midpoint states come from cubic Hermite interpolation of (x, p, dp).
inline double el_residual(const HiddenPath& path, const std::vector<Vec>& dp, const ObservationSeries& obs,
                          const PartitionedModel& model, double* grad_x_sup = nullptr) {
    const double h = path.grid.step();
    double worst = 0, gsup = 0;
    auto gx = [&](double t, const Vec& x, const Vec& p) {
        const Vec g = psi_derivatives_at(model, t, x, p, detail::obs_point(obs, t), false).grad_x;
        gsup = std::max(gsup, detail::sup_norm(g));
        return g;
    };
    for (std::size_t j = 0; j + 1 < path.size(); ++j) {
        const double t = path.grid.time(j);
        const auto [xm, pm_slope] = detail::hermite(path.x[j], path.p[j], path.x[j + 1], path.p[j + 1], h, 0.5);
        const auto [pm, unused] = detail::hermite(path.p[j], dp[j], path.p[j + 1], dp[j + 1], h, 0.5);
        (void)pm_slope;
        (void)unused;
        const Vec integral = h / 6 * (gx(t, path.x[j], path.p[j]) + 4 * gx(t + h / 2, xm, pm) +
                                      gx(t + h, path.x[j + 1], path.p[j + 1]));
        const Vec jump = momentum(t + h, path.x[j + 1], path.p[j + 1], obs, model) -
                         momentum(t, path.x[j], path.p[j], obs, model);
        worst = std::max(worst, detail::sup_norm(jump - integral) / h);
    }
    if (grad_x_sup) *grad_x_sup = gsup;
    return worst;
}

} // namespace lap
