/// @file pointprocess.hpp Hidden positive intensity observed through the event
/// times of a Cox process. The action is phi(x_0) + int psi + int x - sum log
/// x(tau_i); the path is smooth between events and its momentum jumps at them.

#pragma once

#include "model.hpp"
#include "optimize.hpp"
#include "random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace lap {

struct EventRecord {
    double horizon = 0;
    std::vector<double> times;

    EventRecord() = default;
    EventRecord(double T, std::vector<double> ts) : horizon(T), times(std::move(ts)) {
        if (!(T > 0) || !std::isfinite(T)) throw Error("EventRecord: horizon must be positive");
        for (std::size_t i = 0; i < times.size(); ++i) {
            if (!(times[i] > 0 && times[i] < T))
                throw Error("EventRecord: event " + std::to_string(i) + " lies outside (0, T)");
            if (i && !(times[i] > times[i - 1]))
                throw Error("EventRecord: event times must be strictly increasing (index " + std::to_string(i) + ")");
        }
    }

    std::size_t count() const { return times.size(); }
    double rate() const { return static_cast<double>(times.size()) / horizon; }
};

struct PpSegment {
    std::vector<double> t, x, p, dp;
};

/// x is continuous; p jumps by jump_p[i] at times[i].
struct PiecewisePath {
    std::vector<PpSegment> segments;
    std::vector<double> jump_p;

    double x0() const { return segments.front().x.front(); }
    double xT() const { return segments.back().x.back(); }
};

/// Clamps applied to the EL coefficients while searching.
struct PpTruncation {
    double x_lo = 1e-6;
    double x_hi = 1e6;
    double dp_max = 1e8;
};

namespace detail {

inline const ObservationSeries& no_observation() {
    static const ObservationSeries none = ObservationSeries::none(TimeGrid(1.0, 0));
    return none;
}

inline void check_scalar(const PartitionedModel& m) {
    if (m.hidden != 1 || m.observed != 0) throw Error("point process: model must be a scalar hidden diffusion");
}

inline PsiDerivatives pp_derivs(double t, double x, double p, const PartitionedModel& m) {
    return psi_derivatives(t, Vec::Constant(1, x), Vec::Constant(1, p), no_observation(), m);
}

inline double pp_momentum(double t, double x, double p, const PartitionedModel& m) {
    return grad_p_at(m, t, Vec::Constant(1, x), Vec::Constant(1, p), Vec(0), Vec(0))[0];
}

/// Grid nodes strictly inside (a, b), dropping any within 1e-9 of an end.
inline std::vector<double> segment_times(double a, double b, const TimeGrid& g) {
    std::vector<double> ts{a};
    const double h = g.step();
    for (auto j = static_cast<std::size_t>(std::floor(a / h)) + 1; j < g.nodes(); ++j) {
        const double t = g.time(j);
        if (t >= b - 1e-9) break;
        if (t > a + 1e-9) ts.push_back(t);
    }
    ts.push_back(b);
    return ts;
}

} // namespace detail

struct PpRhs {
    double dx, dp;
};

/// Euler-Lagrange flow between events: d/dt psi_p = psi_x + 1.
inline PpRhs pp_el_rhs(double t, double x, double p, const PartitionedModel& model,
                       const std::optional<PpTruncation>& trunc = std::nullopt) {
    detail::check_scalar(model);
    double xe = x;
    if (trunc) xe = std::clamp(x, trunc->x_lo, trunc->x_hi);
    else if (!(x > 0)) throw EvaluationError("pp_el_rhs: intensity must be positive", t, Vec::Constant(1, x));
    const auto d = detail::pp_derivs(t, xe, p, model);
    double dp = (d.grad_x[0] + 1.0 - d.dt_grad_p[0] - d.B(0, 0) * p) / d.q(0, 0);
    if (trunc) dp = std::clamp(dp, -trunc->dp_max, trunc->dp_max);
    return {p, dp};
}

/// Momentum after an event: psi_p(x, p+) = psi_p(x, p-) - 1/x.
inline double pp_jump(double t, double x, double p_minus, const PartitionedModel& model) {
    detail::check_scalar(model);
    if (!(x > 0)) throw EvaluationError("pp_jump: intensity must be positive", t, Vec::Constant(1, x));
    const double q = detail::pp_derivs(t, x, p_minus, model).q(0, 0);
    return p_minus - 1.0 / (x * q);
}

/// p_0 from phi'(x_0) = psi_p(0, x_0, p_0); psi_p is affine in p.
inline double pp_initial_p(double x0, const PartitionedModel& model, const Prior& prior) {
    const auto d = detail::pp_derivs(0.0, x0, 0.0, model);
    return (prior.grad(Vec::Constant(1, x0))[0] - d.grad_p[0]) / d.q(0, 0);
}

struct PpShot {
    PiecewisePath path;
    double terminal_residual = 0;
};

/// RK4 across each inter-event segment on the grid nodes it contains, with the
/// jump condition applied at every event.
inline PpShot pp_shoot(double x0, const EventRecord& ev, const PartitionedModel& model, const Prior& prior,
                       const TimeGrid& grid, const std::optional<PpTruncation>& trunc = std::nullopt) {
    detail::check_scalar(model);
    if (grid.horizon() != ev.horizon) throw Error("pp_shoot: grid and event horizons differ");
    if (!(x0 > 0)) throw EvaluationError("pp_shoot: initial intensity must be positive", 0.0, Vec::Constant(1, x0));
    auto eval_x = [&](double x) { return trunc ? std::clamp(x, trunc->x_lo, trunc->x_hi) : x; };
    PpShot out;
    double x = x0, p = pp_initial_p(x0, model, prior);
    std::vector<double> bounds{0.0};
    bounds.insert(bounds.end(), ev.times.begin(), ev.times.end());
    bounds.push_back(ev.horizon);
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        PpSegment seg;
        seg.t = detail::segment_times(bounds[s], bounds[s + 1], grid);
        auto f = [&](double t, double xx, double pp) { return pp_el_rhs(t, xx, pp, model, trunc); };
        PpRhs k1 = f(seg.t[0], x, p);
        seg.x.push_back(x);
        seg.p.push_back(p);
        seg.dp.push_back(k1.dp);
        for (std::size_t k = 0; k + 1 < seg.t.size(); ++k) {
            const double t = seg.t[k], h = seg.t[k + 1] - t;
            const PpRhs k2 = f(t + h / 2, x + h / 2 * k1.dx, p + h / 2 * k1.dp);
            const PpRhs k3 = f(t + h / 2, x + h / 2 * k2.dx, p + h / 2 * k2.dp);
            const PpRhs k4 = f(t + h, x + h * k3.dx, p + h * k3.dp);
            x += h / 6 * (k1.dx + 2 * k2.dx + 2 * k3.dx + k4.dx);
            p += h / 6 * (k1.dp + 2 * k2.dp + 2 * k3.dp + k4.dp);
            if (!std::isfinite(x) || !std::isfinite(p)) throw BlowUpError("point-process path blew up", t + h);
            k1 = f(t + h, x, p);
            seg.x.push_back(x);
            seg.p.push_back(p);
            seg.dp.push_back(k1.dp);
        }
        out.path.segments.push_back(std::move(seg));
        if (s + 2 < bounds.size()) {
            const double pn = pp_jump(bounds[s + 1], eval_x(x), p, model);
            out.path.jump_p.push_back(pn - p);
            p = pn;
        }
    }
    out.terminal_residual = detail::pp_momentum(ev.horizon, eval_x(x), p, model);
    return out;
}

/// phi(x_0) + int (psi + x) - sum log x(tau_i), trapezoid per segment with
/// p read as the velocity.
inline double pp_action(const PiecewisePath& path, const EventRecord& ev, const PartitionedModel& model,
                        const Prior& prior) {
    detail::check_scalar(model);
    if (path.segments.size() != ev.count() + 1) throw Error("pp_action: segment count does not match events");
    double total = prior.phi(Vec::Constant(1, path.x0()));
    for (std::size_t s = 0; s < path.segments.size(); ++s) {
        const auto& seg = path.segments[s];
        for (std::size_t k = 0; k + 1 < seg.t.size(); ++k) {
            const double h = seg.t[k + 1] - seg.t[k];
            auto integrand = [&](std::size_t i) {
                const double psi = eval_psi(seg.t[i], Vec::Constant(1, seg.x[i]), Vec::Constant(1, seg.p[i]),
                                            detail::no_observation(), model);
                return psi + seg.x[i];
            };
            total += h / 2 * (integrand(k) + integrand(k + 1));
        }
        if (s + 1 < path.segments.size()) {
            const double xe = seg.x.back();
            if (!(xe > 0)) throw EvaluationError("pp_action: nonpositive intensity at an event", seg.t.back(),
                                                 Vec::Constant(1, xe));
            total -= std::log(xe);
        }
    }
    return total;
}

struct PpResiduals {
    double bc0 = 0;    ///< |phi'(x_0) - psi_p(0)|
    double el = 0;     ///< integrated EL residual relative to 1 + sup|psi_x + 1|
    double jump = 0;   ///< sup |psi_p(p+) - psi_p(p-) + 1/x|
    double bcT = 0;    ///< |psi_p(T)|
    double max() const { return std::max({bc0, el, jump, bcT}); }
};

/// The four optimality conditions evaluated without truncation.
inline PpResiduals pp_residuals(const PiecewisePath& path, const EventRecord& ev, const PartitionedModel& model,
                                const Prior& prior) {
    PpResiduals r;
    const auto& s0 = path.segments.front();
    r.bc0 = std::abs(prior.grad(Vec::Constant(1, s0.x[0]))[0] - detail::pp_momentum(0.0, s0.x[0], s0.p[0], model));
    double worst = 0, gsup = 0;
    auto gx = [&](double t, double x, double p) {
        const double g = detail::pp_derivs(t, x, p, model).grad_x[0] + 1.0;
        gsup = std::max(gsup, std::abs(g));
        return g;
    };
    for (std::size_t s = 0; s < path.segments.size(); ++s) {
        const auto& seg = path.segments[s];
        for (std::size_t k = 0; k + 1 < seg.t.size(); ++k) {
            const double t = seg.t[k], h = seg.t[k + 1] - t;
            const Vec xa = Vec::Constant(1, seg.x[k]), xb = Vec::Constant(1, seg.x[k + 1]);
            const Vec pa = Vec::Constant(1, seg.p[k]), pb = Vec::Constant(1, seg.p[k + 1]);
            const Vec da = Vec::Constant(1, seg.dp[k]), db = Vec::Constant(1, seg.dp[k + 1]);
            const double xm = detail::hermite(xa, pa, xb, pb, h, 0.5).first[0];
            const double pm = detail::hermite(pa, da, pb, db, h, 0.5).first[0];
            const double integral =
                h / 6 * (gx(t, seg.x[k], seg.p[k]) + 4 * gx(t + h / 2, xm, pm) + gx(t + h, seg.x[k + 1], seg.p[k + 1]));
            const double jump = detail::pp_momentum(t + h, seg.x[k + 1], seg.p[k + 1], model) -
                                detail::pp_momentum(t, seg.x[k], seg.p[k], model);
            worst = std::max(worst, std::abs(jump - integral) / std::max(h, 1e-6));
        }
        if (s + 1 < path.segments.size()) {
            const double x = seg.x.back(), tau = seg.t.back();
            const double pm = seg.p.back(), pp = path.segments[s + 1].p.front();
            r.jump = std::max(r.jump, std::abs(detail::pp_momentum(tau, x, pp, model) -
                                               detail::pp_momentum(tau, x, pm, model) + 1.0 / x));
        }
    }
    r.el = worst / (1 + gsup);
    const auto& sl = path.segments.back();
    r.bcT = std::abs(detail::pp_momentum(ev.horizon, sl.x.back(), sl.p.back(), model));
    return r;
}

struct PpSolveOptions {
    double scan_halfwidth = 6.0;  ///< in log x_0 around log(rate)
    int scan_points = 97;
    double tol = 1e-10;
    int max_iter = 100;
    PpTruncation truncation{};
};

struct PpSolution {
    PiecewisePath path;
    double x0 = 0;
    double action = std::numeric_limits<double>::infinity();
    PpResiduals residuals;
    bool converged = false;
    int roots_found = 0;
    std::vector<double> root_x0;
    std::string note;
};

namespace detail {

/// Safeguarded Newton in u = log x_0 on a sign-changing bracket of the
/// truncated terminal residual.
inline double pp_refine_root(const std::function<double(double)>& r, double ua, double ra, double ub, double rb,
                             double tol, int max_iter) {
    double u = std::abs(ra) < std::abs(rb) ? ua : ub;
    double ru = u == ua ? ra : rb;
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(ru) <= tol || ub - ua <= 1e-15 * (1 + std::abs(u))) break;
        const double du = 1e-7 * (1 + std::abs(u));
        const double slope = (r(u + du) - ru) / du;
        double next = u - ru / slope;
        if (!std::isfinite(next) || next <= ua || next >= ub) next = 0.5 * (ua + ub);
        const double rn = r(next);
        if ((rn > 0) == (ra > 0)) {
            ua = next;
            ra = rn;
        } else {
            ub = next;
            rb = rn;
        }
        if (std::abs(rn) > 0.5 * std::abs(ru) && next != 0.5 * (ua + ub)) {
            // Slow progress: take a bisection step as well.
            const double mid = 0.5 * (ua + ub), rm = r(mid);
            if ((rm > 0) == (ra > 0)) {
                ua = mid;
                ra = rm;
            } else {
                ub = mid;
                rb = rm;
            }
            u = std::abs(ra) < std::abs(rb) ? ua : ub;
            ru = u == ua ? ra : rb;
            continue;
        }
        u = next;
        ru = rn;
    }
    return u;
}

} // namespace detail

/// Shooting in x_0 over a log-spaced scan around the observed rate; every
/// bracketed root is refined with truncated coefficients, re-shot without
/// truncation, and the smallest action wins.
inline PpSolution pp_solve(const EventRecord& ev, const PartitionedModel& model, const Prior& prior,
                           const TimeGrid& grid, const PpSolveOptions& opt = {}) {
    detail::check_scalar(model);
    const double centre = std::log(std::max(ev.rate(), 1.0 / ev.horizon));
    auto r = [&](double u) {
        return pp_shoot(std::exp(u), ev, model, prior, grid, opt.truncation).terminal_residual;
    };
    std::vector<double> us, rs;
    for (int k = 0; k < opt.scan_points; ++k) {
        const double u = centre - opt.scan_halfwidth + 2 * opt.scan_halfwidth * k / (opt.scan_points - 1);
        double v = std::numeric_limits<double>::quiet_NaN();
        try {
            v = r(u);
        } catch (const Error&) {
        }
        us.push_back(u);
        rs.push_back(v);
    }
    PpSolution best;
    for (std::size_t k = 0; k + 1 < us.size(); ++k) {
        if (!std::isfinite(rs[k]) || !std::isfinite(rs[k + 1]) || (rs[k] > 0) == (rs[k + 1] > 0)) continue;
        double u;
        try {
            u = detail::pp_refine_root(r, us[k], rs[k], us[k + 1], rs[k + 1], opt.tol, opt.max_iter);
        } catch (const Error&) {
            continue;
        }
        ++best.roots_found;
        best.root_x0.push_back(std::exp(u));
        try {
            auto shot = pp_shoot(std::exp(u), ev, model, prior, grid);
            const double a = pp_action(shot.path, ev, model, prior);
            const auto res = pp_residuals(shot.path, ev, model, prior);
            const bool ok = std::isfinite(a) && res.max() <= 1e-6;
            if ((ok && !best.converged) || (ok == best.converged && a < best.action)) {
                best.path = std::move(shot.path);
                best.x0 = std::exp(u);
                best.action = a;
                best.residuals = res;
                best.converged = ok;
            }
        } catch (const Error&) {
            // Valid only under truncation; not a solution of the original problem.
        }
    }
    if (!best.roots_found) best.note = "no sign change of the terminal residual on the scan";
    else if (!best.converged) best.note = "no root verified without truncation";
    return best;
}

/// Action discretized on the grid: phi(x_0) + sum h [psi(t_j, x_j, dx_j/h) +
/// (x_j + x_{j+1})/2] - sum log x(tau_i), x(tau) linear between nodes.
inline double pp_discrete_action(const std::vector<double>& xs, const EventRecord& ev,
                                 const PartitionedModel& model, const Prior& prior, const TimeGrid& grid) {
    detail::check_scalar(model);
    if (xs.size() != grid.nodes()) throw Error("pp_discrete_action: path does not match the grid");
    const double h = grid.step();
    for (double x : xs)
        if (!(x > 0)) return std::numeric_limits<double>::infinity();
    double total = prior.phi(Vec::Constant(1, xs[0]));
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
        const double v = (xs[j + 1] - xs[j]) / h;
        total += h * eval_psi(grid.time(j), Vec::Constant(1, xs[j]), Vec::Constant(1, v), detail::no_observation(),
                              model);
        total += h * 0.5 * (xs[j] + xs[j + 1]);
    }
    for (double tau : ev.times) {
        const auto j = std::min(static_cast<std::size_t>(tau / h), grid.steps() - 1);
        const double w = tau / h - static_cast<double>(j);
        total -= std::log((1 - w) * xs[j] + w * xs[j + 1]);
    }
    return total;
}

inline std::vector<double> pp_discrete_action_grad(const std::vector<double>& xs, const EventRecord& ev,
                                                   const PartitionedModel& model, const Prior& prior,
                                                   const TimeGrid& grid) {
    detail::check_scalar(model);
    if (xs.size() != grid.nodes()) throw Error("pp_discrete_action_grad: path does not match the grid");
    const double h = grid.step();
    std::vector<double> g(xs.size(), 0.0);
    g[0] = prior.grad(Vec::Constant(1, xs[0]))[0];
    for (std::size_t j = 0; j + 1 < xs.size(); ++j) {
        const double v = (xs[j + 1] - xs[j]) / h;
        const auto d = detail::pp_derivs(grid.time(j), xs[j], v, model);
        g[j] += h * d.grad_x[0] - d.grad_p[0] + 0.5 * h;
        g[j + 1] += d.grad_p[0] + 0.5 * h;
    }
    for (double tau : ev.times) {
        const auto j = std::min(static_cast<std::size_t>(tau / h), grid.steps() - 1);
        const double w = tau / h - static_cast<double>(j);
        const double xt = (1 - w) * xs[j] + w * xs[j + 1];
        g[j] -= (1 - w) / xt;
        g[j + 1] -= w / xt;
    }
    return g;
}

/// L-BFGS on the discretized action, started from `init`.
inline MinimizeResult pp_minimize_discrete(const EventRecord& ev, const PartitionedModel& model, const Prior& prior,
                                           const TimeGrid& grid, const std::vector<double>& init,
                                           double grad_tol = 1e-8, int max_iter = 100000) {
    if (grid.nodes() > 5000) throw Error("pp_minimize_discrete: problem exceeds the dense size guard");
    Objective f = [&](const DVec& u, DVec& g) {
        const std::vector<double> xs(u.data(), u.data() + u.size());
        const double v = pp_discrete_action(xs, ev, model, prior, grid);
        if (!std::isfinite(v)) return v;
        const auto gr = pp_discrete_action_grad(xs, ev, model, prior, grid);
        g = Eigen::Map<const DVec>(gr.data(), static_cast<Eigen::Index>(gr.size()));
        return v;
    };
    return lbfgs_minimize(f, Eigen::Map<const DVec>(init.data(), static_cast<Eigen::Index>(init.size())), grad_tol,
                          max_iter);
}

/// Path values at the grid nodes (right limit at an event that sits on a node).
inline std::vector<double> pp_on_grid(const PiecewisePath& path, const TimeGrid& grid) {
    std::vector<double> out(grid.nodes(), std::numeric_limits<double>::quiet_NaN());
    const double h = grid.step();
    for (const auto& seg : path.segments)
        for (std::size_t k = 0; k < seg.t.size(); ++k) {
            const double j = std::round(seg.t[k] / h);
            if (std::abs(seg.t[k] - j * h) < 1e-9) out[static_cast<std::size_t>(j)] = seg.x[k];
        }
    // Nodes dropped next to an event: take the nearest recorded neighbour.
    for (std::size_t j = 0; j < out.size(); ++j)
        if (std::isnan(out[j])) out[j] = j ? out[j - 1] : path.x0();
    return out;
}

struct CoxSample {
    std::vector<double> intensity;  ///< on the grid nodes
    EventRecord events;
};

/// Euler-Maruyama for the intensity, reflected at 1e-8, then Ogata thinning
/// with the per-interval majorant max(x_j, x_{j+1}) against the linear
/// interpolant of the intensity.
inline CoxSample simulate_cox(const PartitionedModel& model, const TimeGrid& grid, std::uint64_t seed, double x0) {
    detail::check_scalar(model);
    if (!(x0 > 0)) throw Error("simulate_cox: initial intensity must be positive");
    constexpr double floor = 1e-8;
    const double h = grid.step(), sh = std::sqrt(h);
    Rng noise(seed, 0), thin(seed, 1);
    CoxSample out;
    out.intensity.reserve(grid.nodes());
    double x = x0;
    out.intensity.push_back(x);
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        const double t = grid.time(j);
        const Vec z = Vec::Constant(1, x);
        x += h * model.base.mu(t, z)[0] + model.base.sigma(t, z)(0, 0) * sh * noise.normal();
        if (x < floor) x = std::max(2 * floor - x, floor);
        if (!std::isfinite(x)) throw BlowUpError("simulate_cox: intensity blew up", t + h);
        out.intensity.push_back(x);
    }
    std::vector<double> times;
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        const double a = out.intensity[j], b = out.intensity[j + 1];
        const double M = std::max(a, b);
        if (M * h > 1e7) throw Error("simulate_cox: majorant overflow on interval " + std::to_string(j));
        double s = thin.exponential(M);
        while (s < h) {
            const double lam = a + (b - a) * s / h;
            if (thin.uniform() * M <= lam) {
                const double tau = grid.time(j) + s;
                if (tau > 0 && tau < grid.horizon() && (times.empty() || tau > times.back())) times.push_back(tau);
            }
            s += thin.exponential(M);
        }
    }
    out.events = EventRecord(grid.horizon(), std::move(times));
    return out;
}

} // namespace lap
