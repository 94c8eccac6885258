/// @file optimize.hpp Small numerical kernels shared by the solvers: a
/// limited-memory quasi-Newton minimizer with Armijo backtracking and a damped
/// Newton iteration for square nonlinear systems.

#pragma once

#include "types.hpp"

#include <deque>
#include <functional>
#include <limits>

namespace lap {

using DVec = Eigen::VectorXd;
using DMat = Eigen::MatrixXd;

struct MinimizeResult {
    DVec x;
    double value = 0;
    double grad_sup = 0;
    int iterations = 0;
    bool converged = false;
};

/// Objective returning the value and filling the gradient. Non-finite values
/// mark infeasible points and make the line search back off.
using Objective = std::function<double(const DVec&, DVec&)>;

/// L-BFGS directions, Armijo backtracking (c = 1e-4, step halving). Stops when
/// the gradient sup-norm reaches `grad_tol` or after `max_iter` iterations.
inline MinimizeResult lbfgs_minimize(const Objective& f, DVec x, double grad_tol = 1e-8, int max_iter = 100000,
                                     int memory = 12) {
    constexpr double c1 = 1e-4;
    DVec g(x.size());
    double fx = f(x, g);
    if (!std::isfinite(fx)) throw Error("lbfgs_minimize: initial point is infeasible");

    std::deque<DVec> s_hist, y_hist;
    std::deque<double> rho_hist;
    MinimizeResult res;
    int it = 0;
    for (; it < max_iter; ++it) {
        if (g.lpNorm<Eigen::Infinity>() <= grad_tol) break;

        // Two-loop recursion.
        DVec d = -g;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * s_hist[k].dot(d);
            d -= alpha[k] * y_hist[k];
        }
        if (!s_hist.empty()) d *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        else d /= std::max(1.0, g.norm());
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * y_hist[k].dot(d);
            d += (alpha[k] - beta) * s_hist[k];
        }
        double slope = g.dot(d);
        if (!(slope < 0)) {
            s_hist.clear(); y_hist.clear(); rho_hist.clear();
            d = -g / std::max(1.0, g.norm());
            slope = g.dot(d);
        }

        double step = 1.0;
        DVec xn(x.size()), gn(x.size());
        double fn = std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            xn = x + step * d;
            fn = f(xn, gn);
            if (std::isfinite(fn) && fn <= fx + c1 * step * slope) {
                accepted = true;
                break;
            }
            // Near the optimum f stops resolving the decrease; fall back to
            // the approximate Wolfe test on the directional derivative.
            if (std::isfinite(fn) && fn <= fx + 1e-10 * std::abs(fx)) {
                const double dn = gn.dot(d);
                if (dn <= (1 - 2 * c1) * -slope && dn >= 0.9 * slope) {
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (s_hist.empty()) break;  // steepest descent cannot progress either
            s_hist.clear(); y_hist.clear(); rho_hist.clear();
            continue;
        }
        DVec s = xn - x, y = gn - g;
        const double sy = s.dot(y);
        if (sy > 1e-300 * s.squaredNorm() && sy > 0) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(y));
            rho_hist.push_back(1.0 / sy);
            if (static_cast<int>(s_hist.size()) > memory) {
                s_hist.pop_front(); y_hist.pop_front(); rho_hist.pop_front();
            }
        }
        x = std::move(xn);
        g = std::move(gn);
        fx = fn;
    }
    res.x = std::move(x);
    res.value = fx;
    res.grad_sup = g.lpNorm<Eigen::Infinity>();
    res.iterations = it;
    res.converged = res.grad_sup <= grad_tol;
    return res;
}

struct NewtonResult {
    DVec u;
    DVec residual;
    int iterations = 0;
    bool converged = false;
};

/// Residual map; throws (e.g. BlowUpError) when the point cannot be evaluated.
using ResidualFn = std::function<DVec(const DVec&)>;
/// Jacobian at u given the residual there.
using JacobianFn = std::function<DMat(const DVec&, const DVec&)>;

/// Damped Newton: full step first, halved up to 30 times until the residual
/// norm decreases. Converged when the residual sup-norm is <= tol.
inline NewtonResult damped_newton(const ResidualFn& F, const JacobianFn& J, DVec u, double tol, int max_iter = 50) {
    NewtonResult out;
    DVec r = F(u);
    double norm = r.norm();
    int it = 0;
    for (; it < max_iter; ++it) {
        if (r.lpNorm<Eigen::Infinity>() <= tol) break;
        const DMat jac = J(u, r);
        Eigen::FullPivLU<DMat> lu(jac);
        if (lu.rank() < jac.cols()) break;
        const DVec delta = lu.solve(r);
        double lambda = 1.0;
        bool improved = false;
        for (int k = 0; k <= 30; ++k, lambda *= 0.5) {
            const DVec trial = u - lambda * delta;
            DVec rt;
            try {
                rt = F(trial);
            } catch (const Error&) {
                continue;
            }
            if (rt.allFinite() && rt.norm() < norm) {
                u = trial;
                r = std::move(rt);
                norm = r.norm();
                improved = true;
                break;
            }
        }
        if (!improved) break;
    }
    out.u = std::move(u);
    out.residual = std::move(r);
    out.iterations = it;
    out.converged = out.residual.lpNorm<Eigen::Infinity>() <= tol;
    return out;
}

} // namespace lap
