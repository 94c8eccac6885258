/// @file simulate.hpp Euler-Maruyama simulation with Brownian-bridge refinement.

#pragma once

#include "model.hpp"
#include "random.hpp"

#include <cstdint>
#include <vector>

namespace lap {

struct SimulatedPath {
    TimeGrid grid;
    std::vector<Vec> z;
    std::uint64_t seed = 0;
    /// Increments W(t_{j+1}) - W(t_j), kept so the path can be refined.
    std::vector<Vec> wiener_increments;
};

namespace detail {

inline std::vector<Vec> run_euler(const DiffusionModel& model, const TimeGrid& grid, const Vec& z0,
                                  const std::vector<Vec>& dw) {
    if (z0.size() != model.dim()) throw Error("euler_maruyama: z0 has wrong dimension");
    const double h = grid.step();
    std::vector<Vec> z;
    z.reserve(grid.nodes());
    z.push_back(z0);
    for (std::size_t j = 0; j < grid.steps(); ++j) {
        const double t = grid.time(j);
        Coefficients c;
        try {
            c = model.eval(t, z[j]);
        } catch (const EvaluationError& e) {
            throw BlowUpError(std::string("simulation failed: ") + e.what(), t);
        }
        Vec next = z[j] + c.sigma * dw[j] + c.mu * h;
        if (!next.allFinite() || next.norm() > model.coefficient_cap())
            throw BlowUpError("simulation exceeded the coefficient cap", grid.time(j + 1));
        z.push_back(std::move(next));
    }
    return z;
}

} // namespace detail

/// z[j+1] = z[j] + sigma(t_j, z_j) dW_j + mu(t_j, z_j) h, deterministic in `seed`.
inline SimulatedPath euler_maruyama(const DiffusionModel& model, const TimeGrid& grid, std::uint64_t seed,
                                    const Vec& z0) {
    Rng rng(seed, static_cast<std::uint64_t>(grid.level()));
    const double sh = std::sqrt(grid.step());
    std::vector<Vec> dw;
    dw.reserve(grid.steps());
    for (std::size_t j = 0; j < grid.steps(); ++j) dw.push_back(sh * rng.normal_vec(model.dim()));
    SimulatedPath out{grid, {}, seed, std::move(dw)};
    out.z = detail::run_euler(model, grid, z0, out.wiener_increments);
    return out;
}

/// Level n+1 path driven by the same Brownian motion: each coarse increment is
/// split by sampling the Brownian bridge at the midpoint.
inline SimulatedPath refine(const SimulatedPath& path, const DiffusionModel& model) {
    if (path.wiener_increments.size() != path.grid.steps())
        throw Error("refine: path does not carry its Wiener increments");
    const TimeGrid fine = path.grid.with_level(path.grid.level() + 1);
    Rng rng(path.seed, 0x8000000000000000ULL | static_cast<std::uint64_t>(fine.level()));
    const double half_sd = std::sqrt(fine.step() / 2.0);
    std::vector<Vec> dw;
    dw.reserve(fine.steps());
    for (const Vec& coarse : path.wiener_increments) {
        Vec first = 0.5 * coarse + half_sd * rng.normal_vec(static_cast<int>(coarse.size()));
        Vec second = coarse - first;
        dw.push_back(std::move(first));
        dw.push_back(std::move(second));
    }
    SimulatedPath out{fine, {}, path.seed, std::move(dw)};
    out.z = detail::run_euler(model, fine, path.z.front(), out.wiener_increments);
    return out;
}

} // namespace lap
