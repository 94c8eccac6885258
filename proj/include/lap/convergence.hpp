/// @file convergence.hpp Refinement study of the discrete infimum against the
/// continuous least action.

#pragma once

#include "action.hpp"
#include "variational.hpp"

#include <string>
#include <vector>

namespace lap {

struct ConvergenceRow {
    int level = 0;
    double discrete_min = 0;  ///< inf -lambda_n
    double gap = 0;           ///< |discrete_min - continuous_min|
    bool converged = false;
    std::string note;
};

struct ConvergenceReport {
    std::vector<ConvergenceRow> rows;
    double continuous_min = 0;  ///< inf -Lambda from the continuous solver
    int reference_level = 0;
    bool pass = false;
    std::string note;
};

struct ConvergenceOptions {
    /// Level of the continuous reference solve; default is two above the finest level.
    int reference_level = -1;
    double monotone_slack = 1e-3;
    double relative_target = 1e-2;
    double absolute_target = 1e-2;
};

/// Minimizes -lambda_n at every level (observations resampled from `obs`) and
/// compares with the continuous least action on a finer grid. Passes when the
/// gaps never grow by more than the slack and the last one is below
/// relative_target * |inf -Lambda| + absolute_target.
inline ConvergenceReport theorem1_convergence_check(const PartitionedModel& model, const Prior& prior,
                                                    const ObservationSeries& obs, const std::vector<int>& levels,
                                                    const ConvergenceOptions& opt = {}) {
    ConvergenceReport rep;
    if (levels.empty()) throw Error("convergence check: no levels given");
    for (std::size_t i = 1; i < levels.size(); ++i)
        if (levels[i] <= levels[i - 1]) throw Error("convergence check: levels must be increasing");
    const double T = obs.grid().horizon();

    rep.reference_level = opt.reference_level >= 0 ? opt.reference_level : levels.back() + 2;
    const TimeGrid ref_grid(T, rep.reference_level);
    const auto ref_obs = obs.resample(ref_grid);
    const auto cont = solve_least_action(ref_obs, model, prior, ref_grid);
    if (!cont.converged) {
        rep.note = "continuous reference did not converge";
        return rep;
    }
    rep.continuous_min = cont.action;

    bool all_converged = true;
    for (int level : levels) {
        ConvergenceRow row;
        row.level = level;
        try {
            const TimeGrid g(T, level);
            // Start from the continuous path restricted to this grid.
            std::vector<Vec> init;
            const std::size_t stride = std::size_t{1} << std::max(0, rep.reference_level - level);
            for (std::size_t j = 0; j < g.nodes(); ++j)
                init.push_back(level <= rep.reference_level ? cont.path.x[j * stride] : cont.path.x.back());
            const auto m = minimize_discrete(obs.resample(g), model, prior, g, init);
            row.discrete_min = m.value;
            row.gap = std::abs(m.value - rep.continuous_min);
            row.converged = m.converged;
            if (!m.converged) row.note = "discrete minimizer hit the iteration cap";
        } catch (const Error& e) {
            row.note = e.what();
        }
        all_converged = all_converged && row.converged;
        rep.rows.push_back(row);
    }

    if (levels.size() < 2) {
        rep.note = "insufficient levels";
        return rep;
    }
    if (!all_converged) {
        rep.note = "solver failure at some level";
        return rep;
    }
    bool monotone = true;
    for (std::size_t i = 1; i < rep.rows.size(); ++i)
        monotone = monotone && rep.rows[i].gap <= rep.rows[i - 1].gap + opt.monotone_slack;
    const double target = opt.relative_target * std::abs(rep.continuous_min) + opt.absolute_target;
    const bool small = rep.rows.back().gap < target;
    rep.pass = monotone && small;
    if (!monotone) rep.note = "gap increased between levels";
    else if (!small) rep.note = "final gap above target";
    return rep;
}

} // namespace lap
