/// @file pipeline.hpp Turns a run configuration into a model, grid, prior and
/// data (read from files or simulated from the seed).

#pragma once

#include "config.hpp"
#include "csv.hpp"
#include "pointprocess.hpp"
#include "registry.hpp"
#include "simulate.hpp"
#include "variational.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>

namespace lap {

struct RunSetup {
    Config cfg;
    Example ex;
    double horizon = 0;
    int level = 0;
    std::uint64_t seed = 1;
    Vec z0;
    std::filesystem::path base_dir;

    TimeGrid grid() const { return TimeGrid(horizon, level); }
    /// Data paths in the config are relative to the config file.
    std::string data_path(const std::string& key) const {
        const std::filesystem::path p = cfg.str(key);
        return (p.is_absolute() ? p : base_dir / p).string();
    }
};

namespace detail {

inline Mat square_from(const Config& c, const std::string& key, int d) {
    const auto v = c.numbers(key);
    if (static_cast<int>(v.size()) != d * d) c.fail(key, "'" + key + "' needs " + std::to_string(d * d) + " entries");
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = v[static_cast<std::size_t>(i * d + j)];
    return m;
}

inline Vec vec_from(const std::vector<double>& v) {
    Vec out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[i];
    return out;
}

} // namespace detail

/// Registered example by [model] key, with optional parameter overrides, or a
/// user-defined linear model (key = linear; sigma, drift row-major, hidden).
inline Example build_model(const Config& c) {
    const std::string key = c.str("model.key");
    if (key.empty()) throw ConfigError(c.source(), 0, "missing [model] key");
    try {
        if (key == "linear") {
            const auto s = c.numbers("model.sigma");
            const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(s.size()))));
            if (d < 1 || d > kMaxDim) c.fail("model.sigma", "linear model needs a square sigma of size 1..8");
            const Mat sigma = detail::square_from(c, "model.sigma", d);
            const Mat A = detail::square_from(c, "model.drift", d);
            const Vec offset = c.has("model.offset") ? detail::vec_from(c.numbers("model.offset")) : Vec(Vec::Zero(d));
            if (offset.size() != d) c.fail("model.offset", "offset needs " + std::to_string(d) + " entries");
            const int hidden = c.integer("model.hidden", 1);
            if (hidden < 1 || hidden > d) c.fail("model.hidden", "hidden must be in 1.." + std::to_string(d));
            return {"linear", PartitionedModel(linear_diffusion(sigma, A, offset), hidden), 100.0, 8, Vec::Zero(d)};
        }
        if (key == "example3") {
            return examples::example3(c.num("model.sigma_x", 3.0), c.num("model.b", 12.0),
                                      c.num("model.a", 2 * std::numbers::pi / 5), c.num("model.lambda", 0.05));
        }
        if (key == "example5") return examples::example5(c.num("model.sigma", 0.3), c.num("model.mu", 0.0));
        return example_by_key(key);
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(c.source(), c.line("model.key"), e.what());
    }
}

inline RunSetup load_setup(const Config& c, std::optional<int> level = {}, std::optional<std::uint64_t> seed = {}) {
    RunSetup s;
    s.cfg = c;
    s.base_dir = std::filesystem::path(c.source()).parent_path();
    s.ex = build_model(c);
    s.horizon = c.num("run.horizon", s.ex.horizon);
    s.level = level ? *level : c.integer("run.level", s.ex.level);
    const double sd = c.num("run.seed", 1);
    if (sd < 0 || sd != std::floor(sd)) c.fail("run.seed", "seed must be a nonnegative integer");
    s.seed = seed ? *seed : static_cast<std::uint64_t>(sd);
    s.z0 = c.has("run.z0") ? detail::vec_from(c.numbers("run.z0")) : s.ex.z0;
    if (s.z0.size() != s.ex.model.base.dim()) c.fail("run.z0", "z0 needs " + std::to_string(s.ex.model.base.dim()) + " entries");
    if (s.level < 0 || s.level > 20) throw ConfigError(c.source(), c.line("run.level"), "level must be in 0..20");
    try {
        (void)s.grid();
    } catch (const Error& e) {
        throw ConfigError(c.source(), c.line("run.horizon"), e.what());
    }
    return s;
}

/// Observed samples from [data] observations (columns t, y... or t, z...),
/// resampled to the run level, or simulated from the seed.
inline ObservationSeries load_observations(RunSetup& s) {
    const auto& m = s.ex.model;
    if (!s.cfg.has("data.observations")) {
        const auto sim = euler_maruyama(m.base, s.grid(), s.seed, s.z0);
        return ObservationSeries::from_joint(s.grid(), sim.z, m.hidden);
    }
    CsvTable t;
    try {
        t = read_csv(s.data_path("data.observations"));
    } catch (const Error& e) {
        s.cfg.fail("data.observations", e.what());
    }
    const int cols = static_cast<int>(t.header.size()) - 1;
    if (cols != m.observed && cols != m.base.dim())
        s.cfg.fail("data.observations", "observation file needs " + std::to_string(m.observed) + " or " +
                                            std::to_string(m.base.dim()) + " value columns");
    if (t.rows.size() < 2) s.cfg.fail("data.observations", "observation file needs at least two rows");
    const double h = t.rows[1][0] - t.rows[0][0];
    const double T = t.rows.back()[0] - t.rows.front()[0];
    const int lvl = static_cast<int>(std::lround(-std::log2(h)));
    if (!(h > 0) || std::abs(std::ldexp(1.0, -lvl) - h) > 1e-9 * h)
        s.cfg.fail("data.observations", "sample spacing must be a power of two");
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < t.rows.size(); ++j) {
        if (std::abs(t.rows[j][0] - t.rows[0][0] - static_cast<double>(j) * h) > 1e-9)
            s.cfg.fail("data.observations", "row " + std::to_string(j + 2) + " is off the uniform grid");
        Vec y(m.observed);
        for (int i = 0; i < m.observed; ++i) y[i] = t.rows[j][static_cast<std::size_t>(1 + cols - m.observed + i)];
        ys.push_back(y);
    }
    if (s.cfg.has("run.horizon") && std::abs(s.cfg.num("run.horizon", T) - T) > 1e-9)
        s.cfg.fail("run.horizon", "horizon does not match the observation file");
    s.horizon = T;
    const ObservationSeries data(TimeGrid(T, lvl), ys);
    return lvl == s.level ? data : data.resample(s.grid());
}

/// Prior from [prior]: default, gaussian (mean, variance), flat, lognormal (mean, variance of log x).
inline Prior build_prior(const RunSetup& s, const ObservationSeries* obs, const EventRecord* events = nullptr) {
    const auto& c = s.cfg;
    const int n = s.ex.model.hidden;
    const std::string kind = c.str("prior.kind", "default");
    const double var = c.num("prior.variance", kind == "lognormal" ? 1.0 : 10.0);
    if (!(var > 0)) c.fail("prior.variance", "variance must be positive");
    if (kind == "default") {
        if (events) return Prior::lognormal_intensity(std::log(std::max(events->rate(), 1.0 / events->horizon)), 1.0);
        if (s.ex.point_process) return Prior::lognormal_intensity(std::log(s.z0[0]), 1.0);
        return default_prior(s.ex.model, *obs);
    }
    if (kind == "gaussian") {
        const Vec mean = c.has("prior.mean") ? detail::vec_from(c.numbers("prior.mean")) : Vec(Vec::Zero(n));
        if (mean.size() != n) c.fail("prior.mean", "mean needs " + std::to_string(n) + " entries");
        return Prior::isotropic_gaussian(mean, var);
    }
    if (kind == "flat") return Prior::flat(n);
    if (kind == "lognormal") {
        if (n != 1) c.fail("prior.kind", "lognormal prior needs a scalar hidden state");
        return Prior::lognormal_intensity(c.num("prior.mean", 0.0), var);
    }
    c.fail("prior.kind", "unknown prior kind '" + kind + "'");
}

/// Explicit starts from [solve] starts (groups of `hidden` numbers) or the automatic set.
inline std::optional<std::vector<Vec>> solve_starts(const RunSetup& s) {
    const auto& c = s.cfg;
    const std::string v = c.str("solve.starts", "auto");
    if (v == "auto") return std::nullopt;
    const auto xs = c.numbers("solve.starts");
    const int n = s.ex.model.hidden;
    if (xs.empty() || xs.size() % static_cast<std::size_t>(n))
        c.fail("solve.starts", "starts needs a multiple of " + std::to_string(n) + " numbers");
    std::vector<Vec> out;
    for (std::size_t i = 0; i < xs.size(); i += static_cast<std::size_t>(n))
        out.push_back(detail::vec_from(std::vector<double>(xs.begin() + static_cast<std::ptrdiff_t>(i),
                                                           xs.begin() + static_cast<std::ptrdiff_t>(i) + n)));
    return out;
}

inline SolveOptions solve_options(const RunSetup& s) {
    SolveOptions o;
    o.tol = s.cfg.num("solve.tol", o.tol);
    if (!(o.tol > 0)) s.cfg.fail("solve.tol", "tol must be positive");
    const std::string fm = s.cfg.str("solve.force_multiple", "false");
    if (fm != "true" && fm != "false") s.cfg.fail("solve.force_multiple", "expected true or false");
    o.force_multiple = fm == "true";
    return o;
}

/// Events from [data] events, or a Cox sample driven by the intensity model.
struct EventData {
    EventRecord events;
    std::optional<CoxSample> simulated;
};

inline EventData load_events(const RunSetup& s) {
    if (!s.ex.point_process) throw ConfigError(s.cfg.source(), s.cfg.line("model.key"), "model is not a point-process example");
    if (!s.cfg.has("data.events")) {
        auto cs = simulate_cox(s.ex.model, s.grid(), s.seed, s.z0[0]);
        return {cs.events, cs};
    }
    try {
        return {EventRecord(s.horizon, read_event_times(s.data_path("data.events"))), std::nullopt};
    } catch (const Error& e) {
        s.cfg.fail("data.events", e.what());
    }
}

} // namespace lap
