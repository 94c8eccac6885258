// lap: command-line driver for simulation, least-action fits, fluctuation
// laws, local-minimum checks, point-process fits and the acceptance suite.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration or input error,
// 3 solver not converged (or check failed), 4 verdict not_local_min.

#include <lap/acceptance.hpp>
#include <lap/convergence.hpp>
#include <lap/oracle.hpp>
#include <lap/pipeline.hpp>
#include <lap/secondorder.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace lap;

namespace {

constexpr int kExitRuntime = 1, kExitConfig = 2, kExitNotConverged = 3, kExitNotLocalMin = 4;

struct Common {
    std::string config;
    std::string out = ".";
    long long seed = -1;
    int level = -1;
    bool plot = false;
};

void add_common(CLI::App* cmd, Common& c, bool needs_config = true) {
    if (needs_config) cmd->add_option("config", c.config, "Run configuration file")->required();
    cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
    cmd->add_option("--seed", c.seed, "Seed, overrides [run] seed")->check(CLI::NonNegativeNumber);
    cmd->add_option("--level", c.level, "Grid level n (h = 2^-n), overrides [run] level")->check(CLI::Range(0, 20));
    cmd->add_flag("--plot", c.plot, "Also write a gnuplot script for the CSV output");
}

RunSetup setup_from(const Common& c) {
    const Config cfg = Config::load(c.config);
    std::optional<int> level;
    std::optional<std::uint64_t> seed;
    if (c.level >= 0) level = c.level;
    if (c.seed >= 0) seed = static_cast<std::uint64_t>(c.seed);
    return load_setup(cfg, level, seed);
}

/// Output directory, created on first write so failed runs leave nothing.
struct Output {
    fs::path dir;

    std::string path(const std::string& name) const {
        fs::create_directories(dir);
        return (dir / name).string();
    }
    void csv(const std::string& name, const CsvTable& t) const {
        write_csv(path(name), t);
        std::cout << "wrote " << (dir / name).string() << "\n";
    }
    void text(const std::string& name, const std::string& body) const {
        std::ofstream f(path(name));
        if (!f) throw Error("cannot write " + (dir / name).string());
        f << body;
        std::cout << "wrote " << (dir / name).string() << "\n";
    }
};

/// gnuplot script drawing columns of `csv` against its first column.
std::string gnuplot_script(const std::string& csv, const std::string& png, const std::string& title,
                           const std::vector<int>& columns, const std::string& extra = "") {
    std::ostringstream s;
    s << "set datafile separator ','\n"
      << "set key autotitle columnhead\n"
      << "set terminal pngcairo size 1000,500\n"
      << "set output '" << png << "'\n"
      << "set title '" << title << "'\n"
      << "set xlabel 't'\n";
    s << "plot ";
    for (std::size_t i = 0; i < columns.size(); ++i)
        s << (i ? ", \\\n     " : "") << "'" << csv << "' using 1:" << columns[i] << " with lines";
    s << extra << "\n";
    return s.str();
}

std::vector<int> column_range(int from, int count) {
    std::vector<int> v;
    for (int i = 0; i < count; ++i) v.push_back(from + i);
    return v;
}

CsvTable path_table(const TimeGrid& g, const std::vector<Vec>& z, const std::string& prefix) {
    CsvTable t;
    t.header.push_back("t");
    const int d = static_cast<int>(z.front().size());
    for (int i = 0; i < d; ++i) t.header.push_back(prefix + std::to_string(i + 1));
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        std::vector<double> row{g.time(j)};
        for (int i = 0; i < d; ++i) row.push_back(z[j][i]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

int cmd_simulate(const Common& c) {
    RunSetup s = setup_from(c);
    const Output out{c.out};
    const TimeGrid g = s.grid();
    std::cout << "seed: " << s.seed << "\n";
    if (s.ex.point_process) {
        const auto cs = simulate_cox(s.ex.model, g, s.seed, s.z0[0]);
        CsvTable t{{"t", "x"}, {}};
        for (std::size_t j = 0; j < g.nodes(); ++j) t.rows.push_back({g.time(j), cs.intensity[j]});
        out.csv("intensity.csv", t);
        write_event_times(out.path("events.txt"), cs.events.times);
        std::cout << "wrote " << (out.dir / "events.txt").string() << "\nevents: " << cs.events.count() << "\n";
        if (c.plot)
            out.text("plot_simulate.gp",
                     gnuplot_script("intensity.csv", "simulate.png", s.ex.key + " intensity", {2},
                                    ", \\\n     'events.txt' using 1:(0) with points pt 2 title 'events'"));
        return 0;
    }
    const auto sim = euler_maruyama(s.ex.model.base, g, s.seed, s.z0);
    out.csv("path.csv", path_table(g, sim.z, "z"));
    if (c.plot)
        out.text("plot_simulate.gp", gnuplot_script("path.csv", "simulate.png", s.ex.key + " simulated path",
                                                    column_range(2, s.ex.model.base.dim())));
    return 0;
}

struct Fitted {
    RunSetup setup;
    ObservationSeries obs;
    Prior prior;
    LeastActionPath xstar;
};

Fitted fit(const Common& c) {
    RunSetup s = setup_from(c);
    if (s.ex.point_process) throw ConfigError(c.config, s.cfg.line("model.key"), "use ppfit for point-process models");
    ObservationSeries obs = load_observations(s);
    Prior prior = build_prior(s, &obs);
    const auto starts = solve_starts(s);
    const auto opt = solve_options(s);
    std::cout << "seed: " << s.seed << "\n";
    auto xs = solve_least_action(obs, s.ex.model, prior, s.grid(), starts, opt);
    return {std::move(s), std::move(obs), std::move(prior), std::move(xs)};
}

void report_fit(const Fitted& f) {
    const auto& x = f.xstar;
    std::cout << "model: " << f.setup.ex.key << "\n"
              << "horizon: " << f.setup.horizon << " level: " << f.setup.level << "\n"
              << "converged: " << (x.converged ? "yes" : "no") << "\n"
              << "action: " << format_number(x.action) << "\n"
              << "bc0_residual: " << x.residual_bc0.cwiseAbs().maxCoeff() << "\n"
              << "bcT_residual: " << x.residual_bcT.cwiseAbs().maxCoeff() << "\n"
              << "starts: " << x.starts_tried << " segments: " << x.segments << "\n";
}

CsvTable fit_table(const LeastActionPath& x) {
    const int n = x.path.dim();
    CsvTable t;
    t.header.push_back("t");
    for (int i = 0; i < n; ++i) t.header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < n; ++i) t.header.push_back("p" + std::to_string(i + 1));
    for (std::size_t j = 0; j < x.path.size(); ++j) {
        std::vector<double> row{x.path.grid.time(j)};
        for (int i = 0; i < n; ++i) row.push_back(x.path.x[j][i]);
        for (int i = 0; i < n; ++i) row.push_back(x.path.p[j][i]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

int cmd_fit(const Common& c) {
    const Fitted f = fit(c);
    report_fit(f);
    const Output out{c.out};
    out.csv("fit.csv", fit_table(f.xstar));
    if (c.plot) {
        const int n = f.xstar.path.dim();
        std::string extra;
        const auto& ys = f.obs.samples();
        if (!ys.empty() && ys.front().size() > 0) {
            out.csv("observed.csv", path_table(f.obs.grid(), ys, "y"));
            extra = ", \\\n     'observed.csv' using 1:2 with lines lc rgb 'gray'";
        }
        out.text("plot_fit.gp", gnuplot_script("fit.csv", "fit.png", "least-action path", column_range(2, n), extra));
    }
    return f.xstar.converged ? 0 : kExitNotConverged;
}

int cmd_cov(const Common& c) {
    const Fitted f = fit(c);
    report_fit(f);
    if (!f.xstar.converged) return kExitNotConverged;
    const auto law = second_order_law(f.xstar, f.obs, f.setup.ex.model, f.prior);
    const auto check = check_local_min(f.xstar, f.obs, f.setup.ex.model, f.prior);
    std::cout << "verdict: " << to_string(check.verdict) << "\n";
    const int n = f.xstar.path.dim();
    CsvTable t;
    t.header.push_back("t");
    for (int i = 0; i < n; ++i) t.header.push_back("x" + std::to_string(i + 1));
    for (int i = 0; i < n; ++i) t.header.push_back("V" + std::to_string(i + 1) + std::to_string(i + 1));
    for (std::size_t j = 0; j < f.xstar.path.size(); ++j) {
        std::vector<double> row{f.xstar.path.grid.time(j)};
        for (int i = 0; i < n; ++i) row.push_back(f.xstar.path.x[j][i]);
        for (int i = 0; i < n; ++i) row.push_back(law.V[j](i, i));
        t.rows.push_back(std::move(row));
    }
    const Output out{c.out};
    out.csv("cov.csv", t);
    std::cout << "V_T: " << format_number(law.V.back()(0, 0)) << "\n";

    // Exact smoother alongside, when the model is linear-Gaussian.
    bool smoother = false;
    try {
        const auto k = kalman_rts(f.setup.ex.model, f.obs, f.prior, f.setup.grid());
        CsvTable st;
        st.header.push_back("t");
        for (int i = 0; i < n; ++i) st.header.push_back(n == 1 ? "smoother_mean" : "smoother_mean" + std::to_string(i + 1));
        for (int i = 0; i < n; ++i) st.header.push_back(n == 1 ? "smoother_var" : "smoother_var" + std::to_string(i + 1));
        for (std::size_t j = 0; j < k.mean.size(); ++j) {
            std::vector<double> row{f.setup.grid().time(j)};
            for (int i = 0; i < n; ++i) row.push_back(k.mean[j][i]);
            for (int i = 0; i < n; ++i) row.push_back(k.cov[j](i, i));
            st.rows.push_back(std::move(row));
        }
        out.csv("smoother.csv", st);
        smoother = true;
    } catch (const Error& e) {
        std::cout << "smoother: skipped (" << e.what() << ")\n";
    }
    if (c.plot) {
        std::ostringstream s;
        s << "set datafile separator ','\nset key autotitle columnhead\n"
          << "set terminal pngcairo size 1000,500\nset output 'cov.png'\n"
          << "set title 'least-action path with 2 sd band'\nset xlabel 't'\n"
          << "plot 'cov.csv' using 1:($2-2*sqrt($" << 2 + n << ")):($2+2*sqrt($" << 2 + n
          << ")) with filledcurves fs transparent solid 0.3 title 'x1 +- 2 sd', \\\n"
          << "     'cov.csv' using 1:2 with lines title 'x1'";
        if (smoother) s << ", \\\n     'smoother.csv' using 1:2 with lines dt 2 title 'smoother mean'";
        s << "\n";
        out.text("plot_cov.gp", s.str());
    }
    return 0;
}

int cmd_check(const Common& c) {
    const Fitted f = fit(c);
    report_fit(f);
    if (!f.xstar.converged) return kExitNotConverged;
    const auto rep = check_local_min(f.xstar, f.obs, f.setup.ex.model, f.prior);
    std::cout << "verdict: " << to_string(rep.verdict) << "\n"
              << "min_det_ratio: " << rep.min_det_ratio << "\n"
              << "sign_change: " << (rep.F.sign_change ? "yes" : "no") << "\n";
    CsvTable t{{"t", "det_sign", "log_abs_det"}, {}};
    for (std::size_t j = 0; j < rep.F.log_abs_det.size(); ++j)
        t.rows.push_back({f.setup.grid().time(j), static_cast<double>(rep.F.det_sign[j]), rep.F.log_abs_det[j]});
    const Output out{c.out};
    out.csv("check.csv", t);
    if (c.plot)
        out.text("plot_check.gp", gnuplot_script("check.csv", "check.png", "log |det F|", {3}));
    return rep.verdict == Verdict::not_local_min ? kExitNotLocalMin : 0;
}

int cmd_ppfit(const Common& c) {
    RunSetup s = setup_from(c);
    const EventData ed = load_events(s);
    const Prior prior = build_prior(s, nullptr, &ed.events);
    std::cout << "seed: " << s.seed << "\n";
    const auto sol = pp_solve(ed.events, s.ex.model, prior, s.grid());
    std::cout << "events: " << ed.events.count() << "\n"
              << "converged: " << (sol.converged ? "yes" : "no") << "\n"
              << "x0: " << format_number(sol.x0) << "\n"
              << "action: " << format_number(sol.action) << "\n"
              << "residuals: bc0 " << sol.residuals.bc0 << " el " << sol.residuals.el << " jump "
              << sol.residuals.jump << " bcT " << sol.residuals.bcT << "\n";
    if (!sol.note.empty()) std::cout << "note: " << sol.note << "\n";
    const Output out{c.out};
    CsvTable t{{"t", "x", "p", "segment_index"}, {}};
    for (std::size_t k = 0; k < sol.path.segments.size(); ++k) {
        const auto& seg = sol.path.segments[k];
        for (std::size_t j = 0; j < seg.t.size(); ++j)
            t.rows.push_back({seg.t[j], seg.x[j], seg.p[j], static_cast<double>(k)});
    }
    if (!sol.path.segments.empty()) out.csv("ppfit.csv", t);
    if (ed.simulated) {
        CsvTable it{{"t", "x"}, {}};
        const TimeGrid g = s.grid();
        for (std::size_t j = 0; j < g.nodes(); ++j) it.rows.push_back({g.time(j), ed.simulated->intensity[j]});
        out.csv("intensity.csv", it);
        write_event_times(out.path("events.txt"), ed.events.times);
        std::cout << "wrote " << (out.dir / "events.txt").string() << "\n";
    }
    if (c.plot && !sol.path.segments.empty()) {
        std::string extra;
        if (ed.simulated) extra += ", \\\n     'intensity.csv' using 1:2 with lines dt 2 title 'true intensity'";
        out.text("plot_ppfit.gp", gnuplot_script("ppfit.csv", "ppfit.png", "point-process least-action intensity",
                                                 {2}, extra));
    }
    return sol.converged ? 0 : kExitNotConverged;
}

int cmd_converge(const Common& c, const std::vector<int>& cli_levels) {
    RunSetup s = setup_from(c);
    if (s.ex.point_process) throw ConfigError(c.config, s.cfg.line("model.key"), "convergence check needs an observed model");
    const ObservationSeries obs = load_observations(s);
    const Prior prior = build_prior(s, &obs);
    std::vector<int> levels = cli_levels;
    if (levels.empty())
        for (double v : s.cfg.numbers("check.levels")) levels.push_back(static_cast<int>(v));
    if (levels.empty()) levels = {4, 5, 6, 7, 8};
    std::cout << "seed: " << s.seed << "\n";
    const auto rep = theorem1_convergence_check(s.ex.model, prior, obs, levels);
    CsvTable t{{"n", "discrete_min", "continuous_min", "gap"}, {}};
    for (const auto& r : rep.rows) {
        t.rows.push_back({static_cast<double>(r.level), r.discrete_min, rep.continuous_min, r.gap});
        std::cout << "n=" << r.level << " discrete_min=" << format_number(r.discrete_min) << " gap=" << r.gap
                  << (r.note.empty() ? "" : " (" + r.note + ")") << "\n";
    }
    std::cout << "continuous_min: " << format_number(rep.continuous_min) << "\n"
              << (rep.pass ? "PASS" : "FAIL") << (rep.note.empty() ? "" : " (" + rep.note + ")") << "\n";
    const Output out{c.out};
    out.csv("convergence.csv", t);
    if (c.plot) {
        std::ostringstream s2;
        s2 << "set datafile separator ','\nset key autotitle columnhead\n"
           << "set terminal pngcairo size 800,500\nset output 'convergence.png'\n"
           << "set logscale y\nset xlabel 'n'\n"
           << "plot 'convergence.csv' using 1:4 with linespoints title 'gap'\n";
        out.text("plot_convergence.gp", s2.str());
    }
    return rep.pass ? 0 : kExitNotConverged;
}

int cmd_balls(const Common& c, double b, int dmax) {
    if (!(b > 0 && b <= 1)) throw ConfigError("--b", 0, "radius must be in (0, 1]");
    CsvTable t{{"d", "trials"}, {}};
    std::cout << "d trials\n";
    for (int d = 1; d <= dmax; ++d) {
        const double v = balls_mean_trials(b, d);
        t.rows.push_back({static_cast<double>(d), v});
        std::cout << d << " " << format_number(v) << "\n";
    }
    const Output out{c.out};
    out.csv("balls.csv", t);
    if (c.plot) {
        out.text("plot_balls.gp", "set datafile separator ','\nset key autotitle columnhead\n"
                                  "set terminal pngcairo size 800,500\nset output 'balls.png'\n"
                                  "set logscale y\nset xlabel 'd'\n"
                                  "plot 'balls.csv' using 1:2 with linespoints title 'mean trials'\n");
    }
    return 0;
}

int cmd_verify(const Common& c, const std::vector<std::string>& only, const std::string& json_path) {
    std::vector<std::string> ids = only.empty() ? acceptance_ids() : only;
    const auto known = acceptance_ids();
    for (const auto& id : ids)
        if (std::find(known.begin(), known.end(), id) == known.end())
            throw ConfigError("--only", 0, "unknown criterion '" + id + "'");
    nlohmann::json report = nlohmann::json::array();
    int failed = 0;
    for (const auto& id : ids) {
        const auto r = run_criterion(id);
        std::cout << format_result(r) << std::endl;
        if (!r.pass()) ++failed;
        report.push_back({{"id", r.id},
                          {"title", r.title},
                          {"pass", r.pass()},
                          {"met", r.met},
                          {"seconds", r.seconds},
                          {"time_limit", r.time_limit},
                          {"detail", r.detail}});
    }
    std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << "\n";
    if (!json_path.empty()) {
        const Output out{c.out};
        out.text(json_path, report.dump(2) + "\n");
    }
    return failed ? kExitRuntime : 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"least-action paths of partially observed diffusions"};
    app.require_subcommand(1);

    Common c;
    auto* sim = app.add_subcommand("simulate", "Simulate a model path (or a Cox sample) from its config");
    add_common(sim, c);
    auto* fitc = app.add_subcommand("fit", "Least-action path of the hidden state");
    add_common(fitc, c);
    auto* cov = app.add_subcommand("cov", "Gaussian fluctuation variance around the least-action path");
    add_common(cov, c);
    auto* chk = app.add_subcommand("check", "Conjugate-point test of the least-action path");
    add_common(chk, c);
    auto* pp = app.add_subcommand("ppfit", "Least-action intensity from point-process events");
    add_common(pp, c);
    std::vector<int> levels;
    auto* conv = app.add_subcommand("converge", "Discrete infimum against the continuous least action per level");
    add_common(conv, c);
    conv->add_option("--levels", levels, "Grid levels, overrides [check] levels");
    double b = 0.1;
    int dmax = 10;
    auto* balls = app.add_subcommand("balls", "Mean number of uniform trials to hit a ball of radius b");
    add_common(balls, c, false);
    balls->add_option("--b", b, "Ball radius in (0, 1]")->capture_default_str();
    balls->add_option("--dmax", dmax, "Largest dimension")->capture_default_str()->check(CLI::Range(1, 1000));
    std::vector<std::string> only;
    std::string json;
    auto* ver = app.add_subcommand("verify", "Run the acceptance criteria");
    add_common(ver, c, false);
    ver->add_option("--only", only, "Criteria to run, e.g. A1 A7");
    ver->add_option("--json", json, "Also write a JSON report with this name under --out");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*sim) return cmd_simulate(c);
        if (*fitc) return cmd_fit(c);
        if (*cov) return cmd_cov(c);
        if (*chk) return cmd_check(c);
        if (*pp) return cmd_ppfit(c);
        if (*conv) return cmd_converge(c, levels);
        if (*balls) return cmd_balls(c, b, dmax);
        if (*ver) return cmd_verify(c, only, json);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitRuntime;
}
