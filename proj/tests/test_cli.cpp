#include <lap/lap.hpp>

#include <gtest/gtest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace lap;
namespace fs = std::filesystem;

namespace {

Config parse(const std::string& text) {
    std::istringstream in(text);
    return Config::parse(in, "test.cfg");
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliRun {
    int code = -1;
    std::string output;
};

/// Runs the lap binary with `args`, capturing stdout and stderr.
CliRun run_lap(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "lap_cli_test.log";
    const std::string cmd = std::string(LAP_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lap_cli_" + name);
    fs::remove_all(p);
    return p;
}

const std::string configs = LAP_CONFIGS;

} // namespace

TEST(Config, SectionsKeysAndComments) {
    const auto c = parse("# header\n[model]\nkey = example1  # trailing\n\n[run]\nhorizon=4\nz0 = 1 2.5\n");
    EXPECT_EQ(c.str("model.key"), "example1");
    EXPECT_EQ(c.num("run.horizon", 0), 4.0);
    EXPECT_EQ(c.numbers("run.z0"), (std::vector<double>{1.0, 2.5}));
    EXPECT_EQ(c.line("run.horizon"), 6);
    EXPECT_EQ(c.num("run.level", 7), 7.0);
}

TEST(Config, ErrorsCarryLineNumbers) {
    const auto line_of = [](const std::string& text) {
        try {
            parse(text);
        } catch (const ConfigError& e) {
            return e.line();
        }
        return -1;
    };
    EXPECT_EQ(line_of("[model]\nkey = a\nnonsense\n"), 3);
    EXPECT_EQ(line_of("key = a\n"), 1);
    EXPECT_EQ(line_of("[model]\n[nosuch]\n"), 2);
    EXPECT_EQ(line_of("[model]\nkey = a\nkey = b\n"), 3);
    EXPECT_EQ(line_of("[run]\nhorizn = 3\n"), 2);
    EXPECT_EQ(line_of("[run\n"), 1);
}

TEST(Config, BadValuesPointAtTheirLine) {
    const auto c = parse("[model]\nkey = example1\n[run]\n\nlevel = 6.5\nhorizon = 4x\n");
    try {
        c.integer("run.level", 0);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 5);
    }
    try {
        c.num("run.horizon", 0);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 6);
    }
}

TEST(Pipeline, UnknownModelIsAConfigError) {
    try {
        load_setup(parse("[model]\nkey = example9\n"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 2);
    }
}

TEST(Pipeline, HorizonMustFitTheGrid) {
    EXPECT_THROW(load_setup(parse("[model]\nkey = example1\n[run]\nhorizon = 0.3\nlevel = 2\n")), ConfigError);
}

TEST(Pipeline, UserDefinedLinearModel) {
    auto s = load_setup(parse("[model]\nkey = linear\nhidden = 1\nsigma = 1 0 0 0.5\ndrift = -0.8 0 1 0\n"
                              "[run]\nhorizon = 2\nlevel = 4\nz0 = 0 0\n"));
    EXPECT_EQ(s.ex.model.hidden, 1);
    EXPECT_EQ(s.ex.model.observed, 1);
    const auto lf = certify_linear(s.ex.model.base);
    EXPECT_DOUBLE_EQ(lf.A(0, 0), -0.8);
    EXPECT_DOUBLE_EQ(lf.A(1, 0), 1.0);
    EXPECT_DOUBLE_EQ(lf.sigma(1, 1), 0.5);
    const auto obs = load_observations(s);
    EXPECT_EQ(obs.grid().nodes(), 33u);
}

TEST(Pipeline, ObservationFileIsResampledToTheRunLevel) {
    const fs::path dir = scratch("obs");
    fs::create_directories(dir);
    CsvTable t{{"t", "y"}, {}};
    for (int j = 0; j <= 8; ++j) t.rows.push_back({j / 4.0, 0.1 * j * j});
    write_csv((dir / "y.csv").string(), t);
    std::ofstream(dir / "run.cfg") << "[model]\nkey = example1\n[run]\nlevel = 4\n[data]\nobservations = y.csv\n";
    auto s = load_setup(Config::load((dir / "run.cfg").string()));
    const auto obs = load_observations(s);
    EXPECT_EQ(s.horizon, 2.0);
    EXPECT_EQ(obs.grid().level(), 4);
    EXPECT_EQ(obs.samples()[4][0], t.rows[1][1]);
    EXPECT_EQ(obs.samples()[32][0], t.rows[8][1]);
}

TEST(Pipeline, MalformedObservationFile) {
    const fs::path dir = scratch("badobs");
    fs::create_directories(dir);
    std::ofstream(dir / "y.csv") << "t,y\n0,1\n0.3,2\n";
    std::ofstream(dir / "run.cfg") << "[model]\nkey = example1\n[data]\nobservations = y.csv\n";
    auto s = load_setup(Config::load((dir / "run.cfg").string()));
    try {
        load_observations(s);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 4);
    }
}

TEST(Pipeline, PriorKinds) {
    auto s = load_setup(parse("[model]\nkey = example1\n[run]\nhorizon = 1\nlevel = 2\n"
                              "[prior]\nkind = gaussian\nmean = 0.5\nvariance = 2\n"));
    const auto obs = load_observations(s);
    const Prior p = build_prior(s, &obs);
    ASSERT_TRUE(p.gaussian.has_value());
    EXPECT_EQ(p.gaussian->mean[0], 0.5);
    EXPECT_EQ(p.gaussian->covariance(0, 0), 2.0);
    auto bad = load_setup(parse("[model]\nkey = example1\n[prior]\nkind = cauchy\n"));
    EXPECT_THROW(build_prior(bad, &obs), ConfigError);
}

TEST(Csv, RoundTripIsExact) {
    const fs::path dir = scratch("csv");
    fs::create_directories(dir);
    CsvTable t{{"t", "v"}, {{0.1, 1.0 / 3.0}, {1e-300, -2.718281828459045}, {5e20, 0.30000000000000004}}};
    write_csv((dir / "a.csv").string(), t);
    const auto back = read_csv((dir / "a.csv").string());
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
}

TEST(Cli, SimulateIsReproducible) {
    const auto a = scratch("sim_a"), b = scratch("sim_b");
    const CliRun r1 = run_lap("simulate " + configs + "/example1.cfg --seed 42 --out " + a.string());
    const CliRun r2 = run_lap("simulate " + configs + "/example1.cfg --seed 42 --out " + b.string());
    ASSERT_EQ(r1.code, 0) << r1.output;
    ASSERT_EQ(r2.code, 0) << r2.output;
    EXPECT_NE(r1.output.find("seed: 42"), std::string::npos);
    const std::string pa = read_file(a / "path.csv");
    EXPECT_FALSE(pa.empty());
    EXPECT_EQ(pa, read_file(b / "path.csv"));
    EXPECT_EQ(pa.substr(0, pa.find('\n')), "t,z1,z2");
}

TEST(Cli, Example4WritesHiddenAndObservedColumns) {
    const auto dir = scratch("sim4");
    const CliRun r = run_lap("simulate " + configs + "/example4.cfg --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = read_csv((dir / "path.csv").string());
    EXPECT_EQ(t.header, (std::vector<std::string>{"t", "z1", "z2", "z3"}));
}

TEST(Cli, MissingConfigExitsWithCode2AndNoOutput) {
    const auto dir = scratch("missing");
    const CliRun r = run_lap("fit /nonexistent/run.cfg --out " + dir.string());
    EXPECT_EQ(r.code, 2) << r.output;
    EXPECT_FALSE(fs::exists(dir));
}

TEST(Cli, ConfigErrorReportsTheLine) {
    const auto dir = scratch("badcfg");
    fs::create_directories(dir);
    std::ofstream(dir / "bad.cfg") << "[model]\nkey = example1\n[run]\nlevle = 3\n";
    const CliRun r = run_lap("fit " + (dir / "bad.cfg").string() + " --out " + (dir / "out").string());
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("bad.cfg:4"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(dir / "out"));
}

TEST(Cli, FitThenCovReportsActionResidualAndVerdict) {
    const auto dir = scratch("fitcov");
    const CliRun fit = run_lap("fit " + configs + "/linear_ou.cfg --out " + dir.string());
    ASSERT_EQ(fit.code, 0) << fit.output;
    EXPECT_NE(fit.output.find("action: "), std::string::npos);
    EXPECT_NE(fit.output.find("bcT_residual: "), std::string::npos);
    const CliRun cov = run_lap("cov " + configs + "/linear_ou.cfg --plot --out " + dir.string());
    ASSERT_EQ(cov.code, 0) << cov.output;
    EXPECT_NE(cov.output.find("verdict: local_min"), std::string::npos);
    const auto c = read_csv((dir / "cov.csv").string());
    const auto k = read_csv((dir / "smoother.csv").string());
    EXPECT_EQ(k.header, (std::vector<std::string>{"t", "smoother_mean", "smoother_var"}));
    ASSERT_EQ(c.rows.size(), k.rows.size());
    // The fitted path is the smoother mean of this linear model, up to the
    // O(h) gap between the spline-interpolated and the discrete problem.
    double e = 0, s = 0;
    for (std::size_t j = 0; j < c.rows.size(); ++j) {
        e += (c.rows[j][1] - k.rows[j][1]) * (c.rows[j][1] - k.rows[j][1]);
        s += k.rows[j][1] * k.rows[j][1];
    }
    EXPECT_LE(std::sqrt(e / s), 4.0 / 64);
    EXPECT_NE(read_file(dir / "plot_cov.gp").find("'cov.csv'"), std::string::npos);
}

TEST(Cli, CheckFlagsTheSaddle) {
    const auto dir = scratch("check");
    const CliRun r = run_lap("check " + configs + "/example3_smooth.cfg --out " + dir.string());
    EXPECT_EQ(r.code, 4) << r.output;
    EXPECT_NE(r.output.find("verdict: not_local_min"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "check.csv"));
}

TEST(Cli, PointProcessFit) {
    const auto dir = scratch("pp");
    const CliRun r = run_lap("ppfit " + configs + "/example5.cfg --level 6 --plot --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = read_csv((dir / "ppfit.csv").string());
    EXPECT_EQ(t.header, (std::vector<std::string>{"t", "x", "p", "segment_index"}));
    const auto times = read_event_times((dir / "events.txt").string());
    EXPECT_EQ(t.rows.back()[3], static_cast<double>(times.size()));
    // Events written by simulate feed back into ppfit through [data] events.
    std::ofstream(dir / "again.cfg") << "[model]\nkey = example5\n[run]\nhorizon = 20\nlevel = 6\n"
                                        "[data]\nevents = events.txt\n";
    const CliRun again = run_lap("ppfit " + (dir / "again.cfg").string() + " --out " + (dir / "again").string());
    ASSERT_EQ(again.code, 0) << again.output;
    EXPECT_EQ(read_file(dir / "ppfit.csv"), read_file(dir / "again" / "ppfit.csv"));
}

TEST(Cli, BallsTableMatchesTheFormula) {
    const auto dir = scratch("balls");
    const CliRun r = run_lap("balls --b 0.1 --dmax 10 --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto t = read_csv((dir / "balls.csv").string());
    ASSERT_EQ(t.rows.size(), 10u);
    for (const auto& row : t.rows) EXPECT_EQ(row[1], balls_mean_trials(0.1, static_cast<int>(row[0])));
    EXPECT_EQ(run_lap("balls --b 1.5 --out " + dir.string()).code, 2);
}

TEST(Cli, ConvergeWritesTheReport) {
    const auto dir = scratch("converge");
    const CliRun r = run_lap("converge " + configs + "/example1_converge.cfg --out " + dir.string());
    EXPECT_EQ(r.code, 0) << r.output;
    const auto t = read_csv((dir / "convergence.csv").string());
    EXPECT_EQ(t.header, (std::vector<std::string>{"n", "discrete_min", "continuous_min", "gap"}));
    EXPECT_EQ(t.rows.size(), 5u);
}

TEST(Cli, VerifySubsetWithJsonReport) {
    const auto dir = scratch("verify");
    const CliRun r = run_lap("verify --only A7 A8 --json report.json --out " + dir.string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("A7 PASS"), std::string::npos);
    const auto j = nlohmann::json::parse(read_file(dir / "report.json"));
    ASSERT_EQ(j.size(), 2u);
    EXPECT_EQ(j[0]["id"], "A7");
    EXPECT_TRUE(j[1]["pass"].get<bool>());
    EXPECT_EQ(run_lap("verify --only A10").code, 2);
}
