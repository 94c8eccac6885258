#include <lap/random.hpp>
#include <lap/registry.hpp>
#include <lap/secondorder.hpp>
#include <lap/simulate.hpp>
#include <lap/variational.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace lap;

namespace {

Mat scalar(double v) { return Mat::Constant(1, 1, v); }

PartitionedModel hidden_bm() {
    return PartitionedModel(linear_diffusion(Mat::Identity(1, 1), Mat::Zero(1, 1)), 1);
}

struct Solved {
    Example ex;
    TimeGrid grid;
    ObservationSeries obs;
    Prior prior;
    LeastActionPath xstar;
};

Solved solved(const std::string& key, double T, int level, std::uint64_t seed) {
    Example ex = example_by_key(key);
    const TimeGrid g(T, level);
    const auto sim = euler_maruyama(ex.model.base, g, seed, ex.z0);
    auto obs = ObservationSeries::from_joint(g, sim.z, ex.model.hidden);
    Prior prior = default_prior(ex.model, obs);
    auto xstar = solve_least_action(obs, ex.model, prior, g);
    return {ex, g, obs, prior, xstar};
}

double sup_diff(const std::vector<Mat>& a, const std::vector<Mat>& b) {
    double worst = 0;
    for (std::size_t j = 0; j < a.size(); ++j) worst = std::max(worst, (a[j] - b[j]).cwiseAbs().maxCoeff());
    return worst;
}

RiccatiSolution zero_theta(const TimeGrid& g) {
    return {std::vector<Mat>(g.nodes(), scalar(0)), std::vector<Mat>(g.nodes(), scalar(0))};
}

} // namespace

TEST(ExtractABq, HiddenBrownianMotion) {
    const TimeGrid g(2.0, 4);
    const auto none = ObservationSeries::none(g);
    const Prior prior = Prior::isotropic_gaussian(Vec::Constant(1, 0.5), 1.0);
    const auto xstar = solve_least_action(none, hidden_bm(), prior, g);
    const auto c = extract_ABq(xstar, none, hidden_bm());
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        EXPECT_NEAR(c.A[j](0, 0), 0.0, 1e-12);
        EXPECT_NEAR(c.B[j](0, 0), 0.0, 1e-12);
        EXPECT_NEAR(c.q[j](0, 0), 1.0, 1e-12);
    }
}

TEST(ExtractABq, LinearModelGivesConstantCoefficients) {
    const auto s = solved("example1", 4.0, 5, 2);
    const auto c = extract_ABq(s.xstar, s.obs, s.ex.model);
    for (std::size_t j = 1; j < s.grid.nodes(); ++j) {
        EXPECT_LE((c.A[j] - c.A[0]).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LE((c.B[j] - c.B[0]).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LE((c.q[j] - c.q[0]).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Riccati, FreeCaseStaysZero) {
    const TimeGrid g(3.0, 4);
    const auto r = solve_riccati(ABqPath::constant(g, scalar(0), scalar(0), scalar(1)));
    for (const auto& th : r.theta) EXPECT_EQ(th(0, 0), 0.0);
}

TEST(Riccati, MatchesTanhSolution) {
    const double a = 1.7, T = 3.0;
    const TimeGrid g(T, 10);
    const auto r = solve_riccati(ABqPath::constant(g, scalar(a), scalar(0), scalar(1)));
    const double ra = std::sqrt(a);
    double worst = 0;
    for (std::size_t j = 0; j < g.nodes(); ++j)
        worst = std::max(worst, std::abs(r.theta[j](0, 0) - ra * std::tanh(ra * (T - g.time(j)))));
    EXPECT_LE(worst, 1e-6);
    EXPECT_EQ(r.theta.back()(0, 0), 0.0);
}

TEST(Riccati, ExplodesPastTheConjugatePoint) {
    const double T = 2.0;
    const double ra = 1.05 * std::numbers::pi / (2 * T), a = ra * ra;
    const TimeGrid g(T, 8);
    try {
        solve_riccati(ABqPath::constant(g, scalar(-a), scalar(0), scalar(1)));
        FAIL() << "no blow-up";
    } catch (const BlowUpError& e) {
        EXPECT_NE(std::string(e.what()).find("theta exploded"), std::string::npos);
        // The analytic pole sits at T - pi/2.
        EXPECT_NEAR(e.time(), T - std::numbers::pi / (2 * ra), 0.02);
    }
}

TEST(Riccati, NoBlowUpBeforeTheConjugatePoint) {
    const double T = 2.0;
    const double ra = 0.95 * std::numbers::pi / (2 * T);
    const TimeGrid g(T, 8);
    const auto r = solve_riccati(ABqPath::constant(g, scalar(-ra * ra), scalar(0), scalar(1)));
    EXPECT_NEAR(r.theta.front()(0, 0), -ra * std::tan(ra * T), 1e-6 * ra * std::tan(ra * T));
}

TEST(CovarianceV, BrownianGrowth) {
    const TimeGrid g(2.0, 4);
    const double v = 0.7;
    const auto V = covariance_V(zero_theta(g), ABqPath::constant(g, scalar(0), scalar(0), scalar(1)), scalar(1 / v));
    for (std::size_t j = 0; j < g.nodes(); ++j) EXPECT_NEAR(V[j](0, 0), v + g.time(j), 1e-12);
}

TEST(CovarianceV, StationaryLimit) {
    // theta = 0 with B = k gives K = k.
    const double k = 0.9;
    const TimeGrid g(10.0, 6);
    const auto V = covariance_V(zero_theta(g), ABqPath::constant(g, scalar(0), scalar(k), scalar(1)), scalar(0.25));
    EXPECT_NEAR(V.back()(0, 0), 1 / (2 * k), 1e-4);
}

TEST(CovarianceV, RejectsSingularInitialPrecision) {
    const TimeGrid g(1.0, 2);
    EXPECT_THROW(covariance_V(zero_theta(g), ABqPath::constant(g, scalar(0), scalar(0), scalar(1)), scalar(0)), Error);
}

TEST(SolveF, FreeCase) {
    const TimeGrid g(2.0, 4);
    const auto f = solve_F(ABqPath::constant(g, scalar(0), scalar(0), scalar(1)));
    for (double d : f.detF) EXPECT_EQ(d, 1.0);
    EXPECT_EQ(f.verdict, Verdict::local_min);
}

TEST(SolveF, CosineCaseHasAConjugatePoint) {
    const double T = 2.0;
    const double a = std::pow(1.3 * std::numbers::pi / (2 * T), 2);
    const TimeGrid g(T, 8);
    const auto f = solve_F(ABqPath::constant(g, scalar(-a), scalar(0), scalar(1)));
    for (std::size_t j = 0; j < g.nodes(); ++j)
        EXPECT_NEAR(f.F[j](0, 0), std::cos(std::sqrt(a) * (T - g.time(j))), 1e-8);
    EXPECT_TRUE(f.sign_change);
    EXPECT_EQ(f.verdict, Verdict::not_local_min);
}

TEST(SolveF, TerminalConditions) {
    const auto s = solved("example3", 3.0, 6, 4);
    const auto c = extract_ABq(s.xstar, s.obs, s.ex.model);
    const auto f = solve_F(c);
    const std::size_t N = s.grid.steps();
    EXPECT_LE((f.F[N] - Mat::Identity(1, 1)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_LE((c.B[N].transpose() + c.q[N] * f.F_dot[N]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveF, ThetaReconstructionMatchesRiccati) {
    const auto s = solved("example1", 4.0, 6, 5);
    ASSERT_TRUE(s.xstar.converged);
    const auto c = extract_ABq(s.xstar, s.obs, s.ex.model);
    EXPECT_LE(sup_diff(solve_riccati(c).theta, theta_from_F(solve_F(c), c)), 1e-5);
}

TEST(SolveF, ThetaReconstructionOnSmoothExample3Data) {
    // Rough simulated data makes A swing by ~100 between nodes, so both
    // integrators are far from resolved; smooth data isolates the identity.
    const auto ex = examples::example3();
    const TimeGrid g(4.0, 6);
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < g.nodes(); ++j) ys.push_back(Vec::Constant(1, 2.5 + 0.3 * std::sin(g.time(j))));
    const ObservationSeries obs(g, ys);
    const Prior prior = Prior::isotropic_gaussian(Vec::Constant(1, 2.5), 10.0);
    const auto xstar = solve_least_action(obs, ex.model, prior, g);
    ASSERT_TRUE(xstar.converged);
    const auto c = extract_ABq(xstar, obs, ex.model);
    EXPECT_LE(sup_diff(solve_riccati(c).theta, theta_from_F(solve_F(c), c)), 1e-5);
}

TEST(SolveF, RescalingKeepsDeterminantSigns) {
    // Strongly convex over a long horizon: F grows like cosh and is rescaled.
    const TimeGrid g(200.0, 5);
    const auto f = solve_F(ABqPath::constant(g, scalar(4.0), scalar(0), scalar(1)));
    EXPECT_FALSE(f.sign_change);
    EXPECT_NEAR(f.log_abs_det.front(), std::log(std::cosh(2.0 * 200.0)), 1e-3);
    EXPECT_EQ(f.verdict, Verdict::local_min);
}

TEST(SecondOrderLaw, InvariantsOnExample1) {
    const auto s = solved("example1", 6.0, 6, 7);
    const auto law = second_order_law(s.xstar, s.obs, s.ex.model, s.prior);
    const auto& c = law.coefficients;
    EXPECT_EQ(law.theta.back().cwiseAbs().maxCoeff(), 0.0);
    for (std::size_t j = 0; j < s.grid.nodes(); ++j) {
        EXPECT_LE((law.theta[j] - law.theta[j].transpose()).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Mat>(law.V[j]).eigenvalues().minCoeff(), -1e-10);
        const Mat K = c.q[j].inverse() * (c.B[j].transpose() + law.theta[j]);
        EXPECT_LE((K - law.K[j]).cwiseAbs().maxCoeff(), 1e-8);
    }
    // Riccati residual with centred differences.
    const double h = s.grid.step();
    double worst = 0, Anorm = 0;
    for (std::size_t j = 1; j + 1 < s.grid.nodes(); ++j) {
        const Mat dth = (law.theta[j + 1] - law.theta[j - 1]) / (2 * h);
        const Mat res = dth - detail::riccati_rhs(law.theta[j], c.A[j], c.B[j], c.q[j].inverse());
        worst = std::max(worst, res.cwiseAbs().maxCoeff());
        Anorm = std::max(Anorm, c.A[j].norm());
    }
    EXPECT_LE(worst, 1e-6 * (1 + Anorm));
}

TEST(CheckLocalMin, Example1IsALocalMinimum) {
    const auto s = solved("example1", 6.0, 6, 8);
    const auto rep = check_local_min(s.xstar, s.obs, s.ex.model, s.prior);
    EXPECT_EQ(rep.verdict, Verdict::local_min);
    ASSERT_TRUE(rep.init_precision_eigenvalues.has_value());
    EXPECT_GT(rep.init_precision_eigenvalues->minCoeff(), 0.0);

    // Second variation is nonnegative on random perturbations.
    const auto c = extract_ABq(s.xstar, s.obs, s.ex.model);
    const Mat D2phi = s.prior.hess(s.xstar.path.x.front());
    Rng rng(17, 0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Vec> xi;
        Vec walk = rng.normal_vec(1);
        for (std::size_t j = 0; j < s.grid.nodes(); ++j) {
            xi.push_back(walk);
            walk += std::sqrt(s.grid.step()) * rng.normal_vec(1);
        }
        EXPECT_GE(second_variation(xi, c, D2phi), -1e-8);
    }
}

TEST(CheckLocalMin, FlatHiddenBrownianMotion) {
    const TimeGrid g(2.0, 4);
    const auto none = ObservationSeries::none(g);
    const std::vector<Vec> start{Vec::Constant(1, 0.3)};
    const auto xstar = solve_least_action(none, hidden_bm(), Prior::flat(1), g, start);
    const auto rep = check_local_min(xstar, none, hidden_bm(), Prior::flat(1));
    EXPECT_EQ(rep.verdict, Verdict::local_min);
    for (double d : rep.F.detF) EXPECT_EQ(d, 1.0);
}

TEST(SamplePerturbation, BrownianEnsembleVariance) {
    const TimeGrid g(2.0, 4);
    SecondOrderLaw law;
    law.coefficients = ABqPath::constant(g, scalar(0), scalar(0), scalar(1));
    law.theta = zero_theta(g).theta;
    const double v = 0.5;
    law.init_precision = scalar(1 / v);
    law.V = covariance_V(zero_theta(g), law.coefficients, law.init_precision, &law.K, &law.K_half);
    const int M = 10000;
    std::vector<double> s1(g.nodes()), s2(g.nodes());
    for (int m = 0; m < M; ++m) {
        const auto xi = sample_perturbation(law, 1000 + m);
        for (std::size_t j = 0; j < g.nodes(); ++j) {
            s1[j] += xi.x[j][0];
            s2[j] += xi.x[j][0] * xi.x[j][0];
        }
    }
    for (std::size_t j = 0; j < g.nodes(); j += 8) {
        const double mean = s1[j] / M, var = s2[j] / M - mean * mean;
        const double expect = v + g.time(j);
        EXPECT_NEAR(var, expect, 3 * expect * std::sqrt(2.0 / M)) << "t=" << g.time(j);
    }
}

TEST(SamplePerturbation, ZeroNoiseDecaysAtRateK) {
    const TimeGrid g(1.0, 8);
    SecondOrderLaw law;
    const double k = 2.0;
    law.coefficients = ABqPath::constant(g, scalar(0), scalar(k * 1e12), scalar(1e12));
    law.theta = zero_theta(g).theta;
    law.init_precision = scalar(1.0);
    law.V = covariance_V(zero_theta(g), law.coefficients, law.init_precision, &law.K, &law.K_half);
    const auto xi = sample_perturbation(law, 3);
    const double x0 = xi.x.front()[0];
    // Euler steps of size h on xi' = -k xi.
    const double expect = x0 * std::pow(1 - k * g.step(), static_cast<double>(g.steps()));
    EXPECT_NEAR(xi.x.back()[0], expect, 1e-5);
    EXPECT_NEAR(xi.x.back()[0], x0 * std::exp(-k), 1e-2 * std::abs(x0) + 1e-5);
}

TEST(SamplePerturbation, EnsembleMatchesVOnExample1) {
    const auto s = solved("example1", 4.0, 6, 9);
    const auto law = second_order_law(s.xstar, s.obs, s.ex.model, s.prior);
    const int M = 10000;
    double s1 = 0, s2 = 0;
    for (int m = 0; m < M; ++m) {
        const double x = sample_perturbation(law, 50000 + m).x.back()[0];
        s1 += x;
        s2 += x * x;
    }
    const double mean = s1 / M, var = s2 / M - mean * mean;
    const double VT = law.V.back()(0, 0);
    EXPECT_NEAR(var, VT, 5 * VT * std::sqrt(2.0 / M));
}
