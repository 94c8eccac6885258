#include <lap/model.hpp>
#include <lap/random.hpp>
#include <lap/registry.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace lap;

namespace {

Vec vec(std::initializer_list<double> v) {
    Vec out(static_cast<int>(v.size()));
    int i = 0;
    for (double x : v) out[i++] = x;
    return out;
}

PartitionedModel hidden_bm() {
    return PartitionedModel(linear_diffusion(Mat::Identity(1, 1), Mat::Zero(1, 1)), 1);
}

ObservationSeries constant_obs(const TimeGrid& g, const Vec& y) {
    return ObservationSeries(g, std::vector<Vec>(g.nodes(), y));
}

ObservationSeries wavy_obs(const TimeGrid& g, int s, double scale = 1.0) {
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        Vec y(s);
        for (int k = 0; k < s; ++k) y[k] = scale * std::sin(0.7 * g.time(j) + k) + 0.3 * k;
        ys.push_back(y);
    }
    return ObservationSeries(g, ys);
}

double rel_err(const Mat& a, const Mat& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

} // namespace

TEST(TimeGrid, RejectsHorizonOffTheDyadicLattice) {
    EXPECT_THROW(TimeGrid(1.3, 2), Error);
    EXPECT_THROW(TimeGrid(-1.0, 2), Error);
    const TimeGrid g(1.25, 2);
    EXPECT_EQ(g.steps(), 5u);
    EXPECT_DOUBLE_EQ(g.time(5), 1.25);
}

TEST(Spline, ReproducesSamplesAndHasNaturalEnds) {
    const TimeGrid g(4.0, 3);
    Rng rng(5, 0);
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < g.nodes(); ++j) ys.push_back(rng.normal_vec(2) * 3.0);
    const ObservationSeries obs(g, ys);
    for (std::size_t j = 0; j < g.nodes(); ++j) {
        const Vec v = obs.at(g.time(j)).value;
        for (int k = 0; k < 2; ++k) EXPECT_LE(std::abs(v[k] - ys[j][k]), 1e-12 * (1 + std::abs(ys[j][k])));
    }
    EXPECT_LE(obs.at(0.0).curvature.cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(obs.at(4.0).curvature.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Spline, FirstAndSecondDerivativesAreContinuousAtKnots) {
    const TimeGrid g(3.0, 2);
    Rng rng(9, 0);
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < g.nodes(); ++j) ys.push_back(rng.normal_vec(1));
    const ObservationSeries obs(g, ys);
    for (std::size_t j = 1; j < g.steps(); ++j) {
        const double t = g.time(j);
        const auto l = obs.at(t - 1e-9), r = obs.at(t + 1e-9);
        EXPECT_NEAR(l.slope[0], r.slope[0], 1e-6);
        EXPECT_NEAR(l.curvature[0], r.curvature[0], 1e-6);
    }
}

TEST(Spline, InterpolatesSmoothFunctionsAccurately) {
    const TimeGrid g(2.0, 6);
    std::vector<Vec> ys;
    for (std::size_t j = 0; j < g.nodes(); ++j) ys.push_back(vec({std::sin(g.time(j))}));
    const ObservationSeries obs(g, ys);
    for (double t : {0.5, 1.0 + 1.0 / 3, 1.7}) {
        const auto s = obs.at(t);
        EXPECT_NEAR(s.value[0], std::sin(t), 1e-7);
        EXPECT_NEAR(s.slope[0], std::cos(t), 1e-4);
        EXPECT_NEAR(s.curvature[0], -std::sin(t), 1e-2);
    }
}

TEST(Psi, VanishesWhenVelocityMatchesDrift) {
    const PartitionedModel ou(linear_diffusion(Mat::Identity(1, 1) * 0.5, Mat::Constant(1, 1, -0.4)), 1);
    const TimeGrid g(2.0, 4);
    const auto none = ObservationSeries::none(g);
    EXPECT_NEAR(eval_psi(0.8, vec({1.5}), vec({-0.6}), none, ou), 0.0, 1e-30);
    EXPECT_GT(eval_psi(0.8, vec({1.5}), vec({-0.5}), none, ou), 0.0);
}

TEST(Psi, Example1HandValue) {
    const auto ex = examples::example1();
    const TimeGrid g(1.0, 2);
    const auto obs = constant_obs(g, vec({1.0}));
    // Residual (0.1054, 0.1054); back-substitute through the triangular sigma.
    const double u1 = 0.1054 / 1.053;
    const double u2 = (0.1054 - 1.053 * u1) / 1.0127;
    const double expected = 0.5 * (u1 * u1 + u2 * u2);
    EXPECT_NEAR(eval_psi(0.5, vec({1.0}), vec({0.0}), obs, ex.model), expected, 1e-15);
    EXPECT_NEAR(expected, 5.010e-3, 1e-5);
}

TEST(Psi, QuadraticInTheResidual) {
    const auto ex = examples::example1();
    const TimeGrid g(1.0, 2);
    const auto obs = constant_obs(g, vec({0.0}));
    // With y = 0 and x = 0 the drift vanishes, so the residual is [p; 0].
    const double a = eval_psi(0.25, vec({0.0}), vec({0.7}), obs, ex.model);
    const double b = eval_psi(0.25, vec({0.0}), vec({1.4}), obs, ex.model);
    EXPECT_NEAR(b, 4 * a, 1e-14);
}

TEST(Psi, ChangesWithTheDrift) {
    const TimeGrid g(1.0, 2);
    const auto obs = constant_obs(g, vec({0.3}));
    const auto m1 = examples::example1().model;
    Mat sigma(2, 2), A(2, 2);
    sigma << 1.053, 0, 1.053, 1.0127;
    A << -0.1054, 0, -0.1054 + 0.0253, -0.0253;
    const PartitionedModel m2(linear_diffusion(sigma, A, vec({0.0, 0.01})), 1);
    const PartitionedModel m3(linear_diffusion(sigma, A, vec({0.0, 0.0})), 1);
    const Vec x = vec({0.2}), p = vec({0.1});
    EXPECT_NE(eval_psi(0.5, x, p, obs, m1), eval_psi(0.5, x, p, obs, m2));
    EXPECT_EQ(eval_psi(0.5, x, p, obs, m1), eval_psi(0.5, x, p, obs, m3));
}

TEST(PsiDerivatives, HiddenBrownianMotion) {
    const TimeGrid g(1.0, 2);
    const auto none = ObservationSeries::none(g);
    const auto d = psi_derivatives(0.3, vec({2.0}), vec({0.6}), none, hidden_bm());
    EXPECT_EQ(d.A(0, 0), 0.0);
    EXPECT_EQ(d.B(0, 0), 0.0);
    EXPECT_EQ(d.q(0, 0), 1.0);
    EXPECT_EQ(d.grad_x[0], 0.0);
    EXPECT_DOUBLE_EQ(d.grad_p[0], 0.6);
    EXPECT_EQ(d.dt_grad_p[0], 0.0);
}

TEST(PsiDerivatives, Example1QIsHiddenBlockOfPrecision) {
    const auto ex = examples::example1();
    const TimeGrid g(1.0, 2);
    const auto obs = constant_obs(g, vec({1.0}));
    Mat sigma(2, 2);
    sigma << 1.053, 0, 1.053, 1.0127;
    const Mat prec = (sigma * sigma.transpose()).inverse();
    for (double x : {-1.0, 1.0, 3.0})
        for (double p : {-2.0, 0.0, 0.5}) {
            const auto d = psi_derivatives(0.5, vec({x}), vec({p}), obs, ex.model);
            EXPECT_NEAR(d.q(0, 0), prec(0, 0), 1e-12);
        }
}

TEST(PsiDerivatives, AnalyticMatchesFiniteDifferencesOnEveryExample) {
    Rng rng(17, 0);
    for (const auto& key : {"example1", "example2", "example3", "example4"}) {
        const auto ex = example_by_key(key);
        const TimeGrid g(4.0, 5);
        const auto obs = wavy_obs(g, ex.model.observed, 2.0);
        for (int trial = 0; trial < 5; ++trial) {
            const double t = 4.0 * rng.uniform();
            const Vec x = rng.normal_vec(ex.model.hidden);
            const Vec p = rng.normal_vec(ex.model.hidden);
            const auto a = psi_derivatives(t, x, p, obs, ex.model);
            const auto f = psi_derivatives_numeric(t, x, p, obs, ex.model);
            EXPECT_LE(rel_err(a.grad_x, f.grad_x), 1e-6) << key;
            EXPECT_LE(rel_err(a.grad_p, f.grad_p), 1e-12) << key;
            EXPECT_LE(rel_err(a.A, f.A), 1e-5) << key;
            EXPECT_LE(rel_err(a.B, f.B), 1e-6) << key;
            EXPECT_LE(rel_err(a.q, f.q), 1e-12) << key;
            EXPECT_LE(rel_err(a.dt_grad_p, f.dt_grad_p), 1e-6) << key;
        }
    }
}

TEST(PsiDerivatives, QMatchesSecondDifferencesInP) {
    Rng rng(3, 0);
    for (const auto& key : {"example1", "example2", "example3", "example4", "example5"}) {
        const auto ex = example_by_key(key);
        const TimeGrid g(4.0, 5);
        const auto obs = ex.model.observed ? wavy_obs(g, ex.model.observed) : ObservationSeries::none(g);
        const int n = ex.model.hidden;
        const double t = 1.3;
        const Vec x = ex.point_process ? vec({1.7}) : rng.normal_vec(n);
        const Vec p = rng.normal_vec(n);
        const auto d = psi_derivatives(t, x, p, obs, ex.model);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < n; ++k) {
                const double hi = std::pow(kEps, 0.25) * std::max(1.0, std::abs(p[i]));
                const double hk = std::pow(kEps, 0.25) * std::max(1.0, std::abs(p[k]));
                auto f = [&](double si, double sk) {
                    Vec pp = p;
                    pp[i] += si * hi;
                    pp[k] += sk * hk;
                    return eval_psi(t, x, pp, obs, ex.model);
                };
                const double fd = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4 * hi * hk);
                EXPECT_LE(std::abs(fd - d.q(i, k)), 1e-5 * std::max(1.0, std::abs(d.q(i, k)))) << key;
            }
        EXPECT_EQ(d.A, d.A.transpose());
        EXPECT_EQ(d.q, d.q.transpose());
    }
}

TEST(PsiDerivatives, ConstantObservationHasNoTimeTermForAutonomousModels) {
    const auto ex = examples::example3();
    const TimeGrid g(2.0, 3);
    const auto obs = constant_obs(g, vec({1.5}));
    const auto d = psi_derivatives(0.7, vec({0.2}), vec({0.3}), obs, ex.model);
    EXPECT_EQ(d.dt_grad_p[0], 0.0);
}

TEST(DiffusionModel, SingularSigmaFailsWithLocation) {
    DiffusionModel m(
        2, [](double, const Vec&) { return Mat(Mat::Zero(2, 2)); },
        [](double, const Vec& z) -> Vec { return z; });
    const PartitionedModel pm(m, 1);
    const TimeGrid g(1.0, 1);
    const auto obs = constant_obs(g, vec({0.0}));
    try {
        eval_psi(0.5, vec({1.0}), vec({0.0}), obs, pm);
        FAIL() << "expected an evaluation error";
    } catch (const EvaluationError& e) {
        EXPECT_DOUBLE_EQ(e.time(), 0.5);
        EXPECT_DOUBLE_EQ(e.state()[0], 1.0);
    }
}

TEST(DiffusionModel, CoefficientCapIsEnforced) {
    DiffusionModel m(
        1, [](double, const Vec&) { return Mat(Mat::Identity(1, 1)); },
        [](double, const Vec& z) -> Vec { return z * 1e9; }, 1e8);
    EXPECT_THROW(m.mu(0.0, vec({1.0})), EvaluationError);
    EXPECT_NO_THROW(m.mu(0.0, vec({0.01})));
}

TEST(Prior, GaussianIsCoerciveAndFlatIsNot) {
    EXPECT_TRUE(Prior::isotropic_gaussian(Vec::Zero(2), 10.0).coercive_on_rays(2));
    EXPECT_FALSE(Prior::flat(2).coercive_on_rays(2));
}

TEST(Prior, LognormalIntensityDerivatives) {
    const Prior p = Prior::lognormal_intensity(0.8, 1.0);
    for (double x : {0.3, 1.0, 4.0}) {
        const double h = 1e-5 * x;
        const double g = (p.phi(vec({x + h})) - p.phi(vec({x - h}))) / (2 * h);
        EXPECT_NEAR(p.grad(vec({x}))[0], g, 1e-7 * std::max(1.0, std::abs(g)));
        const double hh = (p.grad(vec({x + h}))[0] - p.grad(vec({x - h}))[0]) / (2 * h);
        EXPECT_NEAR(p.hess(vec({x}))(0, 0), hh, 1e-6 * std::max(1.0, std::abs(hh)));
    }
}

TEST(Registry, KeysResolveAndUnknownKeysFail) {
    for (const auto& k : example_keys()) EXPECT_EQ(example_by_key(k).key, k);
    EXPECT_THROW(example_by_key("example9"), Error);
    const auto ex4 = examples::example4();
    const Mat s = ex4.model.base.sigma(0.0, Vec::Zero(3));
    Mat target(2, 2);
    target << 0.9, 0.27, 0.27, 0.9;
    const Mat root = s.topLeftCorner(2, 2);
    EXPECT_LE((root * root - target).cwiseAbs().maxCoeff(), 1e-12);
}
