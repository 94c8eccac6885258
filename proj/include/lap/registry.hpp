/// @file registry.hpp Built-in example models "example1" ... "example5" and
/// the linear-model constructor they share.

#pragma once

#include "model.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace lap {

/// dz = sigma dW + (A z + c) dt with analytic derivatives attached.
inline DiffusionModel linear_diffusion(const Mat& sigma, const Mat& A, const Vec& c = Vec()) {
    const int d = static_cast<int>(A.rows());
    if (A.cols() != d || sigma.rows() != d || sigma.cols() != d) throw Error("linear_diffusion: shape mismatch");
    const Vec offset = c.size() ? c : Vec(Vec::Zero(d));
    DiffusionModel m(
        d, [sigma](double, const Vec&) { return sigma; },
        [A, offset](double, const Vec& z) -> Vec { return A * z + offset; });
    m.set_constant_sigma().set_autonomous().set_drift_derivatives(
        [A](double, const Vec&) { return A; }, [d](double, const Vec&, const Vec&) -> Mat { return Mat::Zero(d, d); });
    return m;
}

/// A named example: model, default horizon, level and initial state.
struct Example {
    std::string key;
    PartitionedModel model;
    double horizon = 100.0;
    int level = 8;
    Vec z0;
    /// Point-process examples carry an intensity model with no observed block.
    bool point_process = false;
};

namespace examples {

inline Example example1() {
    const double sx = 1.053, sy = 1.0127, bx = 0.1054, by = 0.0253;
    Mat sigma(2, 2), A(2, 2);
    sigma << sx, 0, sx, sy;
    A << -bx, 0, -bx + by, -by;
    PartitionedModel m(linear_diffusion(sigma, A), 1, [](double, const Vec& y) -> Vec { return y; });
    return {"example1", m, 100.0, 8, Vec::Zero(2)};
}

inline Example example2() {
    const double lambda = 0.005, s = 20.0;
    Mat sigma = Mat::Zero(4, 4), A = Mat::Zero(4, 4);
    sigma.topLeftCorner(2, 2).setIdentity();
    sigma.bottomLeftCorner(2, 2).setIdentity();
    sigma.bottomRightCorner(2, 2) = s * Mat::Identity(2, 2);
    Mat A0(2, 2);
    A0 << 0, -1, 1, 0;
    A.topLeftCorner(2, 2) = A0;
    A.bottomLeftCorner(2, 2) = A0 + lambda * Mat::Identity(2, 2);
    A.bottomRightCorner(2, 2) = -lambda * Mat::Identity(2, 2);
    PartitionedModel m(linear_diffusion(sigma, A), 2, [](double, const Vec& y) -> Vec { return y; });
    return {"example2", m, 100.0, 8, Vec::Zero(4)};
}

/// Double-well style drift -b sin(a x) observed through an OU-perturbed copy.
inline Example example3(double sigma_x = 3.0, double b = 12.0, double a = 2 * std::numbers::pi / 5,
                        double lambda = 0.05) {
    Mat sigma(2, 2);
    sigma << sigma_x, 0, sigma_x, 1.0;
    DiffusionModel base(
        2, [sigma](double, const Vec&) { return sigma; },
        [a, b, lambda](double, const Vec& z) -> Vec {
            Vec m(2);
            m[0] = -b * std::sin(a * z[0]);
            m[1] = m[0] - lambda * (z[1] - z[0]);
            return m;
        });
    base.set_constant_sigma().set_autonomous().set_drift_derivatives(
        [a, b, lambda](double, const Vec& z) -> Mat {
            const double c = -a * b * std::cos(a * z[0]);
            Mat j(2, 2);
            j << c, 0, c + lambda, -lambda;
            return j;
        },
        [a, b](double, const Vec& z, const Vec& w) -> Mat {
            Mat h = Mat::Zero(2, 2);
            h(0, 0) = (w[0] + w[1]) * a * a * b * std::sin(a * z[0]);
            return h;
        });
    PartitionedModel m(base, 1, [](double, const Vec& y) -> Vec { return y; });
    return {"example3", m, 100.0, 8, Vec::Zero(2)};
}

/// Two hidden sine-drift coordinates seen through the single observation
/// Y = v . X + y, written as a joint SDE for [X1, X2, Y].
inline Example example4() {
    const double b = 12.0, a = 2 * std::numbers::pi / 5, lambda = 0.05, s = 1.0;
    Mat sigma2(2, 2);
    sigma2 << 0.9, 0.27, 0.27, 0.9;
    const Mat root = detail::symmetric_apply(sigma2, [](double e) { return std::sqrt(e); });
    Vec v(2);
    v << 1.0, 2.0;
    Mat sigma = Mat::Zero(3, 3);
    sigma.topLeftCorner(2, 2) = root;
    sigma.block(2, 0, 1, 2) = v.transpose() * root;
    sigma(2, 2) = s;
    DiffusionModel base(
        3, [sigma](double, const Vec&) { return sigma; },
        [a, b, lambda, v](double, const Vec& z) -> Vec {
            Vec m(3);
            m[0] = -b * std::sin(a * z[0]);
            m[1] = -b * std::sin(a * z[1]);
            m[2] = v[0] * m[0] + v[1] * m[1] - lambda * (z[2] - v[0] * z[0] - v[1] * z[1]);
            return m;
        });
    base.set_constant_sigma().set_autonomous().set_drift_derivatives(
        [a, b, lambda, v](double, const Vec& z) -> Mat {
            Mat j = Mat::Zero(3, 3);
            for (int i = 0; i < 2; ++i) {
                const double c = -a * b * std::cos(a * z[i]);
                j(i, i) = c;
                j(2, i) = v[i] * c + lambda * v[i];
            }
            j(2, 2) = -lambda;
            return j;
        },
        [a, b, v](double, const Vec& z, const Vec& w) -> Mat {
            Mat h = Mat::Zero(3, 3);
            for (int i = 0; i < 2; ++i) h(i, i) = (w[i] + w[2] * v[i]) * a * a * b * std::sin(a * z[i]);
            return h;
        });
    PartitionedModel m(base, 2, [v](double, const Vec& y) -> Vec { return v * (y[0] / v.squaredNorm()); });
    return {"example4", m, 100.0, 8, Vec::Zero(3)};
}

/// Scalar geometric Brownian motion dx = x (sigma dW + mu dt), used as a
/// hidden point-process intensity.
inline DiffusionModel gbm(double sigma, double mu) {
    if (!(sigma > 0)) throw Error("gbm: sigma must be positive");
    DiffusionModel m(
        1,
        [sigma](double, const Vec& z) {
            Mat s(1, 1);
            s(0, 0) = sigma * z[0];
            return s;
        },
        [mu](double, const Vec& z) -> Vec { return mu * z; });
    m.set_autonomous();
    return m;
}

inline Example example5(double sigma = 0.3, double mu = 0.0) {
    Vec z0(1);
    z0[0] = 2.45;
    return {"example5", PartitionedModel(gbm(sigma, mu), 1), 20.0, 8, z0, true};
}

} // namespace examples

inline std::vector<std::string> example_keys() {
    return {"example1", "example2", "example3", "example4", "example5"};
}

inline Example example_by_key(const std::string& key) {
    if (key == "example1") return examples::example1();
    if (key == "example2") return examples::example2();
    if (key == "example3") return examples::example3();
    if (key == "example4") return examples::example4();
    if (key == "example5") return examples::example5();
    throw Error("unknown model key '" + key + "'");
}

/// Isotropic Gaussian prior with variance 10 centred on the model's guess of
/// x_0 from the first observation (the origin when the model has no guess).
inline Prior default_prior(const PartitionedModel& model, const ObservationSeries& obs, double variance = 10.0) {
    Vec mean = Vec::Zero(model.hidden);
    if (model.hidden_guess && model.observed) mean = model.hidden_guess(0.0, obs.samples().front());
    return Prior::isotropic_gaussian(mean, variance);
}

} // namespace lap
