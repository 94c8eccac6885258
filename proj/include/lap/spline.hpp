/// @file spline.hpp Natural cubic spline through equally spaced samples.

#pragma once

#include "types.hpp"

#include <algorithm>
#include <vector>

namespace lap {

/// Value, first and second derivative of an interpolant at one time.
struct SplinePoint {
    Vec value;
    Vec slope;
    Vec curvature;
};

/// Componentwise natural cubic spline on the nodes of a TimeGrid.
///
/// Second derivatives vanish at both ends. Inside piece [t_j, t_{j+1}] the
/// spline is a cubic; at a knot the piece to the right is used, so the
/// (discontinuous) third derivative is taken as its right limit.
class NaturalCubicSpline {
public:
    NaturalCubicSpline() = default;

    NaturalCubicSpline(const TimeGrid& grid, const std::vector<Vec>& samples)
        : h_(grid.step()), steps_(grid.steps()) {
        if (samples.size() != grid.nodes())
            throw Error("NaturalCubicSpline: sample count does not match grid");
        dim_ = samples.empty() ? 0 : static_cast<int>(samples.front().size());
        const std::size_t n = grid.nodes();
        values_.resize(dim_, std::vector<double>(n));
        moments_.resize(dim_, std::vector<double>(n, 0.0));
        for (int c = 0; c < dim_; ++c) {
            for (std::size_t j = 0; j < n; ++j) values_[c][j] = samples[j][c];
            solve_moments(values_[c], moments_[c]);
        }
    }

    int dim() const { return dim_; }

    SplinePoint operator()(double t) const {
        SplinePoint out{Vec(dim_), Vec(dim_), Vec(dim_)};
        if (dim_ == 0) return out;
        const double tt = std::clamp(t, 0.0, h_ * static_cast<double>(steps_));
        std::size_t j = static_cast<std::size_t>(std::floor(tt / h_));
        if (j >= steps_) j = steps_ - 1;
        const double b = tt - h_ * static_cast<double>(j);
        const double a = h_ - b;
        for (int c = 0; c < dim_; ++c) {
            const double m0 = moments_[c][j], m1 = moments_[c][j + 1];
            const double y0 = values_[c][j], y1 = values_[c][j + 1];
            out.value[c] = (m0 * a * a * a + m1 * b * b * b) / (6 * h_) +
                           (y0 / h_ - m0 * h_ / 6) * a + (y1 / h_ - m1 * h_ / 6) * b;
            out.slope[c] = (-m0 * a * a + m1 * b * b) / (2 * h_) + (y1 - y0) / h_ -
                           (m1 - m0) * h_ / 6;
            out.curvature[c] = (m0 * a + m1 * b) / h_;
        }
        return out;
    }

private:
    // Thomas algorithm for M_{j-1} + 4 M_j + M_{j+1} = 6 (y_{j+1} - 2 y_j + y_{j-1}) / h^2.
    void solve_moments(const std::vector<double>& y, std::vector<double>& m) const {
        const std::size_t n = y.size();
        if (n < 3) return;
        const std::size_t k = n - 2;
        std::vector<double> c(k), d(k);
        for (std::size_t i = 0; i < k; ++i) {
            const double rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h_ * h_);
            if (i == 0) {
                c[i] = 1.0 / 4.0;
                d[i] = rhs / 4.0;
            } else {
                const double denom = 4.0 - c[i - 1];
                c[i] = 1.0 / denom;
                d[i] = (rhs - d[i - 1]) / denom;
            }
        }
        m[k] = d[k - 1];
        for (std::size_t i = k - 1; i-- > 0;) m[i + 1] = d[i] - c[i] * m[i + 2];
        m[0] = m[n - 1] = 0.0;
    }

    double h_ = 1.0;
    std::size_t steps_ = 1;
    int dim_ = 0;
    std::vector<std::vector<double>> values_;
    std::vector<std::vector<double>> moments_;
};

} // namespace lap
