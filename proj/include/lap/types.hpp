/// @file types.hpp Shared numeric types, errors and the dyadic time grid.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lap {

/// Upper bound on the joint state dimension. Small vectors and matrices use
/// Eigen's bounded dynamic storage so hot loops never touch the heap.
inline constexpr int kMaxDim = 8;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline constexpr double kEps = std::numeric_limits<double>::epsilon();

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Coefficient evaluation failed (singular or ill-conditioned sigma, non-finite
/// values, or the coefficient cap was exceeded).
class EvaluationError : public Error {
public:
    EvaluationError(const std::string& what, double t, Vec z)
        : Error(describe(what, t, z)), t_(t), z_(std::move(z)) {}

    double time() const { return t_; }
    const Vec& state() const { return z_; }

private:
    static std::string describe(const std::string& what, double t, const Vec& z) {
        std::ostringstream os;
        os << what << " at t=" << t << ", z=[";
        for (int i = 0; i < z.size(); ++i) os << (i ? ", " : "") << z[i];
        os << "]";
        return os.str();
    }

    double t_;
    Vec z_;
};

/// A trajectory left the admissible region (blow-up, positivity loss).
class BlowUpError : public Error {
public:
    BlowUpError(const std::string& what, double t)
        : Error(what + " at t=" + std::to_string(t)), t_(t) {}
    double time() const { return t_; }

private:
    double t_;
};

/// Grid of nodes t_j = j h, h = 2^-level, j = 0..N with N h = T exactly.
class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double horizon, int level) : horizon_(horizon), level_(level) {
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw Error("TimeGrid: horizon must be positive and finite");
        if (level < 0 || level > 40) throw Error("TimeGrid: level must lie in [0, 40]");
        const double scaled = std::ldexp(horizon, level);
        if (scaled != std::floor(scaled) || scaled > 1e9)
            throw Error("TimeGrid: horizon is not an integer multiple of 2^-level");
        count_ = static_cast<std::size_t>(scaled);
    }

    double horizon() const { return horizon_; }
    int level() const { return level_; }
    /// Number of steps N; there are N + 1 nodes.
    std::size_t steps() const { return count_; }
    std::size_t nodes() const { return count_ + 1; }
    double step() const { return std::ldexp(1.0, -level_); }
    double time(std::size_t j) const { return std::ldexp(static_cast<double>(j), -level_); }

    TimeGrid with_level(int level) const { return TimeGrid(horizon_, level); }

    bool operator==(const TimeGrid& o) const {
        return horizon_ == o.horizon_ && level_ == o.level_;
    }

private:
    double horizon_ = 1.0;
    int level_ = 0;
    std::size_t count_ = 1;
};

/// Hidden path on a grid: positions x and derivatives p = dx/dt at every node.
struct HiddenPath {
    TimeGrid grid;
    std::vector<Vec> x;
    std::vector<Vec> p;

    std::size_t size() const { return x.size(); }
    int dim() const { return x.empty() ? 0 : static_cast<int>(x.front().size()); }
};

namespace detail {

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double sup_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline bool all_finite(const Mat& m) { return m.allFinite(); }

/// Symmetric matrix function via eigendecomposition with an eigenvalue floor.
template <typename F>
Mat symmetric_apply(const Mat& m, F&& f, double floor = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
    if (es.info() != Eigen::Success) throw Error("symmetric eigendecomposition failed");
    Vec ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev[i] = f(std::max(ev[i], floor));
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Cubic Hermite interpolation on [0, h] given values and slopes at both ends.
/// Returns (value, slope) at fraction s in [0, 1].
template <typename V>
std::pair<V, V> hermite(const V& y0, const V& d0, const V& y1, const V& d1, double h, double s) {
    const double s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s;
    const double h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    V y = h00 * y0 + (h10 * h) * d0 + h01 * y1 + (h11 * h) * d1;
    const double g00 = (6 * s2 - 6 * s) / h, g10 = 3 * s2 - 4 * s + 1;
    const double g01 = (-6 * s2 + 6 * s) / h, g11 = 3 * s2 - 2 * s;
    V dy = g00 * y0 + g10 * d0 + g01 * y1 + g11 * d1;
    return {y, dy};
}

} // namespace detail

} // namespace lap
