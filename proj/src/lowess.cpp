#include "scanshift/lowess.hpp"

#include "scanshift/error.hpp"
#include "scanshift/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace scanshift::lowess {

namespace {

constexpr double kMinLocalVariance = 1e-18;

double tricube(double u) {
    const double t = 1.0 - u * u * u;
    return t * t * t;
}

double bisquare(double u) {
    const double t = 1.0 - u * u;
    return t * t;
}

struct Sorted {
    std::vector<double> x;
    std::vector<double> y;
};

Sorted sort_points(std::span<const double> x, std::span<const double> y) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
    });
    Sorted s;
    for (const auto i : order) {
        s.x.push_back(x[i]);
        s.y.push_back(y[i]);
    }
    return s;
}

class LocalFitter {
public:
    LocalFitter(const Sorted& pts, std::size_t neighbours) : pts_(pts), q_(neighbours) {
        dist_.resize(pts.x.size());
        scratch_.resize(pts.x.size());
        weights_.resize(pts.x.size());
    }

    double at(double x0, const std::vector<double>& robustness) {
        const std::size_t n = pts_.x.size();
        for (std::size_t i = 0; i < n; ++i) dist_[i] = std::abs(pts_.x[i] - x0);
        scratch_ = dist_;
        std::nth_element(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(q_ - 1),
                         scratch_.end());
        const double h = scratch_[q_ - 1];
        for (std::size_t i = 0; i < n; ++i) {
            if (h > 0.0) {
                weights_[i] = dist_[i] < h ? tricube(dist_[i] / h) : 0.0;
            } else {
                weights_[i] = dist_[i] == 0.0 ? 1.0 : 0.0;
            }
        }
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += weights_[i] * robustness[i];
        if (total > 0.0) {
            for (std::size_t i = 0; i < n; ++i) weights_[i] *= robustness[i];
        } else {
            // Every neighbour was rejected as an outlier; fall back to the kernel weights.
            total = std::accumulate(weights_.begin(), weights_.end(), 0.0);
        }
        double mx = 0.0;
        double my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += weights_[i] * pts_.x[i];
            my += weights_[i] * pts_.y[i];
        }
        mx /= total;
        my /= total;
        double sxx = 0.0;
        double sxy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dx = pts_.x[i] - mx;
            sxx += weights_[i] * dx * dx;
            sxy += weights_[i] * dx * (pts_.y[i] - my);
        }
        if (sxx / total < kMinLocalVariance) return my;
        return my + sxy / sxx * (x0 - mx);
    }

private:
    const Sorted& pts_;
    std::size_t q_;
    std::vector<double> dist_;
    std::vector<double> scratch_;
    std::vector<double> weights_;
};

std::vector<double> robustness_weights(const std::vector<double>& residuals) {
    std::vector<double> abs_res(residuals.size());
    std::transform(residuals.begin(), residuals.end(), abs_res.begin(),
                   [](double r) { return std::abs(r); });
    std::vector<double> sorted = abs_res;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (median > 0.0) {
            const double u = abs_res[i] / (6.0 * median);
            w[i] = u < 1.0 ? bisquare(u) : 0.0;
        } else {
            w[i] = abs_res[i] == 0.0 ? 1.0 : 0.0;
        }
    }
    return w;
}

}  // namespace

std::vector<double> unit_grid(std::size_t points) {
    if (points < 2) throw Error(ErrorKind::TooFewPoints, "grid needs at least two points");
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i) {
        g[i] = static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return g;
}

std::vector<double> fit(std::span<const double> x, std::span<const double> y,
                        std::span<const double> grid, const Params& params) {
    if (x.size() != y.size()) throw Error(ErrorKind::ShapeMismatch, "LOWESS x and y differ in length");
    if (x.size() < 5) {
        throw Error(ErrorKind::TooFewPoints, fmt::format("LOWESS needs >= 5 points, got {}", x.size()));
    }
    if (!(params.frac > 0.0 && params.frac <= 1.0) || params.robust_iters < 0) {
        throw Error(ErrorKind::TooFewPoints, "LOWESS frac must lie in (0, 1] and robust_iters >= 0");
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            throw Error(ErrorKind::NonFiniteValue, "LOWESS input must be finite");
        }
    }
    const Sorted pts = sort_points(x, y);
    const std::size_t n = pts.x.size();
    const auto q = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(params.frac * static_cast<double>(n) - 1e-9)), 2, n);
    LocalFitter fitter(pts, q);

    std::vector<double> robustness(n, 1.0);
    std::vector<double> residuals(n);
    for (int iter = 0; iter < params.robust_iters; ++iter) {
        for (std::size_t i = 0; i < n; ++i) residuals[i] = pts.y[i] - fitter.at(pts.x[i], robustness);
        robustness = robustness_weights(residuals);
    }
    std::vector<double> curve;
    curve.reserve(grid.size());
    for (const double g : grid) curve.push_back(fitter.at(g, robustness));
    return curve;
}

std::vector<std::size_t> subsample_indices(std::size_t n, double subsample, std::uint64_t seed,
                                           std::uint64_t stream) {
    const auto m = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(subsample * static_cast<double>(n))), 1, n);
    auto rng = stats::replicate_stream(seed, stream);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

Band bootstrap(std::span<const Pairs> per_seed, std::span<const double> grid,
               const BootstrapParams& params) {
    if (per_seed.empty() || params.curves_per_seed == 0) {
        throw Error(ErrorKind::InsufficientPairs, "bootstrap LOWESS needs at least one seed and curve");
    }
    if (!(params.subsample > 0.0 && params.subsample <= 1.0)) {
        throw Error(ErrorKind::InsufficientPairs, "subsample fraction must lie in (0, 1]");
    }
    std::vector<std::vector<double>> curves;
    curves.reserve(per_seed.size() * params.curves_per_seed);
    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t g = 0; g < per_seed.size(); ++g) {
        const auto& pairs = per_seed[g];
        if (pairs.x.size() != pairs.y.size() || pairs.x.size() < 10) {
            throw Error(ErrorKind::InsufficientPairs,
                        fmt::format("seed group {} has {} slide pairs; need >= 10", g, pairs.x.size()));
        }
        for (std::size_t c = 0; c < params.curves_per_seed; ++c) {
            const auto idx = subsample_indices(pairs.x.size(), params.subsample, params.seed,
                                               g * params.curves_per_seed + c);
            xs.clear();
            ys.clear();
            for (const auto i : idx) {
                xs.push_back(pairs.x[i]);
                ys.push_back(pairs.y[i]);
            }
            curves.push_back(fit(xs, ys, grid, params.fit));
        }
    }
    Band band;
    band.grid.assign(grid.begin(), grid.end());
    const double tail = (1.0 - params.level) / 2.0;
    std::vector<double> column(curves.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        double sum = 0.0;
        for (std::size_t c = 0; c < curves.size(); ++c) {
            column[c] = curves[c][k];
            sum += column[c];
        }
        const double mean = sum / static_cast<double>(curves.size());
        std::sort(column.begin(), column.end());
        band.mean.push_back(mean);
        band.lower.push_back(std::min(mean, stats::nearest_rank(column, tail)));
        band.upper.push_back(std::max(mean, stats::nearest_rank(column, 1.0 - tail)));
    }
    return band;
}

}  // namespace scanshift::lowess
