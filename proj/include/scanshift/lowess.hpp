#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace scanshift::lowess {

struct Params {
    double frac = 2.0 / 3.0;  // neighbourhood size as a fraction of the points
    int robust_iters = 3;     // bisquare reweighting passes
};

/// `points` equispaced values covering [0, 1] inclusive.
std::vector<double> unit_grid(std::size_t points = 100);

/// Locally weighted linear regression (tricube kernel over the ceil(frac*N)
/// nearest x-neighbours, bisquare robustness weights from 6 * median |residual|)
/// evaluated at each grid point. Input order does not matter. Throws TooFewPoints.
std::vector<double> fit(std::span<const double> x, std::span<const double> y,
                        std::span<const double> grid, const Params& params = {});

/// Paired probabilities of the same slides from two scanners for one training seed.
struct Pairs {
    std::vector<double> x;
    std::vector<double> y;
};

struct Band {
    std::vector<double> grid;
    std::vector<double> mean;
    std::vector<double> lower;
    std::vector<double> upper;
};

struct BootstrapParams {
    std::size_t curves_per_seed = 100;
    double subsample = 0.5;
    double level = 0.95;
    Params fit;
    std::uint64_t seed = 0;
};

/// Indices of the slides used by one bootstrap curve: round(subsample * n)
/// indices, uniform without replacement, in ascending order. Curve c of seed
/// group g draws from stats::replicate_stream(seed, g * curves_per_seed + c)
/// with a partial Fisher-Yates shuffle (uniform_int_distribution(i, n-1)).
std::vector<std::size_t> subsample_indices(std::size_t n, double subsample, std::uint64_t seed,
                                           std::uint64_t stream);

/// Fits curves_per_seed curves per seed group on random subsamples, pools all
/// curves and returns the pointwise mean with a nearest-rank percentile
/// envelope (clamped so lower <= mean <= upper). Throws InsufficientPairs when
/// a group has fewer than 10 pairs.
Band bootstrap(std::span<const Pairs> per_seed, std::span<const double> grid,
               const BootstrapParams& params = {});

}  // namespace scanshift::lowess
