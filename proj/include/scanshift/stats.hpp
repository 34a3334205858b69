#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace scanshift {

struct PredictionTable;

namespace stats {

/// Mann-Whitney AUC: (wins + 0.5 ties) / (n_pos * n_neg). Throws SingleClass.
double auc_binary(std::span<const double> scores, std::span<const int> labels);

/// Unweighted mean over classes of one-vs-rest AUC. `probs` is N x C.
/// Throws MissingClass.
double auc_ovr_macro(const Eigen::MatrixXd& probs, std::span<const int> labels);

/// Random stream used by bootstrap replicate `replicate`: mt19937_64 seeded
/// with seed_seq{seed_lo, seed_hi, replicate_lo, replicate_hi}.
std::mt19937_64 replicate_stream(std::uint64_t seed, std::uint64_t replicate);

struct Interval {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Statistic evaluated on a resample given as indices into the sample.
/// Returning nullopt marks the resample as degenerate; it is redrawn.
using ResampleStatistic = std::function<std::optional<double>(std::span<const std::size_t>)>;

/// Percentile bootstrap. Replicate b draws n indices uniformly with
/// replacement from replicate_stream(seed, b), redrawing from the same stream
/// while the statistic is degenerate. At most 10*B draws in total
/// (TooManyDegenerateResamples). Endpoints use nearest rank on the sorted
/// replicate statistics: rank ceil(q*B) for q = (1-level)/2 and (1+level)/2.
Interval bootstrap_ci(std::size_t n, const ResampleStatistic& statistic, std::size_t resamples = 1000,
                      double level = 0.95, std::uint64_t seed = 0);

Interval bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                       std::size_t resamples = 1000, double level = 0.95, std::uint64_t seed = 0);
Interval bootstrap_auc_ovr(const Eigen::MatrixXd& probs, std::span<const int> labels,
                           std::size_t resamples = 1000, double level = 0.95,
                           std::uint64_t seed = 0);

/// 1-based nearest-rank quantile of an ascending sample.
double nearest_rank(std::span<const double> sorted, double q);

/// Fleiss' kappa. `assignments` is subjects x raters, entries in [0, categories).
/// Throws IncompleteRatings for missing (negative / out of range) cells.
double fleiss_kappa(const Eigen::MatrixXi& assignments, int categories);

struct KappaSummary {
    std::vector<std::int64_t> seeds;
    std::vector<double> kappas;
    double mean = 0.0;
    double sd = 0.0;  // population sd over seeds
};

/// Fleiss' kappa per training seed with scanners as raters and patients as
/// subjects, using each row's predicted class. Throws IncompleteGrid.
KappaSummary consistency_report(const PredictionTable& table, const std::string& task);

}  // namespace stats
}  // namespace scanshift
