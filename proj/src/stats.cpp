#include "scanshift/stats.hpp"

#include "scanshift/error.hpp"
#include "scanshift/predictions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>

namespace scanshift::stats {

namespace {

std::vector<int> binary_column(std::span<const int> labels, int positive) {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i] == positive ? 1 : 0;
    return out;
}

}  // namespace

double auc_binary(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw Error(ErrorKind::ShapeMismatch, "scores and labels differ in length");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uint64_t n_pos = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) {
            throw Error(ErrorKind::InvalidPredictions, "AUC scores must be finite");
        }
        if (labels[i] != 0 && labels[i] != 1) {
            throw Error(ErrorKind::InvalidPredictions, "binary AUC labels must be 0 or 1");
        }
        n_pos += static_cast<std::uint64_t>(labels[i]);
    }
    const std::uint64_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw Error(ErrorKind::SingleClass, "AUC needs at least one positive and one negative");
    }
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Twice the Mann-Whitney U statistic, kept as an integer so the result is exact.
    std::uint64_t twice_wins = 0;
    std::uint64_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::uint64_t pos_group = 0;
        std::uint64_t neg_group = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos_group : neg_group) += 1;
            ++j;
        }
        twice_wins += pos_group * (2 * neg_below + neg_group);
        neg_below += neg_group;
        i = j;
    }
    return static_cast<double>(twice_wins) / (2.0 * static_cast<double>(n_pos * n_neg));
}

double auc_ovr_macro(const Eigen::MatrixXd& probs, std::span<const int> labels) {
    if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
        throw Error(ErrorKind::ShapeMismatch, "probability rows and labels differ in length");
    }
    const auto classes = static_cast<int>(probs.cols());
    double sum = 0.0;
    std::vector<double> column(labels.size());
    for (int c = 0; c < classes; ++c) {
        const auto y = binary_column(labels, c);
        const auto members = std::count(y.begin(), y.end(), 1);
        if (members == 0 || members == static_cast<long>(y.size())) {
            throw Error(ErrorKind::MissingClass,
                        fmt::format("class {} needs both members and non-members for OvR AUC", c));
        }
        for (std::size_t i = 0; i < labels.size(); ++i) column[i] = probs(static_cast<Eigen::Index>(i), c);
        sum += auc_binary(column, y);
    }
    return sum / static_cast<double>(classes);
}

std::mt19937_64 replicate_stream(std::uint64_t seed, std::uint64_t replicate) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(replicate),
                      static_cast<std::uint32_t>(replicate >> 32)};
    return std::mt19937_64(seq);
}

double nearest_rank(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw Error(ErrorKind::TooFewPoints, "quantile of an empty sample");
    const auto n = static_cast<double>(sorted.size());
    // Guard against q * n landing a hair above an integer.
    auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

Interval bootstrap_ci(std::size_t n, const ResampleStatistic& statistic, std::size_t resamples,
                      double level, std::uint64_t seed) {
    if (n == 0 || resamples == 0 || !(level > 0.0 && level < 1.0)) {
        throw Error(ErrorKind::TooFewPoints, "bootstrap needs n >= 1, B >= 1 and level in (0, 1)");
    }
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const auto point = statistic(all);
    if (!point) throw Error(ErrorKind::SingleClass, "statistic undefined on the full sample");

    const std::size_t max_draws = 10 * resamples;
    std::size_t draws = 0;
    std::vector<double> values;
    values.reserve(resamples);
    std::vector<std::size_t> idx(n);
    for (std::size_t b = 0; b < resamples; ++b) {
        auto rng = replicate_stream(seed, b);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        for (;;) {
            if (++draws > max_draws) {
                throw Error(ErrorKind::TooManyDegenerateResamples,
                            fmt::format("more than {} bootstrap draws needed for {} resamples",
                                        max_draws, resamples));
            }
            for (auto& i : idx) i = pick(rng);
            if (const auto v = statistic(idx)) {
                values.push_back(*v);
                break;
            }
        }
    }
    std::sort(values.begin(), values.end());
    const double tail = (1.0 - level) / 2.0;
    return {*point, nearest_rank(values, tail), nearest_rank(values, 1.0 - tail)};
}

Interval bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                       std::size_t resamples, double level, std::uint64_t seed) {
    if (scores.size() != labels.size()) {
        throw Error(ErrorKind::ShapeMismatch, "scores and labels differ in length");
    }
    std::vector<double> s;
    std::vector<int> y;
    return bootstrap_ci(
        scores.size(),
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
            s.clear();
            y.clear();
            int pos = 0;
            for (const auto i : idx) {
                s.push_back(scores[i]);
                y.push_back(labels[i]);
                pos += labels[i];
            }
            if (pos == 0 || pos == static_cast<int>(idx.size())) return std::nullopt;
            return auc_binary(s, y);
        },
        resamples, level, seed);
}

Interval bootstrap_auc_ovr(const Eigen::MatrixXd& probs, std::span<const int> labels,
                           std::size_t resamples, double level, std::uint64_t seed) {
    if (static_cast<std::size_t>(probs.rows()) != labels.size()) {
        throw Error(ErrorKind::ShapeMismatch, "probability rows and labels differ in length");
    }
    const auto classes = probs.cols();
    Eigen::MatrixXd p;
    std::vector<int> y;
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes));
    return bootstrap_ci(
        labels.size(),
        [&](std::span<const std::size_t> idx) -> std::optional<double> {
            p.resize(static_cast<Eigen::Index>(idx.size()), classes);
            y.clear();
            std::fill(counts.begin(), counts.end(), 0);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                p.row(static_cast<Eigen::Index>(r)) = probs.row(static_cast<Eigen::Index>(idx[r]));
                y.push_back(labels[idx[r]]);
                ++counts[static_cast<std::size_t>(labels[idx[r]])];
            }
            for (const auto c : counts) {
                if (c == 0 || c == idx.size()) return std::nullopt;
            }
            return auc_ovr_macro(p, y);
        },
        resamples, level, seed);
}

double fleiss_kappa(const Eigen::MatrixXi& assignments, int categories) {
    const auto subjects = assignments.rows();
    const auto raters = assignments.cols();
    if (subjects < 2 || raters < 2 || categories < 1) {
        throw Error(ErrorKind::IncompleteRatings, "Fleiss' kappa needs >= 2 subjects and >= 2 raters");
    }
    std::vector<double> totals(static_cast<std::size_t>(categories), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(categories));
    const double r = static_cast<double>(raters);
    double agreement_sum = 0.0;
    for (Eigen::Index i = 0; i < subjects; ++i) {
        std::fill(counts.begin(), counts.end(), 0);
        for (Eigen::Index j = 0; j < raters; ++j) {
            const int c = assignments(i, j);
            if (c < 0 || c >= categories) {
                throw Error(ErrorKind::IncompleteRatings,
                            fmt::format("subject {} rater {} has no valid category", i, j));
            }
            ++counts[static_cast<std::size_t>(c)];
        }
        double sq = 0.0;
        for (std::size_t c = 0; c < counts.size(); ++c) {
            sq += static_cast<double>(counts[c]) * counts[c];
            totals[c] += counts[c];
        }
        agreement_sum += (sq - r) / (r * (r - 1.0));
    }
    const double p_bar = agreement_sum / static_cast<double>(subjects);
    double p_e = 0.0;
    for (const double t : totals) {
        const double p = t / (static_cast<double>(subjects) * r);
        p_e += p * p;
    }
    if (p_e >= 1.0) return 1.0;  // a single category was used, so agreement is perfect
    return (p_bar - p_e) / (1.0 - p_e);
}

KappaSummary consistency_report(const PredictionTable& table, const std::string& task) {
    std::vector<std::string> patients;
    std::vector<std::string> scanners;
    std::map<std::int64_t, std::map<std::pair<std::size_t, std::size_t>, int>> cells;
    auto index_of = [](std::vector<std::string>& ids, const std::string& id) {
        const auto it = std::find(ids.begin(), ids.end(), id);
        if (it != ids.end()) return static_cast<std::size_t>(it - ids.begin());
        ids.push_back(id);
        return ids.size() - 1;
    };
    for (const auto& row : table.rows) {
        if (row.task != task) continue;
        const auto p = index_of(patients, row.patient);
        const auto s = index_of(scanners, row.scanner);
        if (!cells[row.seed].emplace(std::make_pair(p, s), row.pred).second) {
            throw Error(ErrorKind::IncompleteGrid,
                        fmt::format("duplicate prediction for ({}, {}, seed {})", row.patient,
                                    row.scanner, row.seed));
        }
    }
    if (cells.empty()) {
        throw Error(ErrorKind::IncompleteGrid, fmt::format("no predictions for task '{}'", task));
    }
    const int categories = static_cast<int>(table.class_count(task));
    KappaSummary out;
    for (const auto& [seed, grid] : cells) {
        Eigen::MatrixXi a(static_cast<Eigen::Index>(patients.size()),
                          static_cast<Eigen::Index>(scanners.size()));
        for (std::size_t p = 0; p < patients.size(); ++p) {
            for (std::size_t s = 0; s < scanners.size(); ++s) {
                const auto it = grid.find({p, s});
                if (it == grid.end()) {
                    throw Error(ErrorKind::IncompleteGrid,
                                fmt::format("seed {}: no prediction for patient '{}' on scanner '{}'",
                                            seed, patients[p], scanners[s]));
                }
                a(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(s)) = it->second;
            }
        }
        out.seeds.push_back(seed);
        out.kappas.push_back(fleiss_kappa(a, categories));
    }
    const double n = static_cast<double>(out.kappas.size());
    out.mean = std::accumulate(out.kappas.begin(), out.kappas.end(), 0.0) / n;
    double ss = 0.0;
    for (const double k : out.kappas) ss += (k - out.mean) * (k - out.mean);
    out.sd = std::sqrt(ss / n);
    return out;
}

}  // namespace scanshift::stats
