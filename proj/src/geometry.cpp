#include "scanshift/geometry.hpp"

#include "scanshift/error.hpp"
#include "scanshift/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace scanshift {

namespace {

void require_distinct(std::size_t i, std::size_t j, const ScannerId& si) {
    if (i == j) {
        throw Error(ErrorKind::SameScanner,
                    fmt::format("metric needs two different scanners (got '{}' twice)", si));
    }
}

double directed_match_rate(const SlideEmbeddings& embs, std::size_t i, std::size_t j) {
    const std::size_t n = embs.patient_count();
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
        std::size_t best = 0;
        double best_d = cosine_distance(embs.at(p, i), embs.at(0, j));
        for (std::size_t q = 1; q < n; ++q) {
            const double d = cosine_distance(embs.at(p, i), embs.at(q, j));
            if (d < best_d) {
                best_d = d;
                best = q;
            }
        }
        if (best == p) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

// ranks[p * n + q] = position of q in p's neighbour list (distance, then index); self excluded.
std::vector<std::size_t> neighbour_ranks(const Eigen::MatrixXd& dist) {
    const auto n = static_cast<std::size_t>(dist.rows());
    std::vector<std::size_t> ranks(n * n, 0);
    std::vector<std::size_t> order;
    for (std::size_t p = 0; p < n; ++p) {
        order.clear();
        for (std::size_t q = 0; q < n; ++q) {
            if (q != p) order.push_back(q);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double da = dist(p, a);
            const double db = dist(p, b);
            return da < db || (da == db && a < b);
        });
        for (std::size_t r = 0; r < order.size(); ++r) ranks[p * n + order[r]] = r;
    }
    return ranks;
}

std::vector<std::size_t> resolve_scanners(const SlideEmbeddings& embs,
                                          const std::vector<ScannerId>& scanners) {
    std::vector<std::size_t> idx;
    if (scanners.empty()) {
        idx.resize(embs.scanner_count());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
    } else {
        for (const auto& s : scanners) idx.push_back(embs.scanner_index(s));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    }
    if (idx.size() < 2) {
        throw Error(ErrorKind::TooFewScanners, "IoK needs at least two distinct scanners");
    }
    return idx;
}

std::vector<double> iok_from_matrices(const std::vector<Eigen::MatrixXd>& mats) {
    const auto n = static_cast<std::size_t>(mats.front().rows());
    std::vector<std::size_t> worst(n * n, 0);
    for (const auto& m : mats) {
        const auto ranks = neighbour_ranks(m);
        for (std::size_t i = 0; i < worst.size(); ++i) worst[i] = std::max(worst[i], ranks[i]);
    }
    // q is in the intersection at neighbourhood size k iff its worst rank < k.
    std::vector<std::size_t> shared(n, 0);  // shared[k] summed over patients
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) {
            if (q != p) ++shared[worst[p * n + q] + 1];
        }
    }
    std::vector<double> curve;
    curve.reserve(n - 1);
    std::size_t cumulative = 0;
    for (std::size_t k = 1; k < n; ++k) {
        cumulative += shared[k];
        curve.push_back(static_cast<double>(cumulative) /
                        (static_cast<double>(k) * static_cast<double>(n)));
    }
    return curve;
}

}  // namespace

SlideEmbeddings::SlideEmbeddings(std::vector<PatientId> patients, std::vector<ScannerId> scanners,
                                 std::vector<Eigen::VectorXd> vectors)
    : patients_(std::move(patients)), scanners_(std::move(scanners)), vectors_(std::move(vectors)) {
    if (vectors_.size() != patients_.size() * scanners_.size()) {
        throw Error(ErrorKind::ShapeMismatch, "slide embedding grid is incomplete");
    }
    for (const auto& v : vectors_) {
        if (!v.allFinite() || !(v.norm() >= kMinNorm)) {
            throw Error(ErrorKind::ZeroNorm, "slide embedding must be finite with nonzero norm");
        }
    }
}

std::size_t SlideEmbeddings::scanner_index(const ScannerId& scanner) const {
    const auto it = std::find(scanners_.begin(), scanners_.end(), scanner);
    if (it == scanners_.end()) {
        throw Error(ErrorKind::UnknownScanner, fmt::format("unknown scanner '{}'", scanner));
    }
    return static_cast<std::size_t>(it - scanners_.begin());
}

SlideEmbeddings slide_embeddings(const Cohort& cohort) {
    std::vector<Eigen::VectorXd> vectors;
    vectors.reserve(cohort.patient_count() * cohort.scanner_count());
    for (std::size_t p = 0; p < cohort.patient_count(); ++p) {
        for (std::size_t s = 0; s < cohort.scanner_count(); ++s) {
            vectors.push_back(mean_pool(cohort.tiles(p, s)));
        }
    }
    return SlideEmbeddings(cohort.patients(), cohort.scanners(), std::move(vectors));
}

double avg_pairwise_cosine_distance(const SlideEmbeddings& embs, const ScannerId& si,
                                    const ScannerId& sj) {
    const std::size_t i = embs.scanner_index(si);
    const std::size_t j = embs.scanner_index(sj);
    require_distinct(i, j, si);
    double sum = 0.0;
    for (std::size_t p = 0; p < embs.patient_count(); ++p) {
        sum += cosine_distance(embs.at(p, i), embs.at(p, j));
    }
    return sum / static_cast<double>(embs.patient_count());
}

double nn_match_rate(const SlideEmbeddings& embs, const ScannerId& si, const ScannerId& sj,
                     MatchDirection direction) {
    const std::size_t i = embs.scanner_index(si);
    const std::size_t j = embs.scanner_index(sj);
    require_distinct(i, j, si);
    const double forward = directed_match_rate(embs, i, j);
    if (direction == MatchDirection::Forward) return forward;
    return 0.5 * (forward + directed_match_rate(embs, j, i));
}

DistanceMatrix distance_matrix(const SlideEmbeddings& embs, const ScannerId& scanner) {
    const std::size_t s = embs.scanner_index(scanner);
    const auto n = static_cast<Eigen::Index>(embs.patient_count());
    DistanceMatrix m{scanner, Eigen::MatrixXd::Zero(n, n)};
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = p + 1; q < n; ++q) {
            const double d = cosine_distance(embs.at(static_cast<std::size_t>(p), s),
                                             embs.at(static_cast<std::size_t>(q), s));
            m.values(p, q) = d;
            m.values(q, p) = d;
        }
    }
    return m;
}

double mantel_correlation(const DistanceMatrix& mi, const DistanceMatrix& mj) {
    const Eigen::Index n = mi.values.rows();
    if (mi.values.cols() != n || mj.values.rows() != n || mj.values.cols() != n) {
        throw Error(ErrorKind::ShapeMismatch, "Mantel correlation needs equally sized square matrices");
    }
    if (n < 3) {
        throw Error(ErrorKind::TooFewPatients, "Mantel correlation needs N >= 3");
    }
    const double count = static_cast<double>(n * (n - 1) / 2);
    double sx = 0.0;
    double sy = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = p + 1; q < n; ++q) {
            sx += mi.values(p, q);
            sy += mj.values(p, q);
        }
    }
    const double mx = sx / count;
    const double my = sy / count;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
        for (Eigen::Index q = p + 1; q < n; ++q) {
            const double dx = mi.values(p, q) - mx;
            const double dy = mj.values(p, q) - my;
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
    }
    if (sxx / count < 1e-24 || syy / count < 1e-24) {
        throw Error(ErrorKind::DegenerateVariance,
                    "Mantel correlation undefined: a distance matrix has ~zero variance");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

Eigen::VectorXd mean_intra_scanner_distances(const DistanceMatrix& m) {
    const Eigen::Index n = m.values.rows();
    if (n < 2) throw Error(ErrorKind::TooFewPatients, "mean intra-scanner distance needs N >= 2");
    Eigen::VectorXd out(n);
    for (Eigen::Index p = 0; p < n; ++p) {
        double sum = 0.0;
        for (Eigen::Index q = 0; q < n; ++q) {
            if (q != p) sum += m.values(p, q);
        }
        out[p] = sum / static_cast<double>(n - 1);
    }
    return out;
}

std::vector<double> iok_curve(const SlideEmbeddings& embs, const std::vector<ScannerId>& scanners) {
    const auto idx = resolve_scanners(embs, scanners);
    if (embs.patient_count() < 2) throw Error(ErrorKind::TooFewPatients, "IoK needs N >= 2");
    std::vector<Eigen::MatrixXd> mats;
    for (const auto s : idx) mats.push_back(distance_matrix(embs, embs.scanners()[s]).values);
    return iok_from_matrices(mats);
}

double iok(const SlideEmbeddings& embs, std::size_t k, const std::vector<ScannerId>& scanners) {
    const std::size_t n = embs.patient_count();
    if (k < 1 || k + 1 > n) {
        throw Error(ErrorKind::BadK, fmt::format("IoK neighbourhood size {} outside [1, {}]", k,
                                                 n == 0 ? 0 : n - 1));
    }
    return iok_curve(embs, scanners)[k - 1];
}

GeometryReport geometry_report(const Cohort& cohort, std::size_t threads) {
    return geometry_report(slide_embeddings(cohort), cohort.dim(), threads);
}

GeometryReport geometry_report(const SlideEmbeddings& embs, std::size_t dim, std::size_t threads) {
    const std::size_t ns = embs.scanner_count();
    const auto& ids = embs.scanners();

    std::vector<DistanceMatrix> mats(ns);
    parallel_for(ns, threads, [&](std::size_t s) { mats[s] = distance_matrix(embs, ids[s]); });

    GeometryReport r;
    r.scanners = ids;
    r.patients = embs.patients();
    r.patient_count = embs.patient_count();
    r.dim = dim;
    const auto sz = static_cast<Eigen::Index>(ns);
    r.cosine_distance = {"d_cos", ids, Eigen::MatrixXd::Zero(sz, sz), "0 (same scanner)"};
    r.match_rate = {"mr_1nn", ids, Eigen::MatrixXd::Ones(sz, sz), "1 (same scanner)"};
    r.match_rate_directed = {"mr_1nn_directed", ids, Eigen::MatrixXd::Ones(sz, sz),
                             "1 (same scanner)"};
    r.mantel = {"mantel", ids, Eigen::MatrixXd::Ones(sz, sz), "1 (self-correlation)"};

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t j = i + 1; j < ns; ++j) pairs.emplace_back(i, j);
    }
    struct PairResult {
        double dcos, forward, backward, mantel;
    };
    std::vector<PairResult> results(pairs.size());
    parallel_for(pairs.size(), threads, [&](std::size_t k) {
        const auto [i, j] = pairs[k];
        results[k] = {avg_pairwise_cosine_distance(embs, ids[i], ids[j]),
                      directed_match_rate(embs, i, j), directed_match_rate(embs, j, i),
                      mantel_correlation(mats[i], mats[j])};
    });
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(pairs[k].first);
        const auto j = static_cast<Eigen::Index>(pairs[k].second);
        const auto& res = results[k];
        r.cosine_distance.values(i, j) = r.cosine_distance.values(j, i) = res.dcos;
        r.match_rate_directed.values(i, j) = res.forward;
        r.match_rate_directed.values(j, i) = res.backward;
        r.match_rate.values(i, j) = r.match_rate.values(j, i) = 0.5 * (res.forward + res.backward);
        r.mantel.values(i, j) = r.mantel.values(j, i) = res.mantel;
    }
    for (std::size_t s = 0; s < ns; ++s) {
        r.mean_intra_distance[ids[s]] = mean_intra_scanner_distances(mats[s]);
    }
    std::vector<Eigen::MatrixXd> values;
    for (const auto& m : mats) values.push_back(m.values);
    r.iok = iok_from_matrices(values);
    return r;
}

}  // namespace scanshift
