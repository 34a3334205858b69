#pragma once

// Brute-force reference implementations used by the tests. They share no code
// with the library beyond its data types.

#include "scanshift/cohort.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Slides = std::vector<std::vector<Vec>>;  // [scanner][patient]

inline Vec pool(const scanshift::RowMatrix& rows) {
    Vec out(static_cast<std::size_t>(rows.cols()), 0.0);
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) out[static_cast<std::size_t>(c)] += rows(r, c);
    }
    for (auto& v : out) v /= static_cast<double>(rows.rows());
    return out;
}

inline Slides slides(const scanshift::Cohort& c) {
    Slides out(c.scanner_count());
    for (std::size_t s = 0; s < c.scanner_count(); ++s) {
        for (std::size_t p = 0; p < c.patient_count(); ++p) out[s].push_back(pool(c.tiles(p, s).rows()));
    }
    return out;
}

inline double cos_dist(const Vec& u, const Vec& v) {
    long double uv = 0, uu = 0, vv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        uv += static_cast<long double>(u[i]) * v[i];
        uu += static_cast<long double>(u[i]) * u[i];
        vv += static_cast<long double>(v[i]) * v[i];
    }
    const long double c = uv / (std::sqrt(uu) * std::sqrt(vv));
    return std::clamp(static_cast<double>(1.0L - c), 0.0, 2.0);
}

inline double dcos(const Slides& x, std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t p = 0; p < x[i].size(); ++p) s += cos_dist(x[i][p], x[j][p]);
    return s / static_cast<double>(x[i].size());
}

inline double match_rate_directed(const Slides& x, std::size_t i, std::size_t j) {
    const std::size_t n = x[i].size();
    int hits = 0;
    for (std::size_t p = 0; p < n; ++p) {
        std::vector<std::pair<double, std::size_t>> cand;
        for (std::size_t q = 0; q < n; ++q) cand.emplace_back(cos_dist(x[i][p], x[j][q]), q);
        std::sort(cand.begin(), cand.end());
        hits += cand.front().second == p ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

inline double match_rate(const Slides& x, std::size_t i, std::size_t j) {
    return 0.5 * (match_rate_directed(x, i, j) + match_rate_directed(x, j, i));
}

inline std::vector<Vec> dist_matrix(const Slides& x, std::size_t s) {
    const std::size_t n = x[s].size();
    std::vector<Vec> d(n, Vec(n, 0.0));
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t q = 0; q < n; ++q) d[p][q] = p == q ? 0.0 : cos_dist(x[s][p], x[s][q]);
    }
    return d;
}

inline double pearson(const Vec& a, const Vec& b) {
    const double n = static_cast<double>(a.size());
    long double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
    ma /= n;
    mb /= n;
    long double saa = 0, sbb = 0, sab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
        sab += (a[i] - ma) * (b[i] - mb);
    }
    return static_cast<double>(sab / std::sqrt(saa * sbb));
}

inline double mantel(const Slides& x, std::size_t i, std::size_t j) {
    const auto di = dist_matrix(x, i);
    const auto dj = dist_matrix(x, j);
    Vec a, b;
    for (std::size_t p = 0; p < di.size(); ++p) {
        for (std::size_t q = p + 1; q < di.size(); ++q) a.push_back(di[p][q]), b.push_back(dj[p][q]);
    }
    return pearson(a, b);
}

inline Vec intra(const Slides& x, std::size_t s) {
    const auto d = dist_matrix(x, s);
    Vec out;
    for (std::size_t p = 0; p < d.size(); ++p) {
        double sum = 0;
        for (std::size_t q = 0; q < d.size(); ++q) sum += p == q ? 0.0 : d[p][q];
        out.push_back(sum / static_cast<double>(d.size() - 1));
    }
    return out;
}

// k nearest neighbours of p in scanner s, self excluded, ties by index.
inline std::set<std::size_t> knn(const Slides& x, std::size_t s, std::size_t p, std::size_t k) {
    const auto d = dist_matrix(x, s);
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t q = 0; q < d.size(); ++q) {
        if (q != p) cand.emplace_back(d[p][q], q);
    }
    std::sort(cand.begin(), cand.end());
    std::set<std::size_t> out;
    for (std::size_t r = 0; r < k; ++r) out.insert(cand[r].second);
    return out;
}

inline double iok(const Slides& x, std::size_t k) {
    const std::size_t n = x[0].size();
    std::size_t total = 0;  // shared neighbours over all patients
    for (std::size_t p = 0; p < n; ++p) {
        std::set<std::size_t> common = knn(x, 0, p, k);
        for (std::size_t s = 1; s < x.size(); ++s) {
            const auto other = knn(x, s, p, k);
            std::set<std::size_t> next;
            std::set_intersection(common.begin(), common.end(), other.begin(), other.end(),
                                  std::inserter(next, next.begin()));
            common = std::move(next);
        }
        total += common.size();
    }
    return static_cast<double>(total) / (static_cast<double>(k) * static_cast<double>(n));
}

// AUC by counting every positive/negative pair.
inline double auc_pairs(const Vec& scores, const std::vector<int>& labels) {
    long long twice = 0, pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            twice += scores[i] > scores[j] ? 2 : scores[i] == scores[j] ? 1 : 0;
        }
    }
    return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

// Fleiss' kappa straight from the textbook definitions.
inline double fleiss(const std::vector<std::vector<int>>& ratings, int categories) {
    const double N = static_cast<double>(ratings.size());
    const double n = static_cast<double>(ratings[0].size());
    std::vector<std::vector<double>> nij(ratings.size(), std::vector<double>(static_cast<std::size_t>(categories), 0));
    for (std::size_t i = 0; i < ratings.size(); ++i) {
        for (const int c : ratings[i]) nij[i][static_cast<std::size_t>(c)] += 1;
    }
    double pbar = 0;
    for (const auto& row : nij) {
        double s = 0;
        for (const double v : row) s += v * (v - 1);
        pbar += s / (n * (n - 1));
    }
    pbar /= N;
    double pe = 0;
    for (int j = 0; j < categories; ++j) {
        double col = 0;
        for (const auto& row : nij) col += row[static_cast<std::size_t>(j)];
        const double pj = col / (N * n);
        pe += pj * pj;
    }
    return (pbar - pe) / (1 - pe);
}

}  // namespace oracle

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = std::filesystem::temp_directory_path() /
                ("scanshift_" + tag + "_" + std::to_string(rng() % 100000000));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline scanshift::RowMatrix random_rows(std::mt19937_64& rng, Eigen::Index k, Eigen::Index d) {
    std::normal_distribution<double> n01;
    scanshift::RowMatrix m(k, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(n01(rng));
    return m;
}

}  // namespace testutil
