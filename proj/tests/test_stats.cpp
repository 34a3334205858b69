#include "oracles.hpp"

#include "scanshift/error.hpp"
#include "scanshift/predictions.hpp"
#include "scanshift/stats.hpp"

#include <gtest/gtest.h>

using namespace scanshift;
using namespace scanshift::stats;

namespace {

std::mt19937_64 replay_stream(std::uint64_t seed, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(b & 0xffffffffu), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

Eigen::MatrixXi grid(const std::vector<std::vector<int>>& rows) {
    Eigen::MatrixXi m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
        }
    }
    return m;
}

}  // namespace

TEST(Auc, KnownValues) {
    EXPECT_EQ(auc_binary(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_EQ(auc_binary(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}), 0.5);
    EXPECT_EQ(auc_binary(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
}

TEST(Auc, EqualsPairCountingOracle) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 2 + rng() % 49;
        std::vector<double> s(n);
        std::vector<int> y(n);
        std::uniform_int_distribution<int> coarse(0, 9);  // coarse scores force ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = trial % 2 ? coarse(rng) / 10.0 : std::uniform_real_distribution<double>()(rng);
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_EQ(auc_binary(s, y), oracle::auc_pairs(s, y));
    }
}

TEST(Auc, MonotoneTransformAndComplement) {
    std::mt19937_64 rng(2);
    std::vector<double> s(30);
    std::vector<int> y(30), flipped(30);
    for (std::size_t i = 0; i < 30; ++i) {
        s[i] = std::uniform_real_distribution<double>(-3, 3)(rng);
        y[i] = static_cast<int>(i % 3 == 0);
        flipped[i] = 1 - y[i];
    }
    std::vector<double> t(30);
    std::transform(s.begin(), s.end(), t.begin(), [](double v) { return std::exp(3 * v) + 1; });
    EXPECT_EQ(auc_binary(s, y), auc_binary(t, y));
    EXPECT_NEAR(auc_binary(s, flipped), 1.0 - auc_binary(s, y), 1e-15);
}

TEST(Auc, Errors) {
    try {
        auc_binary(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1});
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingleClass);
    }
    Eigen::MatrixXd p(4, 3);
    p.setConstant(1.0 / 3);
    try {
        auc_ovr_macro(p, std::vector<int>{0, 1, 0, 1});
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MissingClass);
    }
}

TEST(AucOvr, BinaryReductionAndOracle) {
    std::mt19937_64 rng(8);
    Eigen::MatrixXd p2(20, 2);
    std::vector<int> y2(20);
    for (int i = 0; i < 20; ++i) {
        const double v = std::uniform_real_distribution<double>()(rng);
        p2(i, 0) = 1 - v;
        p2(i, 1) = v;
        y2[static_cast<std::size_t>(i)] = i % 2;
    }
    EXPECT_NEAR(auc_ovr_macro(p2, y2), auc_binary(std::vector<double>(p2.col(1).data(), p2.col(1).data() + 20), y2),
                1e-12);

    Eigen::MatrixXd p3(12, 3);
    std::vector<int> y3(12);
    for (int i = 0; i < 12; ++i) {
        Eigen::Vector3d r = Eigen::Vector3d::Random().array().abs() + 0.01;
        p3.row(i) = (r / r.sum()).transpose();
        y3[static_cast<std::size_t>(i)] = i % 3;
    }
    double sum = 0;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> col(p3.col(c).data(), p3.col(c).data() + 12);
        std::vector<int> yc(12);
        for (int i = 0; i < 12; ++i) yc[static_cast<std::size_t>(i)] = y3[static_cast<std::size_t>(i)] == c;
        sum += oracle::auc_pairs(col, yc);
    }
    EXPECT_NEAR(auc_ovr_macro(p3, y3), sum / 3, 1e-12);
}

TEST(Bootstrap, ConstantStatisticAndDeterminism) {
    const auto iv = bootstrap_ci(10, [](std::span<const std::size_t>) { return std::optional<double>(0.42); }, 50);
    EXPECT_EQ(iv.lower, 0.42);
    EXPECT_EQ(iv.point, 0.42);
    EXPECT_EQ(iv.upper, 0.42);
    std::vector<double> s = {0.1, 0.7, 0.3, 0.9, 0.5, 0.2, 0.8, 0.4};
    std::vector<int> y = {0, 1, 0, 1, 1, 0, 1, 0};
    const auto a = bootstrap_auc(s, y, 300, 0.95, 5);
    const auto b = bootstrap_auc(s, y, 300, 0.95, 5);
    EXPECT_EQ(a.lower, b.lower);
    EXPECT_EQ(a.upper, b.upper);
    EXPECT_EQ(a.point, auc_binary(s, y));
    EXPECT_LE(a.lower, a.point);
    EXPECT_GE(a.upper, a.point);
}

TEST(Bootstrap, ReplaysIndexStream) {
    const std::vector<double> s = {0.15, 0.62, 0.33, 0.91, 0.48, 0.27, 0.74, 0.41, 0.55, 0.08};
    const std::vector<int> y = {0, 1, 0, 1, 1, 0, 1, 0, 0, 1};
    constexpr std::size_t B = 200;
    constexpr std::uint64_t seed = 123456789012345ULL;
    std::vector<double> stats_ref;
    for (std::size_t b = 0; b < B; ++b) {
        auto rng = replay_stream(seed, b);
        std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
        for (;;) {
            std::vector<double> rs;
            std::vector<int> ry;
            for (std::size_t i = 0; i < s.size(); ++i) {
                const auto k = pick(rng);
                rs.push_back(s[k]);
                ry.push_back(y[k]);
            }
            const int pos = std::accumulate(ry.begin(), ry.end(), 0);
            if (pos == 0 || pos == static_cast<int>(ry.size())) continue;
            stats_ref.push_back(oracle::auc_pairs(rs, ry));
            break;
        }
    }
    std::sort(stats_ref.begin(), stats_ref.end());
    // Nearest rank: ceil(0.025 * 200) = 5, ceil(0.975 * 200) = 195.
    const auto iv = bootstrap_auc(s, y, B, 0.95, seed);
    EXPECT_EQ(iv.lower, stats_ref[4]);
    EXPECT_EQ(iv.upper, stats_ref[194]);
}

TEST(Bootstrap, TooManyDegenerateResamples) {
    try {
        bootstrap_ci(30, [](std::span<const std::size_t>) { return std::optional<double>(); }, 20);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingleClass);
    }
    std::size_t calls = 0;
    try {
        bootstrap_ci(
            30,
            [&](std::span<const std::size_t> idx) -> std::optional<double> {
                ++calls;
                if (idx.size() == 30 && calls == 1) return 1.0;  // full sample
                return std::nullopt;
            },
            20);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooManyDegenerateResamples);
    }
    EXPECT_EQ(calls, 1u + 200u);
}

TEST(NearestRank, Convention) {
    const std::vector<double> v = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    EXPECT_EQ(nearest_rank(v, 0.025), 1);
    EXPECT_EQ(nearest_rank(v, 0.5), 5);
    EXPECT_EQ(nearest_rank(v, 0.975), 10);
    EXPECT_EQ(nearest_rank(v, 0.3), 3);
}

TEST(Fleiss, PerfectAgreement) {
    EXPECT_EQ(fleiss_kappa(grid({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}}), 3), 1.0);
    EXPECT_EQ(fleiss_kappa(grid({{1, 1}, {1, 1}}), 2), 1.0);  // one category used
}

TEST(Fleiss, HandCountsMatchFormula) {
    const auto g = grid({{0, 0, 0, 0, 0}, {0, 0, 0, 0, 1}, {0, 0, 0, 1, 1}});
    // P_i = (20, 12, 8)/20; P_bar = 2/3; p = (12/15, 3/15); P_e = 0.68.
    const double expected = (2.0 / 3.0 - 0.68) / (1 - 0.68);
    EXPECT_NEAR(fleiss_kappa(g, 2), expected, 1e-12);
    EXPECT_NEAR(fleiss_kappa(g, 2), oracle::fleiss({{0, 0, 0, 0, 0}, {0, 0, 0, 0, 1}, {0, 0, 0, 1, 1}}, 2), 1e-12);
}

TEST(Fleiss, RandomOracleAndRelabeling) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 30);
        const int s = 2 + static_cast<int>(rng() % 5);
        const int c = 2 + static_cast<int>(rng() % 3);
        std::vector<std::vector<int>> rows(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(s)));
        for (auto& r : rows) {
            for (auto& v : r) v = static_cast<int>(rng() % static_cast<unsigned>(c));
        }
        const auto g = grid(rows);
        const double k = fleiss_kappa(g, c);
        bool single = true;
        for (const auto& r : rows) {
            for (const int v : r) single = single && v == rows[0][0];
        }
        if (!single) {
            EXPECT_NEAR(k, oracle::fleiss(rows, c), 1e-12);
        }
        std::vector<int> relabel(static_cast<std::size_t>(c));
        std::iota(relabel.begin(), relabel.end(), 0);
        std::shuffle(relabel.begin(), relabel.end(), rng);
        auto g2 = g;
        for (Eigen::Index i = 0; i < g2.size(); ++i) g2.data()[i] = relabel[static_cast<std::size_t>(g.data()[i])];
        EXPECT_NEAR(fleiss_kappa(g2, c), k, 1e-12);
    }
}

TEST(Fleiss, IndependentUniformNearZero) {
    std::mt19937_64 rng(2024);
    Eigen::MatrixXi g(2000, 5);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<int>(rng() % 3);
    const double k = fleiss_kappa(g, 3);
    EXPECT_GT(k, -0.05);
    EXPECT_LT(k, 0.05);
}

TEST(Fleiss, MissingCell) {
    try {
        fleiss_kappa(grid({{0, 1}, {-1, 0}}), 2);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IncompleteRatings);
    }
}

namespace {

PredictionTable table_from(const std::vector<Eigen::MatrixXi>& per_seed, int classes) {
    PredictionTable t;
    for (std::size_t seed = 0; seed < per_seed.size(); ++seed) {
        const auto& g = per_seed[seed];
        for (Eigen::Index p = 0; p < g.rows(); ++p) {
            for (Eigen::Index s = 0; s < g.cols(); ++s) {
                PredictionRow r;
                r.patient = "p" + std::to_string(p);
                r.scanner = "s" + std::to_string(s);
                r.seed = static_cast<std::int64_t>(seed);
                r.task = "t";
                r.probs.assign(static_cast<std::size_t>(classes), 0.1 / (classes - 1));
                r.probs[static_cast<std::size_t>(g(p, s))] = 0.9;
                r.pred = g(p, s);
                t.rows.push_back(r);
            }
        }
    }
    return t;
}

}  // namespace

TEST(Consistency, PerSeedKappa) {
    const std::vector<Eigen::MatrixXi> grids = {grid({{0, 0, 1}, {1, 1, 1}, {2, 2, 0}, {0, 2, 1}}),
                                                grid({{0, 0, 0}, {1, 1, 1}, {2, 2, 2}, {0, 0, 0}}),
                                                grid({{1, 0, 1}, {1, 2, 1}, {2, 2, 0}, {0, 0, 1}})};
    const auto r = consistency_report(table_from(grids, 3), "t");
    ASSERT_EQ(r.kappas.size(), 3u);
    double mean = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        std::vector<std::vector<int>> rows;
        for (Eigen::Index p = 0; p < 4; ++p) rows.push_back({grids[i](p, 0), grids[i](p, 1), grids[i](p, 2)});
        EXPECT_NEAR(r.kappas[i], oracle::fleiss(rows, 3), 1e-12);
        mean += r.kappas[i] / 3;
    }
    EXPECT_NEAR(r.mean, mean, 1e-15);
    double var = 0;
    for (const double k : r.kappas) var += (k - mean) * (k - mean) / 3;
    EXPECT_NEAR(r.sd, std::sqrt(var), 1e-15);
}

TEST(Consistency, IdenticalScannersAndSingleSeed) {
    const auto r = consistency_report(table_from({grid({{0, 0}, {1, 1}, {1, 1}}), grid({{1, 1}, {0, 0}, {1, 1}})}, 2), "t");
    EXPECT_EQ(r.mean, 1.0);
    EXPECT_EQ(r.sd, 0.0);
    const auto one = consistency_report(table_from({grid({{0, 1}, {1, 1}, {0, 0}})}, 2), "t");
    EXPECT_EQ(one.sd, 0.0);
}

TEST(Consistency, IncompleteGrid) {
    auto t = table_from({grid({{0, 1}, {1, 1}, {0, 0}})}, 2);
    t.rows.pop_back();
    try {
        consistency_report(t, "t");
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::IncompleteGrid);
    }
}

TEST(Predictions, CsvRoundTripAndValidation) {
    testutil::TempDir dir("preds");
    auto t = table_from({grid({{0, 1}, {1, 1}, {0, 0}})}, 2);
    t.rows[0].label = 1;
    t.rows[0].probs = {0.1234567890123456789, 1 - 0.1234567890123456789};
    t.rows[0].pred = 1;
    write_predictions_csv(t, dir / "p.csv");
    const auto back = read_predictions_csv(dir / "p.csv");
    ASSERT_EQ(back.rows.size(), t.rows.size());
    EXPECT_EQ(back.rows[0].probs, t.rows[0].probs);
    EXPECT_EQ(back.rows[0].label, std::optional<int>(1));
    EXPECT_FALSE(back.rows[1].label.has_value());
    t.rows[2].pred = 1 - t.rows[2].pred;
    EXPECT_THROW(write_predictions_csv(t, dir / "q.csv"), Error);
}
