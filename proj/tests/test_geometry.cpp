#include "oracles.hpp"

#include "scanshift/error.hpp"
#include "scanshift/geometry.hpp"
#include "scanshift/synth.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace scanshift;

namespace {

synth::Generated shifted(std::uint64_t seed, std::size_t n, std::size_t s, std::size_t d = 8) {
    synth::SynthSpec spec;
    spec.n_patients = n;
    spec.dim = d;
    spec.tiles_per_slide = 4;
    spec.seed = seed;
    spec.tasks = {{"bin", 2}};
    spec.scanners.assign(s, {});
    spec.scanners[0].noise = 0.3;
    for (std::size_t j = 1; j < s; ++j) spec.scanners[j] = {0.4 * static_cast<double>(j), 0.2, 0.5, std::nullopt};
    return synth::gen_cohort(spec);
}

SlideEmbeddings from_vectors(const std::vector<std::vector<Eigen::VectorXd>>& by_scanner) {
    const std::size_t s = by_scanner.size();
    const std::size_t n = by_scanner[0].size();
    std::vector<PatientId> patients;
    std::vector<ScannerId> scanners;
    std::vector<Eigen::VectorXd> v;
    for (std::size_t p = 0; p < n; ++p) patients.push_back("p" + std::to_string(p));
    for (std::size_t j = 0; j < s; ++j) scanners.push_back("s" + std::to_string(j));
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t j = 0; j < s; ++j) v.push_back(by_scanner[j][p]);
    }
    return SlideEmbeddings(patients, scanners, v);
}

Cohort permute_patients(const Cohort& c, const std::vector<std::size_t>& perm) {
    std::vector<PatientId> patients;
    std::vector<TileMatrix> tiles;
    for (const auto p : perm) {
        patients.push_back(c.patients()[p]);
        for (std::size_t s = 0; s < c.scanner_count(); ++s) tiles.push_back(c.tiles(p, s));
    }
    return Cohort(patients, c.scanners(), c.dim(), tiles);
}

Cohort scale_scanner(const Cohort& c, std::size_t scanner, double factor) {
    std::vector<TileMatrix> tiles;
    for (std::size_t p = 0; p < c.patient_count(); ++p) {
        for (std::size_t s = 0; s < c.scanner_count(); ++s) {
            tiles.emplace_back(s == scanner ? RowMatrix(c.tiles(p, s).rows() * factor) : c.tiles(p, s).rows());
        }
    }
    return Cohort(c.patients(), c.scanners(), c.dim(), tiles);
}

}  // namespace

TEST(SlideEmbeddings, GridAndRecomputation) {
    const auto g = shifted(1, 6, 3);
    const auto e = slide_embeddings(g.cohort);
    EXPECT_EQ(e.patient_count() * e.scanner_count(), 18u);
    for (const auto& [p, s] : {std::pair{0, 0}, {3, 1}, {5, 2}}) {
        const auto ref = oracle::pool(g.cohort.tiles(static_cast<std::size_t>(p), static_cast<std::size_t>(s)).rows());
        for (std::size_t c = 0; c < ref.size(); ++c) {
            EXPECT_NEAR(e.at(static_cast<std::size_t>(p), static_cast<std::size_t>(s))[static_cast<Eigen::Index>(c)], ref[c], 1e-12);
        }
    }
}

TEST(Geometry, MatchesBruteForceOracles) {
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        const std::size_t n = 4 + seed % 7;  // 4..10
        const std::size_t s = 2 + seed % 3;
        const auto g = shifted(seed, n, s);
        const auto x = oracle::slides(g.cohort);
        const auto r = geometry_report(g.cohort);
        for (std::size_t i = 0; i < s; ++i) {
            EXPECT_NEAR(r.cosine_distance.values(i, i), 0.0, 0.0);
            for (std::size_t j = 0; j < s; ++j) {
                if (i == j) continue;
                const auto I = static_cast<Eigen::Index>(i);
                const auto J = static_cast<Eigen::Index>(j);
                EXPECT_NEAR(r.cosine_distance.values(I, J), oracle::dcos(x, i, j), 1e-12);
                EXPECT_EQ(r.match_rate_directed.values(I, J), oracle::match_rate_directed(x, i, j));
                EXPECT_EQ(r.match_rate.values(I, J), oracle::match_rate(x, i, j));
                EXPECT_NEAR(r.mantel.values(I, J), oracle::mantel(x, i, j), 1e-12);
            }
            const auto ref = oracle::intra(x, i);
            const auto& got = r.mean_intra_distance.at(g.cohort.scanners()[i]);
            for (std::size_t p = 0; p < n; ++p) EXPECT_NEAR(got[static_cast<Eigen::Index>(p)], ref[p], 1e-12);
        }
        ASSERT_EQ(r.iok.size(), n - 1);
        for (std::size_t k = 1; k < n; ++k) EXPECT_EQ(r.iok[k - 1], oracle::iok(x, k)) << "seed " << seed << " k " << k;
    }
}

TEST(Geometry, IdentityCohort) {
    synth::SynthSpec spec;
    spec.n_patients = 12;
    spec.dim = 6;
    spec.scanners.assign(2, {});
    spec.tasks = {{"bin", 2}};
    const auto g = synth::gen_cohort(spec);
    const auto r = geometry_report(g.cohort);
    EXPECT_EQ(r.cosine_distance.values(0, 1), 0.0);
    EXPECT_EQ(r.match_rate.values(0, 1), 1.0);
    EXPECT_NEAR(r.mantel.values(0, 1), 1.0, 1e-12);
    for (const double v : r.iok) EXPECT_EQ(v, 1.0);
}

TEST(Geometry, DerangementGivesZeroMatchRate) {
    const auto g = shifted(3, 8, 2);
    const auto e = slide_embeddings(g.cohort);
    std::vector<std::vector<Eigen::VectorXd>> v(2);
    for (std::size_t p = 0; p < 8; ++p) {
        v[0].push_back(e.at(p, 0));
        v[1].push_back(e.at((p + 1) % 8, 0));
    }
    const auto d = from_vectors(v);
    EXPECT_EQ(nn_match_rate(d, "s0", "s1", MatchDirection::Forward), 0.0);
    EXPECT_EQ(nn_match_rate(d, "s0", "s1"), 0.0);
}

TEST(Geometry, SmallKnownValues) {
    // Per-patient distances 0.2 and 0.4 between the two scanners.
    auto unit = [](double angle) { return Eigen::Vector2d(std::cos(angle), std::sin(angle)); };
    const double a1 = std::acos(1.0 - 0.2);
    const double a2 = std::acos(1.0 - 0.4);
    const auto e = from_vectors({{unit(0.0), unit(2.0)}, {unit(a1), unit(2.0 + a2)}});
    EXPECT_NEAR(avg_pairwise_cosine_distance(e, "s0", "s1"), 0.3, 1e-12);

    const auto ortho = from_vectors({{unit(0.0), unit(M_PI / 2)}, {unit(0.0), unit(M_PI / 2)}});
    const auto m = distance_matrix(ortho, "s0");
    EXPECT_NEAR(m.values(0, 1), 1.0, 1e-15);
    EXPECT_EQ(m.values(0, 0), 0.0);
    const auto intra = mean_intra_scanner_distances(DistanceMatrix{"x", (Eigen::Matrix2d() << 0, 0.6, 0.6, 0).finished()});
    EXPECT_EQ(intra, Eigen::Vector2d(0.6, 0.6));

    const auto single = from_vectors({{unit(0.3)}, {unit(0.4)}});
    EXPECT_EQ(distance_matrix(single, "s0").values, Eigen::MatrixXd::Zero(1, 1));

    const auto same = from_vectors({{unit(0.3), unit(0.3), unit(0.3)}, {unit(0.1), unit(0.1), unit(0.1)}});
    EXPECT_EQ(mean_intra_scanner_distances(distance_matrix(same, "s0")), Eigen::Vector3d::Zero());
}

TEST(Mantel, SelfAffineAndErrors) {
    const auto g = shifted(8, 9, 2);
    const auto e = slide_embeddings(g.cohort);
    const auto m = distance_matrix(e, "S0");
    EXPECT_NEAR(mantel_correlation(m, m), 1.0, 1e-15);
    DistanceMatrix affine{"a", m.values * 2.5};
    affine.values.array() += 0.7;
    affine.values.diagonal().setZero();
    EXPECT_NEAR(mantel_correlation(m, affine), 1.0, 1e-12);

    // N=6 random symmetric matrices against the textbook formula.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(6, 6), b = Eigen::MatrixXd::Zero(6, 6);
    std::vector<double> xa, xb;
    for (int p = 0; p < 6; ++p) {
        for (int q = p + 1; q < 6; ++q) {
            a(p, q) = a(q, p) = u(rng);
            b(p, q) = b(q, p) = u(rng);
            xa.push_back(a(p, q));
            xb.push_back(b(p, q));
        }
    }
    EXPECT_NEAR(mantel_correlation({"a", a}, {"b", b}), oracle::pearson(xa, xb), 1e-12);

    const DistanceMatrix flat{"f", Eigen::MatrixXd::Constant(4, 4, 0.5)};
    EXPECT_THROW(mantel_correlation(flat, flat), Error);
    try {
        mantel_correlation(flat, m);
    } catch (const Error& err) {
        EXPECT_TRUE(err.kind() == ErrorKind::DegenerateVariance || err.kind() == ErrorKind::ShapeMismatch);
    }
    const DistanceMatrix two{"t", (Eigen::Matrix2d() << 0, 1, 1, 0).finished()};
    try {
        mantel_correlation(two, two);
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::TooFewPatients);
    }
}

TEST(IoK, EndpointsRangeAndErrors) {
    const auto g = shifted(12, 10, 3);
    const auto e = slide_embeddings(g.cohort);
    const auto curve = iok_curve(e);
    EXPECT_EQ(curve.back(), 1.0);
    for (const double v : curve) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(iok(e, 2, {"S0", "S2"}), oracle::iok({oracle::slides(g.cohort)[0], oracle::slides(g.cohort)[2]}, 2));
    for (const std::size_t bad : {std::size_t{0}, std::size_t{10}}) {
        try {
            iok(e, bad);
            ADD_FAILURE();
        } catch (const Error& err) {
            EXPECT_EQ(err.kind(), ErrorKind::BadK);
        }
    }
    try {
        iok(e, 2, {"S1"});
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::TooFewScanners);
    }
}

TEST(Geometry, PairErrors) {
    const auto e = slide_embeddings(shifted(2, 5, 2).cohort);
    try {
        avg_pairwise_cosine_distance(e, "S0", "S0");
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::SameScanner);
    }
    try {
        nn_match_rate(e, "S0", "nope");
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::UnknownScanner);
    }
}

TEST(Geometry, PermutationInvariance) {
    const auto g = shifted(21, 10, 3);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(4));
    const auto a = geometry_report(g.cohort);
    const auto b = geometry_report(permute_patients(g.cohort, perm));
    // Summation order changes with the permutation, so real-valued metrics agree to rounding.
    EXPECT_TRUE(a.cosine_distance.values.isApprox(b.cosine_distance.values, 1e-12));
    EXPECT_TRUE(a.mantel.values.isApprox(b.mantel.values, 1e-12));
    EXPECT_EQ(a.match_rate.values, b.match_rate.values);
    EXPECT_EQ(a.iok, b.iok);
    for (const auto& s : g.cohort.scanners()) {
        for (std::size_t p = 0; p < 10; ++p) {
            EXPECT_NEAR(b.mean_intra_distance.at(s)[static_cast<Eigen::Index>(p)],
                        a.mean_intra_distance.at(s)[static_cast<Eigen::Index>(perm[p])], 1e-12);
        }
    }
}

TEST(Geometry, ScaleInvariance) {
    const auto g = shifted(22, 10, 3);
    const auto a = geometry_report(g.cohort);
    const auto b = geometry_report(scale_scanner(g.cohort, 1, 7.3));
    EXPECT_LT((a.cosine_distance.values - b.cosine_distance.values).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((a.mantel.values - b.mantel.values).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(a.match_rate.values, b.match_rate.values);
    EXPECT_EQ(a.iok, b.iok);
    for (const auto& s : g.cohort.scanners()) {
        EXPECT_LT((a.mean_intra_distance.at(s) - b.mean_intra_distance.at(s)).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Geometry, ReportSymmetryAndThreadIndependence) {
    const auto g = shifted(30, 16, 4);
    const auto a = geometry_report(g.cohort, 1);
    const auto b = geometry_report(g.cohort, 3);
    EXPECT_EQ(a.cosine_distance.values, a.cosine_distance.values.transpose());
    EXPECT_EQ(a.mantel.values, a.mantel.values.transpose());
    EXPECT_EQ(a.cosine_distance.values, b.cosine_distance.values);
    EXPECT_EQ(a.mantel.values, b.mantel.values);
    EXPECT_EQ(a.match_rate_directed.values, b.match_rate_directed.values);
    EXPECT_EQ(a.iok, b.iok);
}

TEST(Geometry, MonotoneShiftOrdering) {
    synth::SynthSpec spec;
    spec.n_patients = 32;
    spec.dim = 16;
    spec.tasks = {{"bin", 2}};
    spec.scanners = {{}, {0.5, 0, 0, std::nullopt}, {1.0, 0, 0, std::nullopt}, {2.0, 0, 0, std::nullopt}};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        spec.seed = seed;
        const auto r = geometry_report(synth::gen_cohort(spec).cohort);
        EXPECT_LT(r.cosine_distance.values(0, 1), r.cosine_distance.values(0, 2));
        EXPECT_LT(r.cosine_distance.values(0, 2), r.cosine_distance.values(0, 3));
    }
}
