#pragma once

#include "scanshift/cohort.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace scanshift {

/// Mean-pooled slide embeddings for every (patient, scanner) cell of a cohort.
class SlideEmbeddings {
public:
    SlideEmbeddings(std::vector<PatientId> patients, std::vector<ScannerId> scanners,
                    std::vector<Eigen::VectorXd> vectors);

    std::size_t patient_count() const { return patients_.size(); }
    std::size_t scanner_count() const { return scanners_.size(); }
    const std::vector<PatientId>& patients() const { return patients_; }
    const std::vector<ScannerId>& scanners() const { return scanners_; }

    const Eigen::VectorXd& at(std::size_t patient, std::size_t scanner) const {
        return vectors_[patient * scanners_.size() + scanner];
    }
    /// Throws UnknownScanner.
    std::size_t scanner_index(const ScannerId& scanner) const;

private:
    std::vector<PatientId> patients_;
    std::vector<ScannerId> scanners_;
    std::vector<Eigen::VectorXd> vectors_;
};

SlideEmbeddings slide_embeddings(const Cohort& cohort);

/// Mean over patients of the cosine distance between a patient's two slides.
double avg_pairwise_cosine_distance(const SlideEmbeddings& embs, const ScannerId& si,
                                    const ScannerId& sj);

enum class MatchDirection { Forward, Symmetrized };

/// Fraction of patients whose nearest slide on `sj` (all patients are
/// candidates, lowest index wins ties) is their own. Symmetrized averages
/// both directions.
double nn_match_rate(const SlideEmbeddings& embs, const ScannerId& si, const ScannerId& sj,
                     MatchDirection direction = MatchDirection::Symmetrized);

struct DistanceMatrix {
    ScannerId scanner;
    Eigen::MatrixXd values;  // N x N, symmetric, zero diagonal
};

DistanceMatrix distance_matrix(const SlideEmbeddings& embs, const ScannerId& scanner);

/// Pearson correlation of the strictly upper-triangular entries.
double mantel_correlation(const DistanceMatrix& mi, const DistanceMatrix& mj);

/// Per-patient mean distance to every other patient (row sum / (N-1)).
Eigen::VectorXd mean_intra_scanner_distances(const DistanceMatrix& m);

/// Average fraction of each patient's k nearest neighbours shared by every
/// scanner in `scanners` (empty = all scanners).
double iok(const SlideEmbeddings& embs, std::size_t k, const std::vector<ScannerId>& scanners = {});

/// IoK for every k in [1, N-1]; element k-1 holds IoK_k.
std::vector<double> iok_curve(const SlideEmbeddings& embs,
                              const std::vector<ScannerId>& scanners = {});

/// S x S grid of one pairwise metric, rows/columns in scanner order.
struct PairMetricGrid {
    std::string metric;
    std::vector<ScannerId> scanners;
    Eigen::MatrixXd values;
    std::string diagonal;  // how diagonal cells are defined
};

struct GeometryReport {
    std::vector<ScannerId> scanners;
    std::vector<PatientId> patients;
    std::size_t patient_count = 0;
    std::size_t dim = 0;
    PairMetricGrid cosine_distance;     // symmetric, diagonal 0
    PairMetricGrid match_rate;          // symmetrized, diagonal 1
    PairMetricGrid match_rate_directed; // row = query scanner, column = target
    PairMetricGrid mantel;              // symmetric, diagonal 1
    std::map<ScannerId, Eigen::VectorXd> mean_intra_distance;
    std::vector<double> iok;            // k = 1..N-1
};

GeometryReport geometry_report(const Cohort& cohort, std::size_t threads = 1);
GeometryReport geometry_report(const SlideEmbeddings& embs, std::size_t dim, std::size_t threads = 1);

}  // namespace scanshift
