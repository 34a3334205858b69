#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace scanshift {

using PatientId = std::string;
using ScannerId = std::string;

/// Row-major K x d matrix; one tile feature vector per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Norm floor below which a vector has no defined direction.
inline constexpr double kMinNorm = 1e-12;

/// Tile embeddings of one slide. Construction validates that every row is
/// finite and has norm >= kMinNorm; a TileMatrix always has at least one row.
class TileMatrix {
public:
    TileMatrix() = default;
    explicit TileMatrix(RowMatrix rows);

    std::size_t tile_count() const { return static_cast<std::size_t>(rows_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(rows_.cols()); }
    const RowMatrix& rows() const { return rows_; }

    friend bool operator==(const TileMatrix& a, const TileMatrix& b) {
        return a.rows_.rows() == b.rows_.rows() && a.rows_.cols() == b.rows_.cols() &&
               a.rows_ == b.rows_;
    }

private:
    RowMatrix rows_;
};

/// N patients x S scanners grid of slides. Immutable after construction.
class Cohort {
public:
    /// `tiles` is patient-major: tiles[p * S + s].
    Cohort(std::vector<PatientId> patients, std::vector<ScannerId> scanners, std::size_t dim,
           std::vector<TileMatrix> tiles);

    std::size_t patient_count() const { return patients_.size(); }
    std::size_t scanner_count() const { return scanners_.size(); }
    std::size_t dim() const { return dim_; }

    const std::vector<PatientId>& patients() const { return patients_; }
    const std::vector<ScannerId>& scanners() const { return scanners_; }

    const TileMatrix& tiles(std::size_t patient, std::size_t scanner) const {
        return tiles_[patient * scanners_.size() + scanner];
    }
    const TileMatrix& tiles(std::string_view patient, std::string_view scanner) const;

    /// Throws UnknownScanner.
    std::size_t scanner_index(std::string_view scanner) const;
    /// Throws InvalidCohort.
    std::size_t patient_index(std::string_view patient) const;

    friend bool operator==(const Cohort& a, const Cohort& b) {
        return a.patients_ == b.patients_ && a.scanners_ == b.scanners_ && a.dim_ == b.dim_ &&
               a.tiles_ == b.tiles_;
    }

private:
    std::vector<PatientId> patients_;
    std::vector<ScannerId> scanners_;
    std::size_t dim_;
    std::vector<TileMatrix> tiles_;
};

/// Arithmetic mean of the rows, summed in row order. Throws EmptyBag for zero
/// rows and DegeneratePool when the mean's norm falls below kMinNorm.
Eigen::VectorXd mean_pool(const RowMatrix& tiles);
inline Eigen::VectorXd mean_pool(const TileMatrix& tiles) { return mean_pool(tiles.rows()); }

/// 1 - cos(u, v), clamped to [0, 2]. Throws ZeroNorm / ShapeMismatch.
double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v);

// Embedding store: manifest.json + one EMB1 binary per slide.

struct SlideFile {
    std::uint32_t tile_count = 0;
    std::uint32_t dim = 0;
    std::vector<float> values;  // row-major
};

/// Reads one EMB1 file without validating tile norms. Throws IoError / CorruptHeader.
SlideFile read_slide_file(const std::filesystem::path& path);
void write_slide_file(const std::filesystem::path& path, const RowMatrix& rows);

/// Loads and validates a cohort. Values are promoted from float32 to double.
Cohort load_cohort(const std::filesystem::path& manifest_path);

/// Writes `manifest.json` and slide files under `directory`; returns the manifest
/// path. Tile values are narrowed to float32, so a cohort round-trips exactly
/// only if its values are float-representable (true for anything loaded or
/// generated by this library).
std::filesystem::path save_store(const Cohort& cohort, const std::filesystem::path& directory);

}  // namespace scanshift
