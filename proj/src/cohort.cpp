#include "scanshift/cohort.hpp"

#include "scanshift/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <fmt/format.h>

namespace scanshift {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};
constexpr int kStoreVersion = 1;

void check_rows(const RowMatrix& rows, std::string_view where) {
    if (rows.rows() == 0) {
        throw Error(ErrorKind::EmptyBag, fmt::format("{}: tile matrix has no rows", where));
    }
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        double sq = 0.0;
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            const double x = rows(r, c);
            if (!std::isfinite(x)) {
                throw Error(ErrorKind::NonFiniteValue,
                            fmt::format("{}: non-finite value at row {}, column {}", where, r, c));
            }
            sq += x * x;
        }
        if (!(std::sqrt(sq) >= kMinNorm)) {
            throw Error(ErrorKind::ZeroNormTile,
                        fmt::format("{}: tile row {} has norm below {}", where, r, kMinNorm));
        }
    }
}

std::uint32_t read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::string slide_key(std::string_view scanner, std::string_view patient) {
    return fmt::format("{}/{}", scanner, patient);
}

template <typename T>
void require_unique(const std::vector<T>& ids, std::string_view what) {
    std::set<T> seen(ids.begin(), ids.end());
    if (seen.size() != ids.size()) {
        throw Error(ErrorKind::InvalidCohort, fmt::format("duplicate {} id", what));
    }
}

}  // namespace

TileMatrix::TileMatrix(RowMatrix rows) : rows_(std::move(rows)) { check_rows(rows_, "tile matrix"); }

Cohort::Cohort(std::vector<PatientId> patients, std::vector<ScannerId> scanners, std::size_t dim,
               std::vector<TileMatrix> tiles)
    : patients_(std::move(patients)),
      scanners_(std::move(scanners)),
      dim_(dim),
      tiles_(std::move(tiles)) {
    if (patients_.size() < 2 || scanners_.size() < 2 || dim_ < 1) {
        throw Error(ErrorKind::InvalidCohort,
                    fmt::format("cohort needs N >= 2, S >= 2, d >= 1 (got N={}, S={}, d={})",
                                patients_.size(), scanners_.size(), dim_));
    }
    require_unique(patients_, "patient");
    require_unique(scanners_, "scanner");
    if (tiles_.size() != patients_.size() * scanners_.size()) {
        throw Error(ErrorKind::MissingSlide, "cohort grid is incomplete");
    }
    for (std::size_t p = 0; p < patients_.size(); ++p) {
        for (std::size_t s = 0; s < scanners_.size(); ++s) {
            const auto& t = this->tiles(p, s);
            if (t.tile_count() == 0) {
                throw Error(ErrorKind::MissingSlide,
                            fmt::format("no tiles for ({}, {})", patients_[p], scanners_[s]));
            }
            if (t.dim() != dim_) {
                throw Error(ErrorKind::DimMismatch,
                            fmt::format("({}, {}): expected d={}, found {}", patients_[p],
                                        scanners_[s], dim_, t.dim()));
            }
        }
    }
}

const TileMatrix& Cohort::tiles(std::string_view patient, std::string_view scanner) const {
    return tiles(patient_index(patient), scanner_index(scanner));
}

std::size_t Cohort::scanner_index(std::string_view scanner) const {
    const auto it = std::find(scanners_.begin(), scanners_.end(), scanner);
    if (it == scanners_.end()) {
        throw Error(ErrorKind::UnknownScanner, fmt::format("unknown scanner '{}'", scanner));
    }
    return static_cast<std::size_t>(it - scanners_.begin());
}

std::size_t Cohort::patient_index(std::string_view patient) const {
    const auto it = std::find(patients_.begin(), patients_.end(), patient);
    if (it == patients_.end()) {
        throw Error(ErrorKind::InvalidCohort, fmt::format("unknown patient '{}'", patient));
    }
    return static_cast<std::size_t>(it - patients_.begin());
}

Eigen::VectorXd mean_pool(const RowMatrix& tiles) {
    const Eigen::Index k = tiles.rows();
    if (k == 0) throw Error(ErrorKind::EmptyBag, "mean_pool: bag has no tiles");
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(tiles.cols());
    for (Eigen::Index r = 0; r < k; ++r) {
        for (Eigen::Index c = 0; c < tiles.cols(); ++c) sum[c] += tiles(r, c);
    }
    sum /= static_cast<double>(k);
    if (!(sum.norm() >= kMinNorm)) {
        throw Error(ErrorKind::DegeneratePool, "mean_pool: pooled vector has near-zero norm");
    }
    return sum;
}

double cosine_distance(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    if (u.size() != v.size()) {
        throw Error(ErrorKind::ShapeMismatch,
                    fmt::format("cosine_distance: sizes {} and {}", u.size(), v.size()));
    }
    double uv = 0.0;
    double uu = 0.0;
    double vv = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
        uv += u[i] * v[i];
        uu += u[i] * u[i];
        vv += v[i] * v[i];
    }
    if (!(std::sqrt(uu) >= kMinNorm) || !(std::sqrt(vv) >= kMinNorm)) {
        throw Error(ErrorKind::ZeroNorm, "cosine_distance: vector norm below threshold");
    }
    // sqrt(uu * vv) rather than |u| * |v| so that u == v gives exactly 0.
    const double d = 1.0 - uv / std::sqrt(uu * vv);
    return std::clamp(d, 0.0, 2.0);
}

SlideFile read_slide_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
        throw Error(ErrorKind::CorruptHeader, fmt::format("{}: bad magic or truncated header",
                                                          path.string()));
    }
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    SlideFile f;
    f.tile_count = read_u32_le(raw + 4);
    f.dim = read_u32_le(raw + 8);
    const std::uint64_t n = std::uint64_t{f.tile_count} * f.dim;
    if (bytes.size() != 12 + 4 * n) {
        throw Error(ErrorKind::CorruptHeader,
                    fmt::format("{}: header declares {}x{} floats but payload is {} bytes",
                                path.string(), f.tile_count, f.dim, bytes.size() - 12));
    }
    f.values.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        f.values[i] = std::bit_cast<float>(read_u32_le(raw + 12 + 4 * i));
    }
    return f;
}

void write_slide_file(const fs::path& path, const RowMatrix& rows) {
    std::string out(kMagic.begin(), kMagic.end());
    out.reserve(12 + 4 * rows.size());
    put_u32_le(out, static_cast<std::uint32_t>(rows.rows()));
    put_u32_le(out, static_cast<std::uint32_t>(rows.cols()));
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        for (Eigen::Index c = 0; c < rows.cols(); ++c) {
            put_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(rows(r, c))));
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!os) throw Error(ErrorKind::IoError, fmt::format("short write to {}", path.string()));
}

Cohort load_cohort(const fs::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) {
        throw Error(ErrorKind::IoError, fmt::format("cannot open manifest {}", manifest_path.string()));
    }
    json m;
    try {
        m = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidManifest,
                    fmt::format("{}: {}", manifest_path.string(), e.what()));
    }

    std::size_t dim = 0;
    std::vector<PatientId> patients;
    std::vector<ScannerId> scanners;
    std::map<std::string, std::string> files;
    try {
        if (m.at("version").get<int>() != kStoreVersion) {
            throw Error(ErrorKind::InvalidManifest,
                        fmt::format("unsupported store version {}", m.at("version").dump()));
        }
        dim = m.at("dim").get<std::size_t>();
        patients = m.at("patients").get<std::vector<PatientId>>();
        scanners = m.at("scanners").get<std::vector<ScannerId>>();
        files = m.at("files").get<std::map<std::string, std::string>>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidManifest,
                    fmt::format("{}: {}", manifest_path.string(), e.what()));
    }

    const fs::path base = manifest_path.parent_path();
    std::vector<TileMatrix> tiles;
    tiles.reserve(patients.size() * scanners.size());
    for (const auto& p : patients) {
        for (const auto& s : scanners) {
            const auto it = files.find(slide_key(s, p));
            if (it == files.end()) {
                throw Error(ErrorKind::MissingSlide,
                            fmt::format("no slide file for patient '{}' on scanner '{}'", p, s));
            }
            const fs::path file = base / it->second;
            if (!fs::exists(file)) {
                throw Error(ErrorKind::MissingSlide,
                            fmt::format("slide file {} for ({}, {}) does not exist", file.string(),
                                        p, s));
            }
            const SlideFile sf = read_slide_file(file);
            if (sf.dim != dim) {
                throw Error(ErrorKind::DimMismatch,
                            fmt::format("{}: expected d={}, found {}", file.string(), dim, sf.dim));
            }
            RowMatrix rows(sf.tile_count, sf.dim);
            for (std::size_t i = 0; i < sf.values.size(); ++i) {
                rows.data()[i] = static_cast<double>(sf.values[i]);
            }
            check_rows(rows, fmt::format("patient '{}', scanner '{}'", p, s));
            tiles.emplace_back(std::move(rows));
        }
    }
    return Cohort(std::move(patients), std::move(scanners), dim, std::move(tiles));
}

fs::path save_store(const Cohort& cohort, const fs::path& directory) {
    std::error_code ec;
    fs::create_directories(directory / "slides", ec);
    if (ec) {
        throw Error(ErrorKind::IoError,
                    fmt::format("cannot create {}: {}", directory.string(), ec.message()));
    }
    json files = json::object();
    for (std::size_t s = 0; s < cohort.scanner_count(); ++s) {
        for (std::size_t p = 0; p < cohort.patient_count(); ++p) {
            const std::string rel = fmt::format("slides/s{:03}_p{:05}.emb", s, p);
            write_slide_file(directory / rel, cohort.tiles(p, s).rows());
            files[slide_key(cohort.scanners()[s], cohort.patients()[p])] = rel;
        }
    }
    json m = {{"version", kStoreVersion},
              {"dim", cohort.dim()},
              {"patients", cohort.patients()},
              {"scanners", cohort.scanners()},
              {"files", files}};
    const fs::path manifest = directory / "manifest.json";
    std::ofstream os(manifest, std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", manifest.string()));
    os << m.dump(2) << '\n';
    return manifest;
}

}  // namespace scanshift
