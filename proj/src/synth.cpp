#include "scanshift/synth.hpp"

#include "scanshift/error.hpp"
#include "scanshift/stats.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

namespace scanshift::synth {

namespace {

// Substream tags. Each (tag, index) pair feeds its own generator.
constexpr std::uint64_t kLabelStream = 0;
constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kMapStream = 1000;
constexpr std::uint64_t kNoiseStream = 2000;

Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n01;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = n01(rng);
    }
    return m;
}

struct Map {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    bool identity = true;
};

Map scanner_map(const ScannerShift& shift, std::uint64_t seed, std::size_t s, std::size_t d) {
    auto rng = stats::replicate_stream(seed, kMapStream + s);
    const auto dim = static_cast<Eigen::Index>(d);
    const Eigen::MatrixXd m = normal_matrix(rng, dim, dim);
    Eigen::VectorXd dir = normal_matrix(rng, dim, 1).col(0);
    Map out;
    out.a = Eigen::MatrixXd::Identity(dim, dim);
    out.b = Eigen::VectorXd::Zero(dim);
    if (shift.mix > 0.0) {
        Eigen::MatrixXd g = m - m.transpose();
        const double spectral = Eigen::JacobiSVD<Eigen::MatrixXd>(g).singularValues()(0);
        if (spectral > 0.0) g /= spectral;
        out.a = (shift.mix * g).exp() * (1.0 + shift.mix);
        out.identity = false;
    }
    if (shift.offset > 0.0) {
        out.b = dir / dir.norm() * shift.offset;
        out.identity = false;
    }
    return out;
}

}  // namespace

std::string patient_name(std::size_t p) { return fmt::format("P{:04}", p); }
std::string scanner_name(std::size_t s) { return fmt::format("S{}", s); }

void SynthSpec::validate() const {
    auto bad = [](const std::string& msg) { throw Error(ErrorKind::BadSpec, msg); };
    if (n_patients < 2) bad("n_patients must be >= 2");
    if (scanners.size() < 2) bad("n_scanners must be >= 2");
    if (dim < 1) bad("dim must be >= 1");
    if (tiles_per_slide < 1) bad("tiles_per_slide must be >= 1");
    if (!(margin >= 0.0) || !std::isfinite(margin)) bad("margin must be a finite value >= 0");
    for (std::size_t s = 0; s < scanners.size(); ++s) {
        const auto& sh = scanners[s];
        for (const double v : {sh.offset, sh.mix, sh.noise}) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                bad(fmt::format("scanner {}: shift parameters must be finite and >= 0", s));
            }
        }
        if (sh.clone_of && *sh.clone_of >= s) {
            bad(fmt::format("scanner {}: clone_of must name an earlier scanner", s));
        }
    }
    if (scanners[0].offset != 0.0 || scanners[0].mix != 0.0 || scanners[0].clone_of) {
        bad("scanner 0 is the reference and must have offset = mix = 0");
    }
    if (tasks.size() > dim) bad("each task needs its own latent axis; too many tasks for dim");
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].classes < 2) bad(fmt::format("task '{}' needs >= 2 classes", tasks[t].name));
        if (static_cast<std::size_t>(tasks[t].classes) > n_patients) {
            bad(fmt::format("task '{}' has more classes than patients", tasks[t].name));
        }
        for (std::size_t u = 0; u < t; ++u) {
            if (tasks[u].name == tasks[t].name) bad(fmt::format("duplicate task '{}'", tasks[t].name));
        }
    }
}

Generated gen_cohort(const SynthSpec& spec) {
    spec.validate();
    const std::size_t n = spec.n_patients;
    const std::size_t S = spec.n_scanners();
    const auto d = static_cast<Eigen::Index>(spec.dim);
    const auto k = static_cast<Eigen::Index>(spec.tiles_per_slide);

    LabelTable labels;
    for (std::size_t p = 0; p < n; ++p) labels.patients.push_back(patient_name(p));
    {
        auto rng = stats::replicate_stream(spec.seed, kLabelStream);
        for (const auto& task : spec.tasks) {
            std::vector<int> y(n);
            for (std::size_t p = 0; p < n; ++p) y[p] = static_cast<int>(p % static_cast<std::size_t>(task.classes));
            std::shuffle(y.begin(), y.end(), rng);
            labels.tasks[task.name] = std::move(y);
        }
    }

    auto latent_rng = stats::replicate_stream(spec.seed, kLatentStream);
    Eigen::MatrixXd z = normal_matrix(latent_rng, d, static_cast<Eigen::Index>(n));
    for (std::size_t t = 0; t < spec.tasks.size(); ++t) {
        const auto& y = labels.tasks[spec.tasks[t].name];
        const int c_max = spec.tasks[t].classes - 1;
        for (std::size_t p = 0; p < n; ++p) {
            z(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p)) +=
                spec.margin * (2 * y[p] - c_max);
        }
    }

    // tiles[s][p]
    std::vector<std::vector<RowMatrix>> tiles(S, std::vector<RowMatrix>(n));
    for (std::size_t s = 0; s < S; ++s) {
        const auto& shift = spec.scanners[s];
        const Map map = scanner_map(shift, spec.seed, s, spec.dim);
        auto noise_rng = stats::replicate_stream(spec.seed, kNoiseStream + s);
        for (std::size_t p = 0; p < n; ++p) {
            const Eigen::MatrixXd noise = normal_matrix(noise_rng, k, d);
            RowMatrix t(k, d);
            if (shift.clone_of) {
                const RowMatrix& src = tiles[*shift.clone_of][p];
                t = map.identity ? src : RowMatrix((src * map.a.transpose()).rowwise() + map.b.transpose());
            } else {
                const Eigen::VectorXd mapped =
                    map.identity ? Eigen::VectorXd(z.col(static_cast<Eigen::Index>(p)))
                                 : Eigen::VectorXd(map.a * z.col(static_cast<Eigen::Index>(p)) + map.b);
                t = mapped.transpose().replicate(k, 1);
            }
            if (shift.noise > 0.0) t += shift.noise * noise;
            tiles[s][p] = t.cast<float>().cast<double>();
        }
    }

    std::vector<PatientId> patients = labels.patients;
    std::vector<ScannerId> scanners;
    for (std::size_t s = 0; s < S; ++s) scanners.push_back(scanner_name(s));
    std::vector<TileMatrix> grid;
    grid.reserve(n * S);
    for (std::size_t p = 0; p < n; ++p) {
        for (std::size_t s = 0; s < S; ++s) grid.emplace_back(std::move(tiles[s][p]));
    }
    return {Cohort(std::move(patients), std::move(scanners), spec.dim, std::move(grid)), std::move(labels)};
}

std::filesystem::path write_store(const Cohort& cohort, const LabelTable& labels,
                                  const std::filesystem::path& directory) {
    const auto manifest = save_store(cohort, directory);
    write_labels(labels, directory / "labels.csv");
    return manifest;
}

}  // namespace scanshift::synth
