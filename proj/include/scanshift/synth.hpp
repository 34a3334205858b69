#pragma once

#include "scanshift/cohort.hpp"
#include "scanshift/labels.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scanshift::synth {

/// Scanner map T(z) = A z + b with A = exp(mix * G) * (1 + mix) for a seeded
/// skew-symmetric G, |b| = offset; tiles get `noise` * N(0, 1) added.
struct ScannerShift {
    double offset = 0.0;  // delta
    double mix = 0.0;     // gamma
    double noise = 0.0;   // sigma
    // When set, this scanner re-scans the tiles of scanner `clone_of` instead of
    // the latent vectors, so it differs from that scanner only by its own shift.
    std::optional<std::size_t> clone_of;
};

struct TaskSpec {
    std::string name;
    int classes = 2;
};

struct SynthSpec {
    std::size_t n_patients = 64;
    std::size_t dim = 32;
    std::size_t tiles_per_slide = 8;
    std::vector<ScannerShift> scanners = std::vector<ScannerShift>(5);
    std::vector<TaskSpec> tasks = {{"bin", 2}, {"multi3", 3}};
    double margin = 2.0;  // class means sit margin * (2c - (C-1)) along the task axis
    std::uint64_t seed = 0;

    std::size_t n_scanners() const { return scanners.size(); }
    /// Throws BadSpec.
    void validate() const;
};

struct Generated {
    Cohort cohort;
    LabelTable labels;
};

/// Fully determined by the spec. The random streams consumed do not depend on
/// the shift magnitudes, so changing one scanner's offset leaves every other
/// draw untouched. Values are rounded to float32.
Generated gen_cohort(const SynthSpec& spec);

/// Store files plus `labels.csv` in `directory`. Returns the manifest path.
std::filesystem::path write_store(const Cohort& cohort, const LabelTable& labels,
                                  const std::filesystem::path& directory);

/// Patient and scanner naming used by the generator.
std::string patient_name(std::size_t p);
std::string scanner_name(std::size_t s);

}  // namespace scanshift::synth
