#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scanshift {

struct PredictionRow {
    std::string patient;
    std::string scanner;
    std::int64_t seed = 0;
    std::string task;
    std::vector<double> probs;
    int pred = 0;                 // argmax, lowest index on ties
    std::optional<int> label;
};

/// Argmax with lowest-index tie-break.
int argmax_class(const std::vector<double>& probs);

struct PredictionTable {
    std::vector<PredictionRow> rows;

    /// Throws InvalidPredictions when a row's probabilities do not sum to 1
    /// within 1e-6, or its pred is not the argmax.
    void validate() const;
    std::vector<std::string> tasks() const;
    std::size_t class_count(const std::string& task) const;
};

/// CSV: `patient,scanner,seed,task,p0,...,p{C-1},pred,label` (label may be
/// empty). All rows of one file share the same class count.
void write_predictions_csv(const PredictionTable& table, const std::filesystem::path& path);
PredictionTable read_predictions_csv(const std::filesystem::path& path);

}  // namespace scanshift
