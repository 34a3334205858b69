#pragma once

#include "scanshift/cohort.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace scanshift {

/// Per-patient class labels for one or more named tasks, aligned with a patient list.
struct LabelTable {
    std::vector<PatientId> patients;
    std::map<std::string, std::vector<int>> tasks;

    /// Labels for `task`, reordered to follow `order`. Throws MissingLabels.
    std::vector<int> aligned(const std::string& task, const std::vector<PatientId>& order) const;
    /// max label + 1.
    int class_count(const std::string& task) const;
};

/// `labels.csv`: header `patient,task,label`, one row per (patient, task).
LabelTable read_labels(const std::filesystem::path& path);
void write_labels(const LabelTable& labels, const std::filesystem::path& path);

}  // namespace scanshift
