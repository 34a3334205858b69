#include "scanshift/labels.hpp"

#include "scanshift/error.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace scanshift {

std::vector<int> LabelTable::aligned(const std::string& task,
                                     const std::vector<PatientId>& order) const {
    const auto it = tasks.find(task);
    if (it == tasks.end()) {
        throw Error(ErrorKind::MissingLabels, fmt::format("no labels for task '{}'", task));
    }
    std::vector<int> out;
    out.reserve(order.size());
    for (const auto& p : order) {
        const auto pos = std::find(patients.begin(), patients.end(), p);
        if (pos == patients.end()) {
            throw Error(ErrorKind::MissingLabels,
                        fmt::format("no '{}' label for patient '{}'", task, p));
        }
        const int label = it->second[static_cast<std::size_t>(pos - patients.begin())];
        if (label < 0) {
            throw Error(ErrorKind::MissingLabels,
                        fmt::format("no '{}' label for patient '{}'", task, p));
        }
        out.push_back(label);
    }
    return out;
}

int LabelTable::class_count(const std::string& task) const {
    const auto it = tasks.find(task);
    if (it == tasks.end()) {
        throw Error(ErrorKind::MissingLabels, fmt::format("no labels for task '{}'", task));
    }
    return it->second.empty() ? 0 : *std::max_element(it->second.begin(), it->second.end()) + 1;
}

LabelTable read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::MissingLabels, fmt::format("cannot open {}", path.string()));
    std::string line;
    if (!std::getline(in, line) || line != "patient,task,label") {
        throw Error(ErrorKind::MissingLabels,
                    fmt::format("{}: expected header 'patient,task,label'", path.string()));
    }
    LabelTable t;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string patient, task, label;
        if (!std::getline(ss, patient, ',') || !std::getline(ss, task, ',') ||
            !std::getline(ss, label)) {
            throw Error(ErrorKind::MissingLabels,
                        fmt::format("{}:{}: malformed row", path.string(), lineno));
        }
        int value = 0;
        try {
            std::size_t used = 0;
            value = std::stoi(label, &used);
            if (used != label.size() || value < 0) throw std::invalid_argument("label");
        } catch (const std::exception&) {
            throw Error(ErrorKind::MissingLabels,
                        fmt::format("{}:{}: bad label '{}'", path.string(), lineno, label));
        }
        auto pos = std::find(t.patients.begin(), t.patients.end(), patient);
        std::size_t idx = static_cast<std::size_t>(pos - t.patients.begin());
        if (pos == t.patients.end()) {
            t.patients.push_back(patient);
            for (auto& [name, col] : t.tasks) col.push_back(-1);
        }
        auto& col = t.tasks[task];
        col.resize(t.patients.size(), -1);
        col[idx] = value;
    }
    return t;
}

void write_labels(const LabelTable& labels, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os << "patient,task,label\n";
    for (std::size_t p = 0; p < labels.patients.size(); ++p) {
        for (const auto& [task, col] : labels.tasks) {
            if (col[p] >= 0) os << labels.patients[p] << ',' << task << ',' << col[p] << '\n';
        }
    }
}

}  // namespace scanshift
