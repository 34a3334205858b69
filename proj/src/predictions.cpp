#include "scanshift/predictions.hpp"

#include "scanshift/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace scanshift {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

int argmax_class(const std::vector<double>& probs) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

void PredictionTable::validate() const {
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const double sum = std::accumulate(r.probs.begin(), r.probs.end(), 0.0);
        if (r.probs.size() < 2 || !(std::abs(sum - 1.0) <= 1e-6)) {
            throw Error(ErrorKind::InvalidPredictions,
                        fmt::format("row {}: probabilities sum to {}", i, sum));
        }
        if (r.pred != argmax_class(r.probs)) {
            throw Error(ErrorKind::InvalidPredictions,
                        fmt::format("row {}: pred {} is not the argmax", i, r.pred));
        }
    }
}

std::vector<std::string> PredictionTable::tasks() const {
    std::vector<std::string> out;
    for (const auto& r : rows) {
        if (std::find(out.begin(), out.end(), r.task) == out.end()) out.push_back(r.task);
    }
    return out;
}

std::size_t PredictionTable::class_count(const std::string& task) const {
    for (const auto& r : rows) {
        if (r.task == task) return r.probs.size();
    }
    throw Error(ErrorKind::InvalidPredictions, fmt::format("no rows for task '{}'", task));
}

void write_predictions_csv(const PredictionTable& table, const std::filesystem::path& path) {
    table.validate();
    const std::size_t classes = table.rows.empty() ? 2 : table.rows.front().probs.size();
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os << "patient,scanner,seed,task";
    for (std::size_t c = 0; c < classes; ++c) os << ",p" << c;
    os << ",pred,label\n";
    for (const auto& r : table.rows) {
        if (r.probs.size() != classes) {
            throw Error(ErrorKind::InvalidPredictions, "rows of one CSV must share the class count");
        }
        os << fmt::format("{},{},{},{}", r.patient, r.scanner, r.seed, r.task);
        for (const double p : r.probs) os << fmt::format(",{:.17g}", p);
        os << ',' << r.pred << ',';
        if (r.label) os << *r.label;
        os << '\n';
    }
}

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, fmt::format("cannot open {}", path.string()));
    std::string line;
    if (!std::getline(in, line)) {
        throw Error(ErrorKind::InvalidPredictions, fmt::format("{}: empty file", path.string()));
    }
    const auto header = split_csv(line);
    if (header.size() < 8 || header[0] != "patient" || header[3] != "task" ||
        header[header.size() - 2] != "pred" || header.back() != "label") {
        throw Error(ErrorKind::InvalidPredictions, fmt::format("{}: bad header", path.string()));
    }
    const std::size_t classes = header.size() - 6;
    PredictionTable table;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != header.size()) {
            throw Error(ErrorKind::InvalidPredictions,
                        fmt::format("{}:{}: expected {} fields", path.string(), lineno, header.size()));
        }
        try {
            PredictionRow r;
            r.patient = f[0];
            r.scanner = f[1];
            r.seed = std::stoll(f[2]);
            r.task = f[3];
            for (std::size_t c = 0; c < classes; ++c) r.probs.push_back(std::stod(f[4 + c]));
            r.pred = std::stoi(f[4 + classes]);
            if (!f.back().empty()) r.label = std::stoi(f.back());
            table.rows.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::InvalidPredictions,
                        fmt::format("{}:{}: unparsable field", path.string(), lineno));
        }
    }
    table.validate();
    return table;
}

}  // namespace scanshift
