#pragma once

#include "scanshift/geometry.hpp"
#include "scanshift/lowess.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scanshift::report {

using json = nlohmann::json;

/// UTC time as ISO 8601, for the `generated_at` field.
std::string utc_timestamp();

json geometry_json(const GeometryReport& r);

/// Long form `metric,scanner_i,scanner_j,patient,k,value`:
/// one row per unordered scanner pair for cosine_distance, match_rate and
/// mantel; one row per (scanner, patient) for mean_intra_distance; one row per
/// k for iok. Unused key columns are empty.
std::string geometry_csv(const GeometryReport& r);

/// `{:.17g}`, shortest text that reads back to the same double.
std::string num(double v);

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> lower;  // optional shaded band
    std::vector<double> upper;
};

std::string heatmap_svg(const PairMetricGrid& grid);
std::string curve_svg(const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<Series>& series,
                      std::optional<std::pair<double, double>> y_range = std::nullopt,
                      bool diagonal = false);

/// Throws IoError.
void write_text(const std::filesystem::path& path, const std::string& text);
/// Pretty-printed with a trailing newline.
void write_json(const std::filesystem::path& path, const json& j);

}  // namespace scanshift::report
