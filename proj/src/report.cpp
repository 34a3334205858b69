#include "scanshift/report.hpp"

#include "scanshift/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/chrono.h>
#include <fmt/format.h>

namespace scanshift::report {

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

json grid_json(const PairMetricGrid& g) {
    return {{"diagonal", g.diagonal}, {"values", matrix_json(g.values)}};
}

// Two-stop colour ramp, dark blue to yellow.
std::string ramp(double t) {
    t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
    const auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
    return fmt::format("#{:02x}{:02x}{:02x}", mix(0x2c, 0xfd), mix(0x35, 0xe7), mix(0x8c, 0x25));
}

std::string escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b", "#e377c2", "#17becf"};

}  // namespace

std::string utc_timestamp() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                       std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()));
}

std::string num(double v) { return fmt::format("{:.17g}", v); }

json geometry_json(const GeometryReport& r) {
    json intra = json::object();
    for (const auto& s : r.scanners) {
        const auto& v = r.mean_intra_distance.at(s);
        intra[s] = std::vector<double>(v.data(), v.data() + v.size());
    }
    json iok_k = json::array();
    for (std::size_t k = 1; k <= r.iok.size(); ++k) iok_k.push_back(k);
    return {
        {"patients", r.patient_count},
        {"patient_ids", r.patients},
        {"dim", r.dim},
        {"scanners", r.scanners},
        {"metrics",
         {{"cosine_distance", grid_json(r.cosine_distance)},
          {"match_rate", grid_json(r.match_rate)},
          {"match_rate_directed", grid_json(r.match_rate_directed)},
          {"mantel", grid_json(r.mantel)},
          {"mean_intra_distance", intra},
          {"iok", {{"k", iok_k}, {"values", r.iok}}}}},
    };
}

std::string geometry_csv(const GeometryReport& r) {
    std::string out = "metric,scanner_i,scanner_j,patient,k,value\n";
    const std::size_t S = r.scanners.size();
    for (const auto* g : {&r.cosine_distance, &r.match_rate, &r.mantel}) {
        for (std::size_t i = 0; i < S; ++i) {
            for (std::size_t j = i + 1; j < S; ++j) {
                out += fmt::format("{},{},{},,,{}\n", g->metric, r.scanners[i], r.scanners[j],
                                   num(g->values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
            }
        }
    }
    for (const auto& s : r.scanners) {
        const auto& v = r.mean_intra_distance.at(s);
        for (Eigen::Index p = 0; p < v.size(); ++p) {
            out += fmt::format("mean_intra_distance,{},,{},,{}\n", s, r.patients[static_cast<std::size_t>(p)],
                               num(v(p)));
        }
    }
    for (std::size_t k = 1; k <= r.iok.size(); ++k) {
        out += fmt::format("iok,,,,{},{}\n", k, num(r.iok[k - 1]));
    }
    return out;
}

std::string heatmap_svg(const PairMetricGrid& grid) {
    const auto S = static_cast<int>(grid.scanners.size());
    constexpr int cell = 64;
    constexpr int margin = 80;
    const int size = margin + S * cell + 20;
    double lo = grid.values.size() ? grid.values.minCoeff() : 0.0;
    double hi = grid.values.size() ? grid.values.maxCoeff() : 1.0;
    if (!(hi > lo)) hi = lo + 1.0;
    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
        "font-family=\"sans-serif\" font-size=\"12\">\n"
        "<text x=\"{2}\" y=\"20\" font-size=\"14\">{3}</text>\n",
        size, size + 10, margin, escape(grid.metric));
    for (int i = 0; i < S; ++i) {
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", margin - 6,
                           margin + i * cell + cell / 2 + 4, escape(grid.scanners[static_cast<std::size_t>(i)]));
        svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                           margin + i * cell + cell / 2, margin - 8,
                           escape(grid.scanners[static_cast<std::size_t>(i)]));
        for (int j = 0; j < S; ++j) {
            const double v = grid.values(i, j);
            const double t = (v - lo) / (hi - lo);
            svg += fmt::format(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"/>"
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"{}\">{:.3f}</text>\n",
                margin + j * cell, margin + i * cell, cell, cell, ramp(t), margin + j * cell + cell / 2,
                margin + i * cell + cell / 2 + 4, t > 0.6 ? "#000" : "#fff", v);
        }
    }
    svg += "</svg>\n";
    return svg;
}

std::string curve_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, std::optional<std::pair<double, double>> y_range,
                      bool diagonal) {
    constexpr double w = 480;
    constexpr double h = 360;
    constexpr double left = 60;
    constexpr double top = 30;
    constexpr double pw = 390;
    constexpr double ph = 280;
    double x0 = std::numeric_limits<double>::infinity();
    double x1 = -x0;
    double y0 = x0;
    double y1 = -x0;
    for (const auto& s : series) {
        for (const double v : s.x) x0 = std::min(x0, v), x1 = std::max(x1, v);
        for (const auto* ys : {&s.y, &s.lower, &s.upper}) {
            for (const double v : *ys) y0 = std::min(y0, v), y1 = std::max(y1, v);
        }
    }
    if (y_range) std::tie(y0, y1) = *y_range;
    if (!(x1 > x0)) x0 = 0.0, x1 = 1.0;
    if (!(y1 > y0)) y1 = y0 + 1.0;
    const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    const auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };

    std::string svg = fmt::format(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
        "font-size=\"12\">\n<text x=\"{}\" y=\"18\" font-size=\"14\">{}</text>\n"
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        w, h, left, escape(title), left, top, pw, ph);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", left + pw / 2, h - 8,
                       escape(x_label));
    svg += fmt::format("<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">{}</text>\n",
                       top + ph / 2, top + ph / 2, escape(y_label));
    for (int t = 0; t <= 4; ++t) {
        const double xv = x0 + (x1 - x0) * t / 4.0;
        const double yv = y0 + (y1 - y0) * t / 4.0;
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv),
                           top + ph + 16, xv);
        svg += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3g}</text>\n", left - 4,
                           py(yv) + 4, yv);
    }
    if (diagonal) {
        const double a = std::max(x0, y0);
        const double b = std::min(x1, y1);
        if (b > a) {
            svg += fmt::format(
                "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" stroke=\"#999\" "
                "stroke-dasharray=\"4 3\"/>\n",
                px(a), py(a), px(b), py(b));
        }
    }
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        const char* colour = kPalette[i % std::size(kPalette)];
        if (!s.lower.empty() && s.lower.size() == s.x.size() && s.upper.size() == s.x.size()) {
            std::string pts;
            for (std::size_t k = 0; k < s.x.size(); ++k) pts += fmt::format("{:.2f},{:.2f} ", px(s.x[k]), py(s.upper[k]));
            for (std::size_t k = s.x.size(); k-- > 0;) pts += fmt::format("{:.2f},{:.2f} ", px(s.x[k]), py(s.lower[k]));
            svg += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.25\" stroke=\"none\"/>\n", pts,
                               colour);
        }
        std::string pts;
        for (std::size_t k = 0; k < s.x.size() && k < s.y.size(); ++k) {
            pts += fmt::format("{:.2f},{:.2f} ", px(s.x[k]), py(s.y[k]));
        }
        svg += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", pts,
                           colour);
        svg += fmt::format("<text x=\"{}\" y=\"{}\" fill=\"{}\">{}</text>\n", left + 8, top + 16 + 14 * i, colour,
                           escape(s.label));
    }
    svg += "</svg>\n";
    return svg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", path.string()));
    os << text;
    if (!os) throw Error(ErrorKind::IoError, fmt::format("write failed for {}", path.string()));
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace scanshift::report
