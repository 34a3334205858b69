#pragma once

#include "scanshift/lowess.hpp"
#include "scanshift/mil.hpp"
#include "scanshift/report.hpp"
#include "scanshift/synth.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace scanshift::pipeline {

namespace fs = std::filesystem;

/// Generates a cohort and writes it with labels to `out`. Returns the manifest path.
fs::path run_synth(const synth::SynthSpec& spec, const fs::path& out);

/// Accepts a manifest path or the directory holding manifest.json.
fs::path manifest_path(const fs::path& store);

struct GeometryOptions {
    fs::path store;
    fs::path out;
    std::size_t threads = 1;
    bool plots = true;
};

/// Writes geometry.json, geometry.csv and, with plots, heatmap_<metric>.svg and iok.svg.
report::json run_geometry(const GeometryOptions& opt);

struct DownstreamOptions {
    fs::path train_store;
    fs::path eval_store;
    fs::path out;
    std::vector<std::string> tasks;  // empty = every task in the training labels
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::string train_scanner;       // empty = first scanner of the training store
    mil::Hyperparams hp;             // input_dim and n_classes are filled per task
    std::size_t bootstrap = 1000;
    std::uint64_t bootstrap_seed = 0;
    std::size_t grid_points = 100;
    lowess::BootstrapParams lowess;
    std::size_t threads = 1;
    bool plots = true;
};

/// Trains one model per (task, seed) and evaluates it on every scanner of the
/// evaluation store. Writes predictions_<task>.csv, auc.csv, kappa.csv,
/// lowess.csv, training.csv and downstream.json (returned).
report::json run_downstream(const DownstreamOptions& opt);

enum class ExportLevel { Slide, Tile };

struct ExportOptions {
    fs::path store;
    fs::path out;  // file
    ExportLevel level = ExportLevel::Slide;
    std::optional<std::size_t> sample;  // tiles per slide, tile level only
    std::uint64_t seed = 0;
    char separator = ',';
};

/// Returns the number of data rows written.
std::size_t run_export(const ExportOptions& opt);

/// Tile indices kept by `--sample m`: m distinct indices out of k, ascending.
/// Slide (p, s) of an S-scanner cohort draws from replicate_stream(seed, p * S + s).
std::vector<std::size_t> sample_tiles(std::size_t k, std::size_t m, std::uint64_t seed,
                                      std::uint64_t stream);

struct TileQualOptions {
    std::vector<fs::path> tiles;
    fs::path out;
    double cutoff = 500.0;
    bool multiscanner = false;  // evaluation cohorts are scored but not filtered
    bool force_filter = false;  // filter even a multiscanner cohort
};

/// Writes tilequal.json and tilequal.csv (file,width,height,otsu,vl,kept).
report::json run_tilequal(const TileQualOptions& opt);

}  // namespace scanshift::pipeline
