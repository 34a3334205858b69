#include "scanshift/pipeline.hpp"

#include "scanshift/error.hpp"
#include "scanshift/geometry.hpp"
#include "scanshift/labels.hpp"
#include "scanshift/parallel.hpp"
#include "scanshift/predictions.hpp"
#include "scanshift/stats.hpp"
#include "scanshift/tilequal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>

namespace scanshift::pipeline {

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::IoError, fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

// Store errors carry the store path so CLI users can tell which input failed.
Cohort load_store(const fs::path& store) {
    const auto manifest = manifest_path(store);
    try {
        return load_cohort(manifest);
    } catch (const Error& e) {
        const std::string what = e.what();
        if (what.find(manifest.string()) != std::string::npos) throw;
        throw Error(e.kind(), fmt::format("{}: {}", manifest.string(), what));
    }
}

LabelTable load_labels(const fs::path& store) {
    const auto path = manifest_path(store).parent_path() / "labels.csv";
    if (!fs::exists(path)) {
        throw Error(ErrorKind::MissingLabels, fmt::format("{} not found", path.string()));
    }
    return read_labels(path);
}

std::vector<double> column(const std::vector<Eigen::VectorXd>& probs, Eigen::Index c) {
    std::vector<double> out;
    out.reserve(probs.size());
    for (const auto& p : probs) out.push_back(p(c));
    return out;
}

Eigen::MatrixXd stack(const std::vector<Eigen::VectorXd>& probs) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(probs.size()), probs.front().size());
    for (std::size_t i = 0; i < probs.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = probs[i].transpose();
    return m;
}

double auc_of(const std::vector<Eigen::VectorXd>& probs, const std::vector<int>& y, std::size_t classes) {
    if (classes == 2) return stats::auc_binary(column(probs, 1), y);
    return stats::auc_ovr_macro(stack(probs), y);
}

// Seed for the bootstrap of one evaluation cell, mixed from the configured base.
std::uint64_t cell_seed(std::uint64_t base, std::uint64_t cell) { return stats::replicate_stream(base, cell)(); }

struct SeedResult {
    mil::TrainRun run;
    double val_auc = 0.0;
    // probs[s][p] on the evaluation store
    std::vector<std::vector<Eigen::VectorXd>> probs;
};

}  // namespace

fs::path manifest_path(const fs::path& store) {
    if (fs::is_directory(store)) return store / "manifest.json";
    return store;
}

fs::path run_synth(const synth::SynthSpec& spec, const fs::path& out) {
    const auto gen = synth::gen_cohort(spec);
    return synth::write_store(gen.cohort, gen.labels, out);
}

report::json run_geometry(const GeometryOptions& opt) {
    const Cohort cohort = load_store(opt.store);
    const GeometryReport r = geometry_report(cohort, opt.threads);
    ensure_dir(opt.out);
    report::json j = report::geometry_json(r);
    j["generated_at"] = report::utc_timestamp();
    report::write_json(opt.out / "geometry.json", j);
    report::write_text(opt.out / "geometry.csv", report::geometry_csv(r));
    if (opt.plots) {
        for (const auto* g : {&r.cosine_distance, &r.match_rate, &r.mantel}) {
            report::write_text(opt.out / fmt::format("heatmap_{}.svg", g->metric), report::heatmap_svg(*g));
        }
        std::vector<double> k(r.iok.size());
        std::iota(k.begin(), k.end(), 1.0);
        report::write_text(opt.out / "iok.svg",
                           report::curve_svg("Intersection over K", "K", "IoK", {{"all scanners", k, r.iok, {}, {}}},
                                             std::make_pair(0.0, 1.0)));
    }
    return j;
}

report::json run_downstream(const DownstreamOptions& opt) {
    if (opt.seeds.empty()) throw Error(ErrorKind::Usage, "at least one seed is required");
    {
        auto sorted = opt.seeds;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw Error(ErrorKind::Usage, "seeds must be unique");
        }
    }
    const Cohort train_cohort = load_store(opt.train_store);
    const Cohort eval_cohort = load_store(opt.eval_store);
    const LabelTable train_labels = load_labels(opt.train_store);
    const LabelTable eval_labels = load_labels(opt.eval_store);
    if (train_cohort.dim() != eval_cohort.dim()) {
        throw Error(ErrorKind::DimMismatch, fmt::format("training store has d={}, evaluation store d={}",
                                                        train_cohort.dim(), eval_cohort.dim()));
    }
    const std::size_t train_scanner =
        opt.train_scanner.empty() ? 0 : train_cohort.scanner_index(opt.train_scanner);
    std::vector<std::string> tasks = opt.tasks;
    if (tasks.empty()) {
        for (const auto& [name, _] : train_labels.tasks) tasks.push_back(name);
    }

    std::vector<RowMatrix> train_bags;
    for (std::size_t p = 0; p < train_cohort.patient_count(); ++p) {
        train_bags.push_back(train_cohort.tiles(p, train_scanner).rows());
    }
    const std::size_t n_eval = eval_cohort.patient_count();
    const std::size_t n_scan = eval_cohort.scanner_count();
    const auto& scanners = eval_cohort.scanners();
    ensure_dir(opt.out);

    report::json out = {{"train_scanner", train_cohort.scanners()[train_scanner]},
                        {"train_patients", train_cohort.patient_count()},
                        {"eval_patients", n_eval},
                        {"eval_scanners", scanners},
                        {"seeds", opt.seeds},
                        {"bootstrap", opt.bootstrap},
                        {"tasks", report::json::object()}};
    std::string auc_csv = "task,scanner,seed,auc,lower,upper\n";
    std::string kappa_csv = "task,seed,kappa\n";
    std::string lowess_csv = "task,scanner_x,scanner_y,x,mean,lower,upper\n";
    std::string training_csv = "task,seed,epochs,best_epoch,best_val_loss,val_auc\n";

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const auto& task = tasks[t];
        const std::vector<int> y_train = train_labels.aligned(task, train_cohort.patients());
        const std::vector<int> y_eval = eval_labels.aligned(task, eval_cohort.patients());
        const int classes = std::max(train_labels.class_count(task), eval_labels.class_count(task));
        mil::Hyperparams hp = opt.hp;
        hp.input_dim = train_cohort.dim();
        hp.n_classes = static_cast<std::size_t>(classes);

        std::vector<SeedResult> results(opt.seeds.size());
        parallel_for(opt.seeds.size(), opt.threads, [&](std::size_t i) {
            const auto seed = opt.seeds[i];
            const auto split = mil::stratified_splits(y_train, 0.8, 1, seed).front();
            SeedResult res;
            res.run = mil::train(train_bags, y_train, split, hp, seed, 0);
            std::vector<Eigen::VectorXd> val_probs;
            std::vector<int> val_y;
            for (const auto id : split.val) {
                val_probs.push_back(mil::predict(train_bags[id], res.run.model));
                val_y.push_back(y_train[id]);
            }
            res.val_auc = auc_of(val_probs, val_y, hp.n_classes);
            res.probs.assign(n_scan, std::vector<Eigen::VectorXd>(n_eval));
            for (std::size_t s = 0; s < n_scan; ++s) {
                for (std::size_t p = 0; p < n_eval; ++p) {
                    res.probs[s][p] = mil::predict(eval_cohort.tiles(p, s).rows(), res.run.model);
                }
            }
            results[i] = std::move(res);
        });

        PredictionTable table;
        report::json training = report::json::array();
        for (std::size_t i = 0; i < results.size(); ++i) {
            const auto& res = results[i];
            const auto seed = opt.seeds[i];
            const double best_val = res.run.val_losses[res.run.best_epoch];
            training.push_back({{"seed", seed},
                                {"epochs", res.run.val_losses.size()},
                                {"best_epoch", res.run.best_epoch},
                                {"best_val_loss", best_val},
                                {"val_auc", res.val_auc}});
            training_csv += fmt::format("{},{},{},{},{},{}\n", task, seed, res.run.val_losses.size(),
                                        res.run.best_epoch, report::num(best_val), report::num(res.val_auc));
            for (std::size_t p = 0; p < n_eval; ++p) {
                for (std::size_t s = 0; s < n_scan; ++s) {
                    const auto& pr = res.probs[s][p];
                    PredictionRow row;
                    row.patient = eval_cohort.patients()[p];
                    row.scanner = scanners[s];
                    row.seed = static_cast<std::int64_t>(seed);
                    row.task = task;
                    row.probs.assign(pr.data(), pr.data() + pr.size());
                    row.pred = argmax_class(row.probs);
                    row.label = y_eval[p];
                    table.rows.push_back(std::move(row));
                }
            }
        }
        write_predictions_csv(table, opt.out / fmt::format("predictions_{}.csv", task));

        // AUC with bootstrap CI per (scanner, seed).
        struct Cell {
            std::size_t s, i;
        };
        std::vector<Cell> cells;
        for (std::size_t s = 0; s < n_scan; ++s) {
            for (std::size_t i = 0; i < results.size(); ++i) cells.push_back({s, i});
        }
        std::vector<stats::Interval> aucs(cells.size());
        parallel_for(cells.size(), opt.threads, [&](std::size_t c) {
            const auto& probs = results[cells[c].i].probs[cells[c].s];
            const auto bseed = cell_seed(opt.bootstrap_seed, (t * n_scan + cells[c].s) * results.size() + cells[c].i);
            aucs[c] = classes == 2 ? stats::bootstrap_auc(column(probs, 1), y_eval, opt.bootstrap, 0.95, bseed)
                                   : stats::bootstrap_auc_ovr(stack(probs), y_eval, opt.bootstrap, 0.95, bseed);
        });
        report::json auc_rows = report::json::array();
        report::json auc_by_scanner = report::json::object();
        for (std::size_t s = 0; s < n_scan; ++s) {
            double sum = 0.0;
            double sq = 0.0;
            for (std::size_t i = 0; i < results.size(); ++i) {
                const auto& iv = aucs[s * results.size() + i];
                auc_rows.push_back({{"scanner", scanners[s]},
                                    {"seed", opt.seeds[i]},
                                    {"auc", iv.point},
                                    {"lower", iv.lower},
                                    {"upper", iv.upper}});
                auc_csv += fmt::format("{},{},{},{},{},{}\n", task, scanners[s], opt.seeds[i], report::num(iv.point),
                                       report::num(iv.lower), report::num(iv.upper));
                sum += iv.point;
            }
            const double mean = sum / static_cast<double>(results.size());
            for (std::size_t i = 0; i < results.size(); ++i) {
                const double d = aucs[s * results.size() + i].point - mean;
                sq += d * d;
            }
            auc_by_scanner[scanners[s]] = {{"mean", mean}, {"sd", std::sqrt(sq / static_cast<double>(results.size()))}};
        }

        const auto kappa = stats::consistency_report(table, task);
        for (std::size_t i = 0; i < kappa.seeds.size(); ++i) {
            kappa_csv += fmt::format("{},{},{}\n", task, kappa.seeds[i], report::num(kappa.kappas[i]));
        }

        // LOWESS bands on the last class probability for every scanner pair.
        const auto grid = lowess::unit_grid(opt.grid_points);
        const auto last = static_cast<Eigen::Index>(classes - 1);
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < n_scan; ++i) {
            for (std::size_t j = i + 1; j < n_scan; ++j) pairs.emplace_back(i, j);
        }
        std::vector<lowess::Band> bands(pairs.size());
        parallel_for(pairs.size(), opt.threads, [&](std::size_t k) {
            std::vector<lowess::Pairs> per_seed;
            for (const auto& res : results) {
                per_seed.push_back({column(res.probs[pairs[k].first], last), column(res.probs[pairs[k].second], last)});
            }
            auto params = opt.lowess;
            params.seed = cell_seed(opt.lowess.seed, t * pairs.size() + k);
            bands[k] = lowess::bootstrap(per_seed, grid, params);
        });
        report::json lowess_rows = report::json::array();
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            const auto& b = bands[k];
            double dev = 0.0;
            for (std::size_t g = 0; g < grid.size(); ++g) {
                dev = std::max(dev, std::abs(b.mean[g] - grid[g]));
                lowess_csv += fmt::format("{},{},{},{},{},{},{}\n", task, scanners[pairs[k].first],
                                          scanners[pairs[k].second], report::num(grid[g]), report::num(b.mean[g]),
                                          report::num(b.lower[g]), report::num(b.upper[g]));
            }
            lowess_rows.push_back({{"scanner_x", scanners[pairs[k].first]},
                                   {"scanner_y", scanners[pairs[k].second]},
                                   {"grid", b.grid},
                                   {"mean", b.mean},
                                   {"lower", b.lower},
                                   {"upper", b.upper},
                                   {"max_deviation", dev}});
            if (opt.plots) {
                report::write_text(
                    opt.out / fmt::format("lowess_{}_{}_{}.svg", task, scanners[pairs[k].first], scanners[pairs[k].second]),
                    report::curve_svg(fmt::format("{}: p(class {})", task, classes - 1), scanners[pairs[k].first],
                                      scanners[pairs[k].second], {{"mean LOWESS", b.grid, b.mean, b.lower, b.upper}},
                                      std::make_pair(0.0, 1.0), true));
            }
        }

        out["tasks"][task] = {{"classes", classes},
                              {"lowess_class", classes - 1},
                              {"training", training},
                              {"auc", auc_rows},
                              {"auc_by_scanner", auc_by_scanner},
                              {"kappa", {{"seeds", kappa.seeds}, {"values", kappa.kappas}, {"mean", kappa.mean}, {"sd", kappa.sd}}},
                              {"lowess", lowess_rows}};
    }
    report::write_text(opt.out / "auc.csv", auc_csv);
    report::write_text(opt.out / "kappa.csv", kappa_csv);
    report::write_text(opt.out / "lowess.csv", lowess_csv);
    report::write_text(opt.out / "training.csv", training_csv);
    out["generated_at"] = report::utc_timestamp();
    report::write_json(opt.out / "downstream.json", out);
    return out;
}

std::vector<std::size_t> sample_tiles(std::size_t k, std::size_t m, std::uint64_t seed, std::uint64_t stream) {
    if (m > k) {
        throw Error(ErrorKind::Usage, fmt::format("cannot sample {} tiles from a slide with {}", m, k));
    }
    auto rng = stats::replicate_stream(seed, stream);
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, k - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    return idx;
}

std::size_t run_export(const ExportOptions& opt) {
    const Cohort cohort = load_store(opt.store);
    if (opt.sample && opt.level != ExportLevel::Tile) {
        throw Error(ErrorKind::Usage, "--sample applies to tile-level export only");
    }
    if (opt.out.has_parent_path()) ensure_dir(opt.out.parent_path());
    std::ofstream os(opt.out, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorKind::IoError, fmt::format("cannot write {}", opt.out.string()));
    const char sep = opt.separator;
    os << "patient" << sep << "scanner";
    if (opt.level == ExportLevel::Tile) os << sep << "tile";
    for (std::size_t c = 0; c < cohort.dim(); ++c) os << sep << 'v' << c;
    os << '\n';
    std::size_t rows = 0;
    auto emit = [&](const std::string& prefix, const auto& vec) {
        std::string line = prefix;
        for (Eigen::Index c = 0; c < vec.size(); ++c) {
            line += sep;
            line += report::num(vec(c));
        }
        line += '\n';
        os << line;
        ++rows;
    };
    for (std::size_t p = 0; p < cohort.patient_count(); ++p) {
        for (std::size_t s = 0; s < cohort.scanner_count(); ++s) {
            const auto prefix = fmt::format("{}{}{}", cohort.patients()[p], sep, cohort.scanners()[s]);
            const auto& tiles = cohort.tiles(p, s);
            if (opt.level == ExportLevel::Slide) {
                emit(prefix, mean_pool(tiles));
                continue;
            }
            std::vector<std::size_t> keep(tiles.tile_count());
            std::iota(keep.begin(), keep.end(), std::size_t{0});
            if (opt.sample) keep = sample_tiles(tiles.tile_count(), *opt.sample, opt.seed, p * cohort.scanner_count() + s);
            for (const auto k : keep) {
                emit(fmt::format("{}{}{}", prefix, sep, k), tiles.rows().row(static_cast<Eigen::Index>(k)));
            }
        }
    }
    if (!os) throw Error(ErrorKind::IoError, fmt::format("write failed for {}", opt.out.string()));
    return rows;
}

report::json run_tilequal(const TileQualOptions& opt) {
    const bool filter = !opt.multiscanner || opt.force_filter;
    ensure_dir(opt.out);
    std::vector<double> scores;
    report::json rows = report::json::array();
    std::string csv = "file,width,height,otsu,vl,kept\n";
    std::vector<tilequal::GrayTile> tiles;
    for (const auto& path : opt.tiles) tiles.push_back(tilequal::read_pgm(path));
    for (const auto& t : tiles) scores.push_back(tilequal::variance_of_laplacian(t));
    const auto kept_idx = filter ? tilequal::filter_tiles(scores, opt.cutoff) : [&] {
        std::vector<std::size_t> all(tiles.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }();
    std::vector<bool> kept(tiles.size(), false);
    for (const auto i : kept_idx) kept[i] = true;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        std::optional<int> otsu;
        try {
            otsu = tilequal::otsu_threshold(tilequal::histogram(tiles[i]));
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::DegenerateHistogram) throw;
        }
        const auto name = opt.tiles[i].filename().string();
        rows.push_back({{"file", name},
                        {"width", tiles[i].width},
                        {"height", tiles[i].height},
                        {"otsu", otsu ? report::json(*otsu) : report::json(nullptr)},
                        {"vl", scores[i]},
                        {"kept", static_cast<bool>(kept[i])}});
        csv += fmt::format("{},{},{},{},{},{}\n", name, tiles[i].width, tiles[i].height,
                           otsu ? std::to_string(*otsu) : std::string(), report::num(scores[i]), kept[i] ? 1 : 0);
    }
    report::json j = {{"cutoff", opt.cutoff},
                      {"filtered", filter},
                      {"tiles", rows},
                      {"kept", kept_idx.size()},
                      {"generated_at", report::utc_timestamp()}};
    report::write_json(opt.out / "tilequal.json", j);
    report::write_text(opt.out / "tilequal.csv", csv);
    return j;
}

}  // namespace scanshift::pipeline
