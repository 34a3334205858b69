// scanshift: command-line front end for cohort generation, embedding geometry,
// downstream MIL evaluation, embedding export and tile quality scoring.

#include "scanshift/error.hpp"
#include "scanshift/pipeline.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;
namespace pl = scanshift::pipeline;

// Reads --config files as JSON. Keys are scoped to the chosen subcommand;
// nested objects become sections and arrays become multi-value inputs.
class JsonConfig : public CLI::Config {
public:
    explicit JsonConfig(std::string section) : section_(std::move(section)) {}

    std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}\n"; }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            j = json::parse(input);
        } catch (const json::exception& e) {
            throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
        }
        if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
        std::vector<CLI::ConfigItem> items;
        collect(j, section_.empty() ? std::vector<std::string>{} : std::vector<std::string>{section_}, items);
        return items;
    }

private:
    std::string section_;

    static std::string scalar(const json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
        return v.dump();
    }

    static void collect(const json& j, std::vector<std::string> parents, std::vector<CLI::ConfigItem>& out) {
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto p = parents;
                p.push_back(key);
                collect(value, p, out);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value) item.inputs.push_back(scalar(v));
            } else {
                item.inputs.push_back(scalar(value));
            }
            out.push_back(std::move(item));
        }
    }
};

// CLI11 only reads config files on the top-level app, so `SUB --config F` is
// moved in front of the subcommand and the file's keys are scoped to SUB.
// Returns the subcommand name (empty if none was found).
std::string hoist_config(std::vector<std::string>& args, const std::vector<std::string>& subcommands) {
    std::size_t sub = 0;
    while (sub < args.size() && std::find(subcommands.begin(), subcommands.end(), args[sub]) == subcommands.end()) {
        ++sub;
    }
    if (sub == args.size()) return {};
    for (std::size_t i = sub + 1; i < args.size(); ++i) {
        if (args[i] == "--") break;
        std::optional<std::string> file;
        std::size_t used = 1;
        if (args[i] == "--config" && i + 1 < args.size()) {
            file = args[i + 1];
            used = 2;
        } else if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
        }
        if (!file) continue;
        args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + used));
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub), {"--config", *file});
        break;
    }
    return args[sub + (args[sub] == "--config" ? 2 : 0)];
}

[[noreturn]] void fail(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
    std::exit(code);
}

std::vector<double> per_scanner(const std::vector<double>& values, std::size_t scanners, const char* name,
                                double reference) {
    if (values.empty()) return std::vector<double>(scanners, 0.0);
    if (values.size() == 1) {
        std::vector<double> out(scanners, values[0]);
        out[0] = reference;
        return out;
    }
    if (values.size() != scanners) {
        throw scanshift::Error(scanshift::ErrorKind::Usage,
                               std::string("--") + name + " takes one value or one per scanner");
    }
    return values;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scanner-shift analysis of slide embedding cohorts"};
    app.require_subcommand(1);
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.set_version_flag("--version", "scanshift 1.0.0");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic multiscanner cohort");
    scanshift::synth::SynthSpec spec;
    std::size_t n_scanners = spec.n_scanners();
    std::string synth_out;
    std::vector<double> offsets;
    std::vector<double> mixes;
    std::vector<double> noises;
    std::vector<std::string> clones;
    std::vector<std::string> task_specs;
    synth->add_option("--out,--store", synth_out, "Output store directory")->required();
    synth->add_option("--patients", spec.n_patients, "Number of patients")->capture_default_str();
    synth->add_option("--scanners", n_scanners, "Number of scanners (>= 2)")->capture_default_str();
    synth->add_option("--dim", spec.dim, "Embedding dimension")->capture_default_str();
    synth->add_option("--tiles", spec.tiles_per_slide, "Tiles per slide")->capture_default_str();
    synth->add_option("--margin", spec.margin, "Class separation margin")->capture_default_str();
    synth->add_option("--seed", spec.seed, "Master seed")->capture_default_str();
    synth->add_option("--offset", offsets,
                      "Offset magnitude: one value for every non-reference scanner, or one per scanner")
        ->delimiter(',');
    synth->add_option("--mix", mixes, "Rotation/scale mix, same layout as --offset")->delimiter(',');
    synth->add_option("--noise", noises, "Tile noise, one value for all scanners or one per scanner")
        ->delimiter(',');
    synth->add_option("--clone", clones, "Clone a scanner: TARGET=SOURCE (indices, SOURCE < TARGET)")
        ->delimiter(',');
    synth->add_option("--tasks", task_specs, "Tasks as NAME:CLASSES (default bin:2,multi3:3)")->delimiter(',');

    // geometry
    auto* geometry = app.add_subcommand("geometry", "Embedding-space metrics for every scanner pair");
    pl::GeometryOptions gopt;
    bool gno_plots = false;
    geometry->add_option("--store", gopt.store, "Store directory or manifest.json")->required();
    geometry->add_option("--out", gopt.out, "Output directory")->required();
    geometry->add_option("--threads", gopt.threads, "Worker threads")->capture_default_str();
    geometry->add_flag("--no-plots", gno_plots, "Skip SVG output");

    // downstream
    auto* downstream = app.add_subcommand("downstream", "Train MIL models and evaluate them across scanners");
    pl::DownstreamOptions dopt;
    bool dno_plots = false;
    std::string eval_store;
    downstream->add_option("--train-store", dopt.train_store, "Training store (first scanner is used)")->required();
    downstream->add_option("--store,--eval-store", eval_store, "Multiscanner evaluation store")->required();
    downstream->add_option("--out", dopt.out, "Output directory")->required();
    downstream->add_option("--tasks", dopt.tasks, "Tasks to run (default: all labelled tasks)")->delimiter(',');
    downstream->add_option("--seeds", dopt.seeds, "Training seeds")->delimiter(',')->capture_default_str();
    downstream->add_option("--train-scanner", dopt.train_scanner, "Scanner of the training store to train on");
    downstream->add_option("--threads", dopt.threads, "Worker threads")->capture_default_str();
    downstream->add_option("--bootstrap", dopt.bootstrap, "Bootstrap resamples for AUC intervals")->capture_default_str();
    downstream->add_option("--bootstrap-seed", dopt.bootstrap_seed, "Seed for AUC bootstraps")->capture_default_str();
    downstream->add_option("--epochs", dopt.hp.max_epochs, "Maximum epochs")->capture_default_str();
    downstream->add_option("--patience", dopt.hp.patience, "Early stopping patience")->capture_default_str();
    downstream->add_option("--lr", dopt.hp.learning_rate, "AdamW learning rate")->capture_default_str();
    downstream->add_option("--weight-decay", dopt.hp.weight_decay, "AdamW weight decay")->capture_default_str();
    downstream->add_option("--dropout", dopt.hp.dropout, "Dropout rate")->capture_default_str();
    downstream->add_option("--proj-dim", dopt.hp.proj_dim, "Projection width")->capture_default_str();
    downstream->add_option("--attn-dim", dopt.hp.attn_dim, "Attention width")->capture_default_str();
    downstream->add_option("--lowess-curves", dopt.lowess.curves_per_seed, "Bootstrap curves per seed")
        ->capture_default_str();
    downstream->add_option("--lowess-subsample", dopt.lowess.subsample, "Fraction of slides per curve")
        ->capture_default_str();
    downstream->add_option("--lowess-frac", dopt.lowess.fit.frac, "LOWESS neighbourhood fraction")
        ->capture_default_str();
    downstream->add_option("--lowess-iters", dopt.lowess.fit.robust_iters, "LOWESS robustness iterations")
        ->capture_default_str();
    downstream->add_option("--lowess-seed", dopt.lowess.seed, "Seed for LOWESS subsampling")->capture_default_str();
    downstream->add_option("--grid-points", dopt.grid_points, "LOWESS grid size")->capture_default_str();
    downstream->add_flag("--no-plots", dno_plots, "Skip SVG output");

    // export
    auto* exp = app.add_subcommand("export", "Write slide or tile embeddings as CSV/TSV");
    pl::ExportOptions eopt;
    std::string level = "slide";
    std::optional<std::size_t> sample;
    bool tsv = false;
    exp->add_option("--store", eopt.store, "Store directory or manifest.json")->required();
    exp->add_option("--out", eopt.out, "Output file")->required();
    exp->add_option("--level", level, "slide or tile")
        ->check(CLI::IsMember({"slide", "tile"}))
        ->capture_default_str();
    exp->add_option("--sample", sample, "Tiles sampled per slide (tile level)");
    exp->add_option("--seed", eopt.seed, "Sampling seed")->capture_default_str();
    exp->add_flag("--tsv", tsv, "Tab separated output");

    // tilequal
    auto* tq = app.add_subcommand("tilequal", "Otsu threshold and blur score for PGM tiles");
    pl::TileQualOptions topt;
    std::string cohort_kind = "training";
    tq->add_option("tiles", topt.tiles, "PGM (P5) tiles")->required();
    tq->add_option("--out", topt.out, "Output directory")->required();
    tq->add_option("--cutoff", topt.cutoff, "Keep tiles with VL >= cutoff")->capture_default_str();
    tq->add_option("--cohort", cohort_kind, "training (filtered) or multiscanner (scored only)")
        ->check(CLI::IsMember({"training", "multiscanner"}))
        ->capture_default_str();
    tq->add_flag("--force-filter", topt.force_filter, "Filter a multiscanner cohort anyway");

    std::vector<std::string> args(argv + 1, argv + argc);
    const auto section = hoist_config(args, {"synth", "geometry", "downstream", "export", "tilequal"});
    app.set_config("--config", "", "JSON file of option values for the subcommand (command-line flags take precedence)");
    app.config_formatter(std::make_shared<JsonConfig>(section));
    for (auto* sub : app.get_subcommands({})) sub->footer("Option values may also come from a JSON file: --config FILE.");
    std::reverse(args.begin(), args.end());

    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        fail("Usage", e.what(), 2);
    }

    try {
        if (*synth) {
            if (n_scanners < 2) {
                throw scanshift::Error(scanshift::ErrorKind::Usage, "--scanners must be at least 2");
            }
            const auto off = per_scanner(offsets, n_scanners, "offset", 0.0);
            const auto mix = per_scanner(mixes, n_scanners, "mix", 0.0);
            const auto noise = per_scanner(noises, n_scanners, "noise", noises.size() == 1 ? noises[0] : 0.0);
            spec.scanners.assign(n_scanners, {});
            for (std::size_t s = 0; s < n_scanners; ++s) spec.scanners[s] = {off[s], mix[s], noise[s], std::nullopt};
            for (const auto& c : clones) {
                const auto eq = c.find('=');
                std::size_t target = 0;
                std::size_t source = 0;
                try {
                    if (eq == std::string::npos) throw std::invalid_argument(c);
                    target = std::stoul(c.substr(0, eq));
                    source = std::stoul(c.substr(eq + 1));
                } catch (const std::logic_error&) {
                    throw scanshift::Error(scanshift::ErrorKind::Usage, "--clone expects TARGET=SOURCE, got '" + c + "'");
                }
                if (target >= n_scanners) throw scanshift::Error(scanshift::ErrorKind::Usage, "--clone target out of range");
                spec.scanners[target].clone_of = source;
            }
            if (!task_specs.empty()) {
                spec.tasks.clear();
                for (const auto& t : task_specs) {
                    const auto colon = t.find(':');
                    try {
                        if (colon == std::string::npos) throw std::invalid_argument(t);
                        spec.tasks.push_back({t.substr(0, colon), std::stoi(t.substr(colon + 1))});
                    } catch (const std::logic_error&) {
                        throw scanshift::Error(scanshift::ErrorKind::Usage, "--tasks expects NAME:CLASSES, got '" + t + "'");
                    }
                }
            }
            std::cout << pl::run_synth(spec, synth_out).string() << '\n';
        } else if (*geometry) {
            gopt.plots = !gno_plots;
            pl::run_geometry(gopt);
            std::cout << (gopt.out / "geometry.json").string() << '\n';
        } else if (*downstream) {
            dopt.eval_store = eval_store;
            dopt.plots = !dno_plots;
            pl::run_downstream(dopt);
            std::cout << (dopt.out / "downstream.json").string() << '\n';
        } else if (*exp) {
            eopt.level = level == "tile" ? pl::ExportLevel::Tile : pl::ExportLevel::Slide;
            eopt.sample = sample;
            eopt.separator = tsv ? '\t' : ',';
            const auto rows = pl::run_export(eopt);
            std::cout << rows << " rows written to " << eopt.out.string() << '\n';
        } else if (*tq) {
            topt.multiscanner = cohort_kind == "multiscanner";
            pl::run_tilequal(topt);
            std::cout << (topt.out / "tilequal.json").string() << '\n';
        }
    } catch (const scanshift::Error& e) {
        fail(std::string(scanshift::to_string(e.kind())), e.what(), e.kind() == scanshift::ErrorKind::Usage ? 2 : 1);
    } catch (const std::exception& e) {
        fail("Internal", e.what(), 1);
    }
    return 0;
}
