// Command-line driver: every subcommand reads an experiment manifest, applies overrides and
// writes its reports as <name>.tsv plus <name>.json under the output directory.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "layerprobe/checkpoint.hpp"
#include "layerprobe/experiment.hpp"
#include "layerprobe/random.hpp"

namespace fs = std::filesystem;
using namespace layerprobe;

namespace {

struct Common {
    std::string manifest;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
    std::optional<std::string> epsilon;
    std::optional<std::string> out;
    std::string checkpoint;
    std::string mode;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void add_common(CLI::App* cmd, Common& c, bool wants_checkpoint) {
    cmd->add_option("manifest", c.manifest, "Experiment manifest (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", c.seed, "Override the root seed");
    cmd->add_option("--epochs", c.epochs, "Override pretraining and retraining epochs");
    cmd->add_option("--epsilon", c.epsilon, "Override the evaluation epsilon (number or fraction such as 8/255)");
    cmd->add_option("--out", c.out, "Override the output directory");
    if (wants_checkpoint) {
        cmd->add_option("--checkpoint", c.checkpoint, "Pretrained checkpoint (default: <out>/pretrained.lprb)");
    }
}

ExperimentManifest resolve(const Common& c) {
    auto m = load_manifest(c.manifest);
    if (c.seed) apply_root_seed(m, *c.seed);
    if (c.epochs) {
        if (*c.epochs < 0) throw ConfigError("--epochs must be non-negative");
        m.pretrain.epochs = *c.epochs;
        m.retrain.epochs = *c.epochs;
    }
    if (c.epsilon) {
        try {
            m.eval_attack.epsilon = parse_fraction(*c.epsilon);
            m.analysis.attack.epsilon = m.eval_attack.epsilon;
            validate(m.eval_attack);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("--epsilon: ") + e.what());
        }
    }
    if (c.out) m.output_dir = *c.out;
    return m;
}

fs::path checkpoint_path(const Common& c, const ExperimentManifest& m) {
    return c.checkpoint.empty() ? fs::path(m.output_dir) / "pretrained.lprb" : fs::path(c.checkpoint);
}

TrainMode retrain_mode(const Common& c, const ExperimentManifest& m) {
    if (c.mode.empty()) return m.sweep.retrain_modes.front();
    try {
        return parse_train_mode(c.mode);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("--mode: ") + e.what());
    }
}

void emit(const Table& t, const ExperimentManifest& m, const std::string& stem) {
    write_report(t, m.output_dir, stem);
    std::cout << to_tsv(t);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise adversarial robustness experiments"};
    app.require_subcommand(1);

    Common c;
    std::string cutoff, direction = "upto";
    std::vector<std::string> inputs;
    std::string merged_name = "merged";

    auto* pretrain = app.add_subcommand("pretrain", "Train a fresh model with the pretraining recipe");
    add_common(pretrain, c, false);

    auto* retrain = app.add_subcommand("retrain-cutoff", "Retrain the segments before or after a cut-off");
    add_common(retrain, c, true);
    retrain->add_option("--cutoff", cutoff, "Segment name, e.g. m_1")->required();
    retrain->add_option("--direction", direction, "upto or after")->check(CLI::IsMember({"upto", "after"}));
    retrain->add_option("--mode", c.mode, "Retraining mode (default: first sweep.retrain_modes entry)");

    auto* combos = app.add_subcommand("sweep-combinations", "Retrain every non-empty subset of segments");
    add_common(combos, c, true);
    combos->add_option("--mode", c.mode, "Retraining mode");

    auto* layers = app.add_subcommand("sweep-layers", "Cut-off retraining at every parameterized layer");
    add_common(layers, c, true);
    layers->add_option("--direction", direction, "upto or after")->check(CLI::IsMember({"upto", "after"}));
    layers->add_option("--mode", c.mode, "Retraining mode");

    auto* cutoffs = app.add_subcommand("sweep-cutoffs", "Cut-off retraining for every manifest cutoff, direction and mode");
    add_common(cutoffs, c, true);

    auto* reinit = app.add_subcommand("reinit-sweep", "Reinitialize each layer alone and evaluate without retraining");
    add_common(reinit, c, true);

    auto* attack = app.add_subcommand("attack-eval", "Clean and robust accuracy of a checkpoint");
    add_common(attack, c, true);

    auto* harvest_cmd = app.add_subcommand("harvest", "Dump clean and adversarial channel vectors per segment");
    add_common(harvest_cmd, c, true);

    auto* embed = app.add_subcommand("embed", "t-SNE embedding, densities and divergence per segment");
    add_common(embed, c, true);

    auto* report = app.add_subcommand("report", "Concatenate report tables with identical columns");
    report->add_option("inputs", inputs, "TSV tables to merge")->required()->check(CLI::ExistingFile);
    report->add_option("--out", c.out, "Output directory")->required();
    report->add_option("--name", merged_name, "Stem of the merged files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help();
        return 1;
    }

    try {
        if (report->parsed()) {
            std::vector<Table> tables;
            for (const auto& p : inputs) tables.push_back(read_tsv(p, fs::path(p).stem().string()));
            auto merged = merge_tables(tables);
            write_report(merged, *c.out, merged_name);
            std::cout << to_tsv(merged);
            return 0;
        }

        auto m = resolve(c);
        fs::create_directories(m.output_dir);
        auto data = load_data(m);

        if (pretrain->parsed()) {
            TrainHistory history;
            auto model = pretrain_model(m, data, &history);
            save_checkpoint(model, fs::path(m.output_dir) / "pretrained.lprb");
            emit(history_table(history), m, "pretrain_history");
            return 0;
        }

        auto model = load_checkpoint(checkpoint_path(c, m));
        const auto names = model.segmentation().names();

        if (retrain->parsed()) {
            auto ctx = protocol_context(m, model, data, retrain_mode(c, m));
            auto r = run_cutoff(model, cutoff, parse_cut_direction(direction), ctx);
            emit(experiment_table({r}, names), m, "cutoff_" + direction + "_" + cutoff);
        } else if (combos->parsed()) {
            auto ctx = protocol_context(m, model, data, retrain_mode(c, m));
            auto reports = run_combination_sweep(model, ctx);
            emit(experiment_table(reports, names), m, "combinations");
            Table medians;
            medians.kind = "medians";
            medians.columns = {"segment", "count_with", "count_without", "clean_with", "clean_without", "robust_with",
                               "robust_without"};
            for (std::size_t s = 0; s < names.size(); ++s) {
                auto md = aggregate_median(reports, s);
                medians.rows.push_back({names[s], std::to_string(md.count_with), std::to_string(md.count_without),
                                        format_double(md.clean_with), format_double(md.clean_without),
                                        format_double(md.robust_with), format_double(md.robust_without)});
            }
            emit(medians, m, "combination_medians");
        } else if (layers->parsed()) {
            auto ctx = protocol_context(m, model, data, retrain_mode(c, m));
            std::vector<RetrainPlan> plans;
            for (auto l : parameterized_layers(model)) plans.push_back(layer_cutoff_plan(model, l, parse_cut_direction(direction)));
            emit(experiment_table(run_plans(model, plans, ctx), names), m, "layers_" + direction);
        } else if (cutoffs->parsed()) {
            emit(experiment_table(run_cutoff_sweep(m, model, data), names), m, "cutoffs");
        } else if (reinit->parsed()) {
            auto entries = reinit_robustness_sweep(model, data.test, m.eval_attack, m.eval_seed(),
                                                   derive_seed(m.seed, "reinit-sweep"));
            emit(reinit_table(entries), m, "reinit");
        } else if (attack->parsed()) {
            auto r = evaluate(model, data.test, m.eval_attack, m.eval_seed(), m.eval_batch_size);
            emit(robustness_table(r, data.test.class_names), m, "attack_eval");
        } else if (harvest_cmd->parsed()) {
            HarvestOptions h;
            h.segments = m.analysis.segments;
            h.positions_per_image = m.analysis.positions_per_image;
            h.attack = m.analysis.attack;
            h.seed = m.analysis_seed();
            h.cap_positions = true;
            auto samples = harvest(model, data.test.slice(0, m.analysis.images), h);
            for (const auto& seg : h.segments) {
                Table t;
                t.kind = "samples";
                t.columns = {"image_id", "h", "w", "adversarial", "label"};
                std::size_t channels = 0;
                for (const auto& s : samples) {
                    if (s.segment != seg) continue;
                    if (channels == 0) {
                        channels = s.channels.size();
                        for (std::size_t k = 0; k < channels; ++k) t.columns.push_back("c" + std::to_string(k));
                    }
                    std::vector<std::string> row{std::to_string(s.image_id), std::to_string(s.h), std::to_string(s.w),
                                                 s.adversarial ? "1" : "0", std::to_string(s.label)};
                    for (double v : s.channels) row.push_back(format_double(v));
                    t.rows.push_back(std::move(row));
                }
                write_report(t, m.output_dir, "samples_" + seg);
                std::cout << seg << ": " << t.rows.size() << " samples\n";
            }
        } else if (embed->parsed()) {
            auto summaries = run_embedding(m, model, data);
            for (const auto& s : summaries) {
                Table coords;
                coords.kind = "coordinates";
                coords.columns = {"x", "y", "adversarial"};
                for (Eigen::Index i = 0; i < s.result.coords.rows(); ++i) {
                    coords.rows.push_back({format_double(s.result.coords(i, 0)), format_double(s.result.coords(i, 1)),
                                           s.result.adversarial[static_cast<std::size_t>(i)] ? "1" : "0"});
                }
                write_tsv(coords, fs::path(m.output_dir) / ("coords_" + s.segment + ".tsv"));
                Table grid;
                grid.kind = "density";
                grid.columns = {"ix", "iy", "x", "y", "clean", "adversarial"};
                const auto& g = s.result.clean_grid;
                for (std::size_t iy = 0; iy < g.resolution; ++iy) {
                    for (std::size_t ix = 0; ix < g.resolution; ++ix) {
                        grid.rows.push_back({std::to_string(ix), std::to_string(iy), format_double(g.x_center(ix)),
                                             format_double(g.y_center(iy)), format_double(g.at(ix, iy)),
                                             format_double(s.result.adversarial_grid.at(ix, iy))});
                    }
                }
                write_tsv(grid, fs::path(m.output_dir) / ("density_" + s.segment + ".tsv"));
            }
            emit(embedding_table(summaries), m, "embedding");
        }
        return 0;
    } catch (const ManifestError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
