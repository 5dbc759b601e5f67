#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerprobe/analysis.hpp"
#include "layerprobe/attacks.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/model.hpp"
#include "layerprobe/protocol.hpp"
#include "layerprobe/training.hpp"

namespace layerprobe {

/// Schema violation; `path` is the dotted location of the offending value (e.g. "pretrain.attack.epsilon").
class ManifestError : public std::runtime_error {
public:
    ManifestError(std::string path, const std::string& message);
    std::string path;
};

struct DatasetSpec {
    std::string kind;  // "cifar10", "mnist" or "synthetic"
    std::string path;  // directory for cifar10 / mnist
    std::size_t train_limit = 0;  // 0 keeps the whole split
    std::size_t test_limit = 0;
    SyntheticOptions synthetic;
    int synthetic_test_per_class = 50;
};

struct SweepSpec {
    std::vector<std::string> cutoffs;  // empty means every segment
    std::vector<CutDirection> directions{CutDirection::UpTo, CutDirection::After};
    std::vector<TrainMode> retrain_modes{TrainMode::Adversarial};
    bool reinitialize = true;
};

struct AnalysisSpec {
    std::vector<std::string> segments{"m_1", "m_2", "m_3", "m_4"};
    std::size_t positions_per_image = 20;
    std::size_t images = 200;
    AttackConfig attack;
    EmbedOptions embed;
};

/// Everything a CLI run needs. Seeds of individual consumers are derived from `seed`.
struct ExperimentManifest {
    std::string name;
    std::uint64_t seed = 0;
    std::string output_dir;
    unsigned threads = 1;
    DatasetSpec dataset;
    /// channels, height, width and classes are filled in from the dataset.
    ArchitectureSpec architecture;
    TrainConfig pretrain;
    TrainConfig retrain;
    AttackConfig eval_attack;
    std::size_t eval_batch_size = 256;
    SweepSpec sweep;
    AnalysisSpec analysis;

    std::uint64_t eval_seed() const;
    std::uint64_t analysis_seed() const;
};

/// Parses and validates a manifest document. Unknown keys and missing required keys raise ManifestError.
ExperimentManifest parse_manifest(const std::string& json_text);
ExperimentManifest load_manifest(const std::filesystem::path& path);

/// Sets the root seed and re-derives the architecture, pretraining, retraining, data and t-SNE seeds.
void apply_root_seed(ExperimentManifest& manifest, std::uint64_t seed);

/// Parses "8/255" style fractions or plain decimal text.
double parse_fraction(const std::string& text);

}  // namespace layerprobe
