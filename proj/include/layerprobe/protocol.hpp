#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "layerprobe/attacks.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/model.hpp"
#include "layerprobe/training.hpp"

namespace layerprobe {

enum class CutDirection { UpTo, After };

std::string to_string(CutDirection direction);
CutDirection parse_cut_direction(const std::string& text);

/// Shared inputs of every retrain-and-evaluate plan.
struct ProtocolContext {
    const Dataset* train = nullptr;
    const Dataset* test = nullptr;
    /// Retraining recipe; `retrain.mode` is the retraining mode.
    TrainConfig retrain;
    AttackConfig eval_attack;
    std::uint64_t eval_seed = 0;
    /// Seed for redrawing retrained layers. Equal to the architecture's init seed by default,
    /// which makes full retraining identical to training a freshly built model.
    std::uint64_t reinit_seed = 0;
    /// When false the retrained layers are warm-started from the pretrained weights.
    bool reinitialize = true;
    /// Worker threads for sweeps. Results never depend on this value.
    unsigned threads = 1;
};

/// Context with the reinit seed taken from the model's architecture.
ProtocolContext make_context(const ModelGraph& pretrained, const Dataset& train, const Dataset& test,
                             const TrainConfig& retrain, const AttackConfig& eval_attack, std::uint64_t eval_seed);

/// Which layers a plan reinitializes and retrains; all others stay frozen.
struct RetrainPlan {
    std::string descriptor;
    std::vector<std::size_t> layers;
};

struct ExperimentReport {
    std::string descriptor;
    std::string pretrain_mode;
    std::string retrain_mode;  // "none" for pure evaluation
    /// One flag per segment: true when any of its layers was retrained.
    std::vector<bool> segment_trainable;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

/// Copies `pretrained`, retrains the plan's layers and evaluates the result. Throws
/// std::logic_error if any fully frozen segment changed during training.
ExperimentReport run_plan(const ModelGraph& pretrained, const RetrainPlan& plan, const ProtocolContext& ctx);

/// UpTo: segments m_0 … cutoff are retrained. After: segments following the cutoff are retrained.
RetrainPlan cutoff_plan(const ModelGraph& model, const std::string& cutoff_segment, CutDirection direction);
RetrainPlan layer_cutoff_plan(const ModelGraph& model, std::size_t layer_index, CutDirection direction);
/// Segment subset from the bits of `subset` (bit i selects segment i).
RetrainPlan subset_plan(const ModelGraph& model, std::uint64_t subset);

ExperimentReport run_cutoff(const ModelGraph& pretrained, const std::string& cutoff_segment, CutDirection direction,
                            const ProtocolContext& ctx);

ExperimentReport run_layer_cutoff(const ModelGraph& pretrained, std::size_t layer_index, CutDirection direction,
                                  const ProtocolContext& ctx);

/// One report per non-empty segment subset, in binary counting order (subset 1, 2, 3, …).
std::vector<ExperimentReport> run_combination_sweep(const ModelGraph& pretrained, const ProtocolContext& ctx);

constexpr std::size_t kMaxSweepSegments = 8;

/// Runs the plans on ctx.threads workers and returns the reports in plan order.
std::vector<ExperimentReport> run_plans(const ModelGraph& pretrained, const std::vector<RetrainPlan>& plans,
                                        const ProtocolContext& ctx);

struct MedianSummary {
    double clean_with = 0.0;
    double clean_without = 0.0;
    double robust_with = 0.0;
    double robust_without = 0.0;
    std::size_t count_with = 0;
    std::size_t count_without = 0;
};

/// Midpoint median of an unsorted sample. Throws on empty input.
double median(std::vector<double> values);

/// Medians over the reports that do and do not retrain `segment`. Throws if either side is empty.
MedianSummary aggregate_median(const std::vector<ExperimentReport>& reports, std::size_t segment);

struct ReinitEntry {
    std::string layer;  // "none" for the unmodified model
    int layer_index = -1;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

/// Evaluates the model with each parameterized layer alone redrawn from a fresh stream, restoring it
/// afterwards. The first entry is the unmodified baseline. `model` is unchanged on return.
std::vector<ReinitEntry> reinit_robustness_sweep(ModelGraph& model, const Dataset& test, const AttackConfig& eval_attack,
                                                 std::uint64_t eval_seed, std::uint64_t reinit_seed);

}  // namespace layerprobe
