#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "layerprobe/attacks.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/model.hpp"

namespace layerprobe {

enum class TrainMode { Conventional, Adversarial, FastAdversarial };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& text);

struct OptimizerConfig {
    enum class Kind { Adam, SgdMomentum };
    Kind kind = Kind::Adam;
    double lr = 1e-3;
    double momentum = 0.9;  // SgdMomentum only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;

    bool operator==(const OptimizerConfig&) const = default;
};

struct ScheduleConfig {
    enum class Kind { Constant, Cosine, StepDecay };
    Kind kind = Kind::Cosine;
    std::vector<int> milestones;  // StepDecay
    double factor = 0.1;          // StepDecay

    bool operator==(const ScheduleConfig&) const = default;
};

struct TrainConfig {
    TrainMode mode = TrainMode::Conventional;
    OptimizerConfig optimizer;
    double weight_decay = 1e-4;
    /// Weight decay added to the gradient (true) or applied directly to the weights (false).
    bool coupled_weight_decay = true;
    int batch_size = 128;
    int epochs = 30;
    ScheduleConfig schedule;
    double clean_mix_ratio = 0.0;
    AttackConfig attack;
    /// Clean and adversarial parts of a mixed batch share one batchnorm normalization.
    bool joint_batchnorm = true;
    /// Random horizontal flip + random crop from a zero border of max(1, H/8) pixels.
    bool augment = false;
    std::uint64_t seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

/// Throws std::invalid_argument on the first violated constraint.
void validate(const TrainConfig& cfg);

/// Stable text digest of every field, stored in checkpoint provenance.
std::string config_digest(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double clean_acc = 0.0;
    double robust_acc = -1.0;  // negative when not measured
    double lr = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
};

/// Raised when the training loss becomes NaN or infinite.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(int epoch, int batch, double lr);
    int epoch;
    int batch;
    double lr;
};

double schedule_lr(const ScheduleConfig& schedule, int epoch, int total_epochs, double base_lr);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;
};

/// One Adam update. Coupled decay adds weight_decay·p to the gradient; decoupled decay
/// shrinks p by lr·weight_decay before the moment update is applied.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               double weight_decay, const OptimizerConfig& cfg = {}, bool coupled = true);

/// v ← momentum·v + (g + weight_decay·p); p ← p − lr·v.
void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay);

/// Optimizer state for every trainable parameter of a model.
class Optimizer {
public:
    Optimizer(const ModelGraph& model, const OptimizerConfig& cfg, double weight_decay, bool coupled);
    /// Applies one step to the trainable parameters that received gradients.
    void step(ModelGraph& model, const FreezeMask& mask, double lr);

private:
    OptimizerConfig cfg_;
    double weight_decay_;
    bool coupled_;
    std::vector<AdamState> adam_;
    std::vector<std::vector<double>> velocity_;
};

/// First floor(ratio·B) samples stay clean; the rest are replaced by PGD examples that
/// attack the model's own prediction. Labels are unchanged.
Tensor build_mixed_batch(const ModelGraph& model, const Tensor& clean_batch, std::span<const int> labels,
                         const AttackConfig& attack, double clean_mix_ratio, std::uint64_t seed,
                         std::span<const std::size_t> sample_ids = {});

std::size_t clean_count(std::size_t batch, double clean_mix_ratio);

/// Trains `model` in place. Frozen parameters (and frozen batchnorm statistics) are never modified.
TrainHistory train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const FreezeMask& mask);
TrainHistory train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg);

}  // namespace layerprobe
