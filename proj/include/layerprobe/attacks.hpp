#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/model.hpp"

namespace layerprobe {

struct Dataset;

enum class TargetMode { TrueLabel, Prediction };

std::string to_string(TargetMode mode);
TargetMode parse_target_mode(const std::string& text);

/// L∞ attack recipe. Pixel bounds are always [0, 1].
struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    double step_size = 2.0 / 255.0;
    int iterations = 7;
    bool random_start = true;
    TargetMode target_mode = TargetMode::Prediction;
    int restarts = 1;

    bool operator==(const AttackConfig&) const = default;
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const AttackConfig& cfg);

/// clamp(x + ε·sign(∇ₓL), 0, 1) with the gradient taken in eval mode.
Tensor fgsm(const ModelGraph& model, const Tensor& x, std::span<const int> labels, double epsilon,
            TargetMode target_mode);

/// Projected gradient ascent on the cross-entropy inside the ε-ball around x.
///
/// Each iterate takes a signed-gradient step, is projected back onto the ball and
/// clamped to [0, 1]. Per sample, the returned input is the highest-loss iterate
/// over all steps of all restarts (the random start itself is not a candidate).
/// `sample_ids` key the per-sample random-start streams so that results do not
/// depend on how a dataset is split into batches; when empty, row indices are used.
Tensor pgd(const ModelGraph& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
           std::uint64_t seed, std::span<const std::size_t> sample_ids = {});

struct RobustnessReport {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
    std::vector<double> per_class_clean_acc;
    std::vector<double> per_class_robust_acc;
    std::size_t samples = 0;
};

/// Clean and attacked accuracy over a dataset. The attack always targets the true label.
RobustnessReport evaluate(const ModelGraph& model, const Dataset& data, const AttackConfig& cfg,
                          std::uint64_t seed, std::size_t batch_size = 256);

/// Fraction of rows whose argmax matches the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace layerprobe
