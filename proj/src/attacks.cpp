#include "layerprobe/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "layerprobe/dataset.hpp"
#include "layerprobe/ops.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

std::string to_string(TargetMode mode) {
    return mode == TargetMode::TrueLabel ? "true_label" : "prediction";
}

TargetMode parse_target_mode(const std::string& text) {
    if (text == "true_label") return TargetMode::TrueLabel;
    if (text == "prediction") return TargetMode::Prediction;
    throw std::invalid_argument("unknown target mode '" + text + "' (expected true_label or prediction)");
}

void validate(const AttackConfig& cfg) {
    if (!(cfg.epsilon >= 0.0) || cfg.epsilon > 1.0) {
        throw std::invalid_argument("attack epsilon must lie in [0, 1], got " + std::to_string(cfg.epsilon));
    }
    if (cfg.iterations < 1) throw std::invalid_argument("attack iterations must be positive");
    if (!(cfg.step_size > 0.0)) throw std::invalid_argument("attack step_size must be positive");
    if (cfg.restarts < 1) throw std::invalid_argument("attack restarts must be positive");
}

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

struct InputGradient {
    std::vector<double> grad;
    std::vector<double> losses;
};

InputGradient input_gradient(const ModelGraph& model, const Shape& shape, const std::vector<double>& x,
                             std::span<const int> targets) {
    auto xt = Tensor::from_data(shape, x, true);
    auto logits = model.infer(xt, false);
    InputGradient out;
    out.losses = per_sample_cross_entropy(logits, targets);
    backward(softmax_cross_entropy(logits, targets));
    out.grad.assign(xt.grad().begin(), xt.grad().end());
    return out;
}

std::vector<int> attack_targets(const ModelGraph& model, const Tensor& x, std::span<const int> labels,
                                TargetMode mode) {
    if (mode == TargetMode::TrueLabel) return {labels.begin(), labels.end()};
    return argmax_rows(model.infer(x.detach()));
}

void check_inputs(const Tensor& x, std::span<const int> labels) {
    if (x.rank() != 4) throw DimensionError("attack input must be N×C×H×W, got " + shape_str(x.shape()));
    if (labels.size() != x.dim(0)) {
        throw DimensionError("attack got " + std::to_string(labels.size()) + " labels for a batch of " +
                             std::to_string(x.dim(0)));
    }
}

}  // namespace

Tensor fgsm(const ModelGraph& model, const Tensor& x, std::span<const int> labels, double epsilon,
            TargetMode target_mode) {
    check_inputs(x, labels);
    if (!(epsilon >= 0.0)) throw std::invalid_argument("fgsm epsilon must be non-negative");
    if (epsilon == 0.0) return x.detach().clone();
    auto targets = attack_targets(model, x, labels, target_mode);
    const auto xd = x.data();
    std::vector<double> base(xd.begin(), xd.end());
    auto g = input_gradient(model, x.shape(), base, targets);
    std::vector<double> out(base.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::clamp(base[i] + epsilon * sign(g.grad[i]), 0.0, 1.0);
    }
    return Tensor::from_data(x.shape(), std::move(out));
}

Tensor pgd(const ModelGraph& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
           std::uint64_t seed, std::span<const std::size_t> sample_ids) {
    validate(cfg);
    check_inputs(x, labels);
    if (!sample_ids.empty() && sample_ids.size() != labels.size()) {
        throw DimensionError("pgd: sample id count does not match the batch");
    }
    if (cfg.epsilon == 0.0) return x.detach().clone();

    const auto targets = attack_targets(model, x, labels, cfg.target_mode);
    const std::size_t n = x.dim(0);
    const std::size_t per = x.numel() / n;
    const auto xd = x.data();
    const std::vector<double> base(xd.begin(), xd.end());

    std::vector<double> best(base);
    std::vector<double> best_loss(n, -std::numeric_limits<double>::infinity());

    auto consider = [&](const std::vector<double>& candidate, const std::vector<double>& losses) {
        for (std::size_t s = 0; s < n; ++s) {
            if (losses[s] > best_loss[s]) {
                best_loss[s] = losses[s];
                std::copy_n(candidate.begin() + static_cast<long>(s * per), per, best.begin() + static_cast<long>(s * per));
            }
        }
    };

    std::vector<double> cur(base.size());
    for (int r = 0; r < cfg.restarts; ++r) {
        cur = base;
        if (cfg.random_start) {
            for (std::size_t s = 0; s < n; ++s) {
                std::size_t id = sample_ids.empty() ? s : sample_ids[s];
                auto rng = make_stream(seed, "pgd-start/" + std::to_string(r), id);
                for (std::size_t k = s * per; k < (s + 1) * per; ++k) {
                    double u = 2.0 * uniform01(rng) - 1.0;
                    cur[k] = std::clamp(base[k] + cfg.epsilon * u, 0.0, 1.0);
                }
            }
        }
        for (int t = 0; t < cfg.iterations; ++t) {
            auto g = input_gradient(model, x.shape(), cur, targets);
            if (t > 0) consider(cur, g.losses);
            for (std::size_t k = 0; k < cur.size(); ++k) {
                double v = cur[k] + cfg.step_size * sign(g.grad[k]);
                v = std::min(std::max(v, base[k] - cfg.epsilon), base[k] + cfg.epsilon);
                cur[k] = std::clamp(v, 0.0, 1.0);
            }
        }
        auto final_logits = model.infer(Tensor::from_data(x.shape(), cur));
        consider(cur, per_sample_cross_entropy(final_logits, targets));
    }
    return Tensor::from_data(x.shape(), std::move(best));
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
    auto pred = argmax_rows(logits);
    if (pred.size() != labels.size()) throw DimensionError("accuracy: label count mismatch");
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == labels[i] ? 1 : 0;
    return pred.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(pred.size());
}

RobustnessReport evaluate(const ModelGraph& model, const Dataset& data, const AttackConfig& cfg,
                          std::uint64_t seed, std::size_t batch_size) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: dataset is empty");
    if (batch_size == 0) throw std::invalid_argument("evaluate: batch size must be positive");
    AttackConfig attack = cfg;
    attack.target_mode = TargetMode::TrueLabel;
    validate(attack);

    const int k = std::max(model.spec().classes, data.classes());
    std::vector<std::size_t> count(static_cast<std::size_t>(k), 0), clean_ok(count), robust_ok(count);
    std::size_t clean_total = 0, robust_total = 0;

    std::vector<std::size_t> idx;
    for (std::size_t first = 0; first < data.size(); first += batch_size) {
        std::size_t last = std::min(data.size(), first + batch_size);
        idx.resize(last - first);
        std::iota(idx.begin(), idx.end(), first);
        auto [x, y] = data.batch(idx);
        auto clean_pred = argmax_rows(model.infer(x));
        auto x_adv = pgd(model, x, y, attack, seed, idx);
        auto adv_pred = argmax_rows(model.infer(x_adv));
        for (std::size_t i = 0; i < y.size(); ++i) {
            auto c = static_cast<std::size_t>(y[i]);
            ++count[c];
            if (clean_pred[i] == y[i]) {
                ++clean_ok[c];
                ++clean_total;
            }
            if (adv_pred[i] == y[i]) {
                ++robust_ok[c];
                ++robust_total;
            }
        }
    }
    RobustnessReport report;
    report.samples = data.size();
    report.clean_acc = static_cast<double>(clean_total) / static_cast<double>(data.size());
    report.robust_acc = static_cast<double>(robust_total) / static_cast<double>(data.size());
    for (std::size_t c = 0; c < count.size(); ++c) {
        double denom = count[c] ? static_cast<double>(count[c]) : 1.0;
        report.per_class_clean_acc.push_back(static_cast<double>(clean_ok[c]) / denom);
        report.per_class_robust_acc.push_back(static_cast<double>(robust_ok[c]) / denom);
    }
    return report;
}

}  // namespace layerprobe
