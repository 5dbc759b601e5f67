#include "layerprobe/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "layerprobe/ops.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::Conventional: return "conventional";
        case TrainMode::Adversarial: return "adversarial";
        case TrainMode::FastAdversarial: return "fast_adversarial";
    }
    return "unknown";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "conventional") return TrainMode::Conventional;
    if (text == "adversarial") return TrainMode::Adversarial;
    if (text == "fast_adversarial") return TrainMode::FastAdversarial;
    throw std::invalid_argument("unknown training mode '" + text +
                                "' (expected conventional, adversarial or fast_adversarial)");
}

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 2) throw std::invalid_argument("batch_size must be at least 2");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be non-negative");
    if (!(cfg.optimizer.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (cfg.optimizer.kind == OptimizerConfig::Kind::SgdMomentum &&
        !(cfg.optimizer.momentum >= 0.0 && cfg.optimizer.momentum < 1.0)) {
        throw std::invalid_argument("momentum must lie in [0, 1)");
    }
    if (!(cfg.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
    if (!(cfg.clean_mix_ratio >= 0.0 && cfg.clean_mix_ratio <= 1.0)) {
        throw std::invalid_argument("clean_mix_ratio must lie in [0, 1]");
    }
    if (cfg.mode == TrainMode::Conventional && cfg.clean_mix_ratio != 0.0) {
        throw std::invalid_argument("clean_mix_ratio applies only to adversarial modes");
    }
    if (cfg.schedule.kind == ScheduleConfig::Kind::StepDecay && !(cfg.schedule.factor > 0.0)) {
        throw std::invalid_argument("step decay factor must be positive");
    }
    if (cfg.mode != TrainMode::Conventional) {
        validate(cfg.attack);
        if (cfg.mode == TrainMode::FastAdversarial && (cfg.attack.iterations != 1 || !cfg.attack.random_start)) {
            throw std::invalid_argument("fast adversarial training needs attack.iterations == 1 and random_start");
        }
    }
}

std::string config_digest(const TrainConfig& cfg) {
    std::ostringstream os;
    os << std::setprecision(17) << to_string(cfg.mode) << '|' << static_cast<int>(cfg.optimizer.kind) << '|'
       << cfg.optimizer.lr << '|' << cfg.optimizer.momentum << '|' << cfg.optimizer.beta1 << '|'
       << cfg.optimizer.beta2 << '|' << cfg.optimizer.adam_eps << '|' << cfg.weight_decay << '|'
       << cfg.coupled_weight_decay << '|' << cfg.batch_size << '|' << cfg.epochs << '|'
       << static_cast<int>(cfg.schedule.kind) << '|' << cfg.schedule.factor << '|';
    for (int m : cfg.schedule.milestones) os << m << ',';
    os << '|' << cfg.clean_mix_ratio << '|' << cfg.attack.epsilon << '|' << cfg.attack.step_size << '|'
       << cfg.attack.iterations << '|' << cfg.attack.random_start << '|' << to_string(cfg.attack.target_mode) << '|'
       << cfg.attack.restarts << '|' << cfg.joint_batchnorm << '|' << cfg.augment << '|' << cfg.seed;
    auto text = os.str();
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(text.data(), text.size());
    return hex.str();
}

TrainingDiverged::TrainingDiverged(int epoch_, int batch_, double lr_)
    : std::runtime_error("training loss became non-finite at epoch " + std::to_string(epoch_) + ", batch " +
                         std::to_string(batch_) + ", lr " + std::to_string(lr_)),
      epoch(epoch_),
      batch(batch_),
      lr(lr_) {}

double schedule_lr(const ScheduleConfig& schedule, int epoch, int total_epochs, double base_lr) {
    if (epoch < 0 || epoch >= total_epochs) {
        throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(total_epochs) + ")");
    }
    switch (schedule.kind) {
        case ScheduleConfig::Kind::Constant: return base_lr;
        case ScheduleConfig::Kind::Cosine:
            return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(total_epochs)));
        case ScheduleConfig::Kind::StepDecay: {
            int passed = 0;
            for (int m : schedule.milestones) passed += epoch >= m ? 1 : 0;
            return base_lr * std::pow(schedule.factor, passed);
        }
    }
    return base_lr;
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
               double weight_decay, const OptimizerConfig& cfg, bool coupled) {
    if (grads.size() != params.size()) throw DimensionError("adam_step: gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("adam_step: optimizer state size mismatch");
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = grads[i];
        if (coupled) {
            g += weight_decay * params[i];
        } else {
            params[i] -= lr * weight_decay * params[i];
        }
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = state.m[i] / c1;
        double vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
}

void sgd_momentum_step(std::span<double> params, std::span<const double> grads, std::span<double> velocity,
                       double lr, double momentum, double weight_decay) {
    if (grads.size() != params.size() || velocity.size() != params.size()) {
        throw DimensionError("sgd_momentum_step: size mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = momentum * velocity[i] + (grads[i] + weight_decay * params[i]);
        params[i] -= lr * velocity[i];
    }
}

Optimizer::Optimizer(const ModelGraph& model, const OptimizerConfig& cfg, double weight_decay, bool coupled)
    : cfg_(cfg), weight_decay_(weight_decay), coupled_(coupled) {
    auto refs = model.parameter_refs();
    adam_.resize(refs.size());
    velocity_.resize(refs.size());
}

void Optimizer::step(ModelGraph& model, const FreezeMask& mask, double lr) {
    auto refs = model.parameter_refs();
    if (mask.trainable.size() != refs.size()) throw std::invalid_argument("freeze mask does not match the model");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (!mask.trainable[i]) continue;
        auto& p = model.parameter(refs[i]);
        if (!p.has_grad()) continue;
        if (cfg_.kind == OptimizerConfig::Kind::Adam) {
            adam_step(p.mutable_data(), p.grad(), adam_[i], lr, weight_decay_, cfg_, coupled_);
        } else {
            if (velocity_[i].empty()) velocity_[i].assign(p.numel(), 0.0);
            if (coupled_) {
                sgd_momentum_step(p.mutable_data(), p.grad(), velocity_[i], lr, cfg_.momentum, weight_decay_);
            } else {
                auto data = p.mutable_data();
                for (auto& v : data) v -= lr * weight_decay_ * v;
                sgd_momentum_step(data, p.grad(), velocity_[i], lr, cfg_.momentum, 0.0);
            }
        }
    }
}

std::size_t clean_count(std::size_t batch, double clean_mix_ratio) {
    if (!(clean_mix_ratio >= 0.0 && clean_mix_ratio <= 1.0)) {
        throw std::invalid_argument("clean_mix_ratio must lie in [0, 1]");
    }
    auto k = static_cast<std::size_t>(std::floor(clean_mix_ratio * static_cast<double>(batch) + 1e-9));
    return std::min(k, batch);
}

Tensor build_mixed_batch(const ModelGraph& model, const Tensor& clean_batch, std::span<const int> labels,
                         const AttackConfig& attack, double clean_mix_ratio, std::uint64_t seed,
                         std::span<const std::size_t> sample_ids) {
    const std::size_t b = clean_batch.dim(0);
    const std::size_t keep = clean_count(b, clean_mix_ratio);
    if (keep == b) return clean_batch.detach().clone();

    AttackConfig cfg = attack;
    cfg.target_mode = TargetMode::Prediction;

    const std::size_t per = clean_batch.numel() / b;
    const auto src = clean_batch.data();
    Shape adv_shape = clean_batch.shape();
    adv_shape[0] = b - keep;
    auto adv_in = Tensor::from_data(adv_shape, std::vector<double>(src.begin() + static_cast<long>(keep * per), src.end()));
    std::vector<std::size_t> ids;
    for (std::size_t i = keep; i < b; ++i) ids.push_back(sample_ids.empty() ? i : sample_ids[i]);
    auto adv = pgd(model, adv_in, labels.subspan(keep), cfg, seed, ids);

    std::vector<double> out(src.begin(), src.begin() + static_cast<long>(keep * per));
    out.insert(out.end(), adv.data().begin(), adv.data().end());
    return Tensor::from_data(clean_batch.shape(), std::move(out));
}

namespace {

void augment_batch(Tensor& x, Rng& rng) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const long pad = std::max<long>(1, static_cast<long>(h) / 8);
    auto data = x.mutable_data();
    std::vector<double> img(c * h * w);
    for (std::size_t i = 0; i < n; ++i) {
        bool flip = uniform01(rng) < 0.5;
        long dy = static_cast<long>(uniform01(rng) * (2 * pad + 1)) - pad;
        long dx = static_cast<long>(uniform01(rng) * (2 * pad + 1)) - pad;
        double* p = data.data() + i * c * h * w;
        std::copy(p, p + c * h * w, img.begin());
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (long y = 0; y < static_cast<long>(h); ++y) {
                for (long xx = 0; xx < static_cast<long>(w); ++xx) {
                    long sy = y + dy;
                    long sx = (flip ? static_cast<long>(w) - 1 - xx : xx) + dx;
                    bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(h) && sx < static_cast<long>(w);
                    p[(ch * h + static_cast<std::size_t>(y)) * w + static_cast<std::size_t>(xx)] =
                        inside ? img[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : 0.0;
                }
            }
        }
    }
}

Tensor slice_rows(const Tensor& x, std::size_t first, std::size_t last) {
    const std::size_t per = x.numel() / x.dim(0);
    Shape shape = x.shape();
    shape[0] = last - first;
    auto d = x.data();
    return Tensor::from_data(shape, std::vector<double>(d.begin() + static_cast<long>(first * per),
                                                        d.begin() + static_cast<long>(last * per)));
}

double training_set_accuracy(const ModelGraph& model, const Dataset& data) {
    std::size_t n = std::min<std::size_t>(data.size(), 512);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    auto [x, y] = data.batch(idx);
    return accuracy(model.infer(x), y);
}

}  // namespace

TrainHistory train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg) {
    FreezeMask all;
    all.trainable.assign(model.parameter_refs().size(), true);
    return train(model, data, cfg, all);
}

TrainHistory train(ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const FreezeMask& mask) {
    validate(cfg);
    if (mask.trainable.size() != model.parameter_refs().size()) {
        throw std::invalid_argument("freeze mask does not match the model");
    }
    if (data.size() == 0) throw std::invalid_argument("training dataset is empty");
    if (data.image_shape != Shape{model.spec().channels, model.spec().height, model.spec().width}) {
        throw DimensionError("dataset images " + shape_str(data.image_shape) + " do not fit the model input");
    }
    TrainHistory history;
    if (cfg.epochs == 0) return history;

    const bool adversarial = cfg.mode != TrainMode::Conventional;
    const bool any_trainable = !mask.none_trainable();
    AttackConfig attack = cfg.attack;
    attack.target_mode = TargetMode::Prediction;
    const double mix = adversarial ? cfg.clean_mix_ratio : 1.0;

    Optimizer optimizer(model, cfg.optimizer, cfg.weight_decay, cfg.coupled_weight_decay);
    ForwardOptions fwd;
    fwd.mode = NormMode::Train;
    fwd.mask = &mask;

    const std::size_t n = data.size();
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> order(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = schedule_lr(cfg.schedule, epoch, cfg.epochs, cfg.optimizer.lr);
        std::iota(order.begin(), order.end(), 0);
        auto shuffle_rng = make_stream(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch));
        for (std::size_t i = n; i > 1; --i) {
            auto j = static_cast<std::size_t>(uniform01(shuffle_rng) * static_cast<double>(i));
            std::swap(order[i - 1], order[j]);
        }
        auto augment_rng = make_stream(cfg.seed, "augment", static_cast<std::uint64_t>(epoch));
        const auto attack_seed = derive_seed(cfg.seed, "train-attack", static_cast<std::uint64_t>(epoch));

        double loss_sum = 0.0;
        std::size_t seen = 0;
        int batch_index = 0;
        for (std::size_t first = 0; first < n; first += bs, ++batch_index) {
            std::size_t last = std::min(n, first + bs);
            if (last - first < 2) continue;
            std::span<const std::size_t> idx(order.data() + first, last - first);
            auto [x, y] = data.batch(idx);
            if (cfg.augment) augment_batch(x, augment_rng);

            std::size_t keep = x.dim(0);
            if (adversarial) {
                keep = clean_count(x.dim(0), mix);
                x = build_mixed_batch(model, x, y, attack, mix, attack_seed, idx);
            }

            Tensor loss;
            if (!adversarial || cfg.joint_batchnorm || keep < 2 || x.dim(0) - keep < 2) {
                loss = softmax_cross_entropy(model.forward(x, fwd), y);
            } else {
                std::span<const int> labels(y);
                auto clean_loss = softmax_cross_entropy(model.forward(slice_rows(x, 0, keep), fwd), labels.first(keep));
                auto adv_loss =
                    softmax_cross_entropy(model.forward(slice_rows(x, keep, x.dim(0)), fwd), labels.subspan(keep));
                const double frac = static_cast<double>(keep) / static_cast<double>(x.dim(0));
                loss = add(scale(clean_loss, frac), scale(adv_loss, 1.0 - frac));
            }
            const double value = loss.item();
            if (!std::isfinite(value)) throw TrainingDiverged(epoch, batch_index, lr);
            if (any_trainable) {
                backward(loss);
                optimizer.step(model, mask, lr);
                model.zero_grad();
            }
            loss_sum += value * static_cast<double>(x.dim(0));
            seen += x.dim(0);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        rec.clean_acc = training_set_accuracy(model, data);
        rec.lr = lr;
        history.epochs.push_back(rec);
    }

    model.provenance.train_mode = to_string(cfg.mode);
    model.provenance.config_digest = config_digest(cfg);
    model.provenance.epochs += cfg.epochs;
    model.provenance.seed = cfg.seed;
    return history;
}

}  // namespace layerprobe
