#include "layerprobe/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "layerprobe/random.hpp"

namespace layerprobe {

std::string to_string(CutDirection direction) { return direction == CutDirection::UpTo ? "upto" : "after"; }

CutDirection parse_cut_direction(const std::string& text) {
    if (text == "upto") return CutDirection::UpTo;
    if (text == "after") return CutDirection::After;
    throw std::invalid_argument("unknown cut direction '" + text + "' (expected upto or after)");
}

ProtocolContext make_context(const ModelGraph& pretrained, const Dataset& train, const Dataset& test,
                             const TrainConfig& retrain, const AttackConfig& eval_attack, std::uint64_t eval_seed) {
    ProtocolContext ctx;
    ctx.train = &train;
    ctx.test = &test;
    ctx.retrain = retrain;
    ctx.eval_attack = eval_attack;
    ctx.eval_seed = eval_seed;
    ctx.reinit_seed = pretrained.spec().init_seed;
    return ctx;
}

namespace {

std::vector<std::size_t> segment_layers(const ModelGraph& model, std::size_t first_segment, std::size_t last_segment) {
    std::vector<std::size_t> out;
    const auto& segs = model.segmentation().segments();
    for (std::size_t s = first_segment; s <= last_segment && s < segs.size(); ++s) {
        for (std::size_t l = segs[s].first; l <= segs[s].last; ++l) {
            if (model.layers()[l].parameterized()) out.push_back(l);
        }
    }
    return out;
}

}  // namespace

RetrainPlan cutoff_plan(const ModelGraph& model, const std::string& cutoff_segment, CutDirection direction) {
    const std::size_t c = model.segmentation().index_of(cutoff_segment);
    const std::size_t n = model.segmentation().size();
    RetrainPlan plan;
    plan.descriptor = to_string(direction) + ":" + cutoff_segment;
    if (direction == CutDirection::UpTo) {
        plan.layers = segment_layers(model, 0, c);
    } else if (c + 1 < n) {
        plan.layers = segment_layers(model, c + 1, n - 1);
    }
    return plan;
}

RetrainPlan layer_cutoff_plan(const ModelGraph& model, std::size_t layer_index, CutDirection direction) {
    if (layer_index >= model.layers().size()) {
        throw std::invalid_argument("layer index " + std::to_string(layer_index) + " out of range");
    }
    const auto& layer = model.layers()[layer_index];
    if (!layer.parameterized()) {
        throw std::invalid_argument("layer " + std::to_string(layer_index) + " (" + layer.name +
                                    ") has no parameters");
    }
    RetrainPlan plan;
    plan.descriptor = to_string(direction) + ":" + layer.name;
    for (std::size_t l : parameterized_layers(model)) {
        bool take = direction == CutDirection::UpTo ? l <= layer_index : l > layer_index;
        if (take) plan.layers.push_back(l);
    }
    return plan;
}

RetrainPlan subset_plan(const ModelGraph& model, std::uint64_t subset) {
    const auto& segs = model.segmentation().segments();
    if (subset == 0 || (segs.size() < 64 && subset >> segs.size())) {
        throw std::invalid_argument("segment subset " + std::to_string(subset) + " out of range");
    }
    RetrainPlan plan;
    plan.descriptor = "subset:";
    bool first = true;
    for (std::size_t s = 0; s < segs.size(); ++s) {
        if (!((subset >> s) & 1U)) continue;
        plan.descriptor += (first ? "" : "+") + segs[s].name;
        first = false;
        auto layers = segment_layers(model, s, s);
        plan.layers.insert(plan.layers.end(), layers.begin(), layers.end());
    }
    return plan;
}

ExperimentReport run_plan(const ModelGraph& pretrained, const RetrainPlan& plan, const ProtocolContext& ctx) {
    if (ctx.train == nullptr || ctx.test == nullptr) throw std::invalid_argument("protocol context lacks datasets");
    const auto start = std::chrono::steady_clock::now();
    const auto& segs = pretrained.segmentation().segments();

    ExperimentReport report;
    report.descriptor = plan.descriptor;
    report.pretrain_mode = pretrained.provenance.train_mode;
    report.retrain_mode = plan.layers.empty() ? "none" : to_string(ctx.retrain.mode);
    report.seed = ctx.retrain.seed;
    report.segment_trainable.assign(segs.size(), false);
    for (std::size_t l : plan.layers) report.segment_trainable[pretrained.segmentation().segment_of_layer(l)] = true;

    ModelGraph model(pretrained);
    if (!plan.layers.empty()) {
        if (ctx.reinitialize) reinit_layers(model, plan.layers, ctx.reinit_seed);
        auto mask = freeze_except_layers(model, plan.layers);
        train(model, *ctx.train, ctx.retrain, mask);
        for (std::size_t s = 0; s < segs.size(); ++s) {
            if (!report.segment_trainable[s] && model.segment_hash(s) != pretrained.segment_hash(s)) {
                throw std::logic_error("frozen segment " + segs[s].name + " changed during " + plan.descriptor);
            }
        }
    }
    auto eval = evaluate(model, *ctx.test, ctx.eval_attack, ctx.eval_seed);
    report.clean_acc = eval.clean_acc;
    report.robust_acc = eval.robust_acc;
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

ExperimentReport run_cutoff(const ModelGraph& pretrained, const std::string& cutoff_segment, CutDirection direction,
                            const ProtocolContext& ctx) {
    return run_plan(pretrained, cutoff_plan(pretrained, cutoff_segment, direction), ctx);
}

ExperimentReport run_layer_cutoff(const ModelGraph& pretrained, std::size_t layer_index, CutDirection direction,
                                  const ProtocolContext& ctx) {
    return run_plan(pretrained, layer_cutoff_plan(pretrained, layer_index, direction), ctx);
}

std::vector<ExperimentReport> run_plans(const ModelGraph& pretrained, const std::vector<RetrainPlan>& plans,
                                        const ProtocolContext& ctx) {
    std::vector<ExperimentReport> out(plans.size());
    const unsigned workers = std::max(1U, std::min<unsigned>(ctx.threads, static_cast<unsigned>(plans.size())));
    if (workers == 1) {
        for (std::size_t i = 0; i < plans.size(); ++i) out[i] = run_plan(pretrained, plans[i], ctx);
        return out;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&] {
        for (std::size_t i = next++; i < plans.size(); i = next++) {
            try {
                out[i] = run_plan(pretrained, plans[i], ctx);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return out;
}

std::vector<ExperimentReport> run_combination_sweep(const ModelGraph& pretrained, const ProtocolContext& ctx) {
    const std::size_t n = pretrained.segmentation().size();
    if (n > kMaxSweepSegments) {
        throw std::invalid_argument("combination sweep over " + std::to_string(n) + " segments needs " +
                                    std::to_string((1ULL << n) - 1) + " retraining runs; the limit is " +
                                    std::to_string(kMaxSweepSegments) + " segments");
    }
    std::vector<RetrainPlan> plans;
    for (std::uint64_t subset = 1; subset < (1ULL << n); ++subset) plans.push_back(subset_plan(pretrained, subset));
    return run_plans(pretrained, plans, ctx);
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MedianSummary aggregate_median(const std::vector<ExperimentReport>& reports, std::size_t segment) {
    std::vector<double> clean_with, clean_without, robust_with, robust_without;
    for (const auto& r : reports) {
        if (segment >= r.segment_trainable.size()) {
            throw std::invalid_argument("segment index " + std::to_string(segment) + " out of range");
        }
        if (r.segment_trainable[segment]) {
            clean_with.push_back(r.clean_acc);
            robust_with.push_back(r.robust_acc);
        } else {
            clean_without.push_back(r.clean_acc);
            robust_without.push_back(r.robust_acc);
        }
    }
    if (clean_with.empty() || clean_without.empty()) {
        throw std::invalid_argument("median partition for segment " + std::to_string(segment) + " is empty");
    }
    MedianSummary out;
    out.count_with = clean_with.size();
    out.count_without = clean_without.size();
    out.clean_with = median(std::move(clean_with));
    out.clean_without = median(std::move(clean_without));
    out.robust_with = median(std::move(robust_with));
    out.robust_without = median(std::move(robust_without));
    return out;
}

std::vector<ReinitEntry> reinit_robustness_sweep(ModelGraph& model, const Dataset& test, const AttackConfig& eval_attack,
                                                 std::uint64_t eval_seed, std::uint64_t reinit_seed) {
    std::vector<ReinitEntry> out;
    auto base = evaluate(model, test, eval_attack, eval_seed);
    out.push_back({"none", -1, base.clean_acc, base.robust_acc});
    for (std::size_t l : parameterized_layers(model)) {
        Layer& layer = model.mutable_layers()[l];
        Layer saved = layer;
        for (auto& p : saved.params) p = p.clone();
        init_layer(layer, derive_seed(reinit_seed, "reinit-sweep", l));
        auto r = evaluate(model, test, eval_attack, eval_seed);
        layer = std::move(saved);
        out.push_back({model.layers()[l].name, static_cast<int>(l), r.clean_acc, r.robust_acc});
    }
    return out;
}

}  // namespace layerprobe
