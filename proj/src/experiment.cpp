#include "layerprobe/experiment.hpp"

#include <stdexcept>

namespace layerprobe {

DataSplits load_data(const ExperimentManifest& manifest) {
    const auto& d = manifest.dataset;
    DataSplits out;
    if (d.kind == "synthetic") {
        SyntheticOptions train = d.synthetic;
        train.split = "train";
        SyntheticOptions test = d.synthetic;
        test.split = "test";
        test.samples_per_class = d.synthetic_test_per_class;
        out.train = make_synthetic(train);
        out.test = make_synthetic(test);
    } else if (d.kind == "cifar10") {
        out.train = load_cifar10(d.path, "train");
        out.test = load_cifar10(d.path, "test");
    } else if (d.kind == "mnist") {
        out.train = load_mnist(d.path, "train");
        out.test = load_mnist(d.path, "test");
    } else {
        throw std::invalid_argument("unknown dataset kind '" + d.kind + "'");
    }
    if (d.train_limit) out.train = out.train.slice(0, d.train_limit);
    if (d.test_limit) out.test = out.test.slice(0, d.test_limit);
    return out;
}

ArchitectureSpec resolve_architecture(const ExperimentManifest& manifest, const Dataset& train) {
    if (train.image_shape.size() != 3) throw DimensionError("dataset images must be C×H×W");
    ArchitectureSpec spec = manifest.architecture;
    spec.channels = train.image_shape[0];
    spec.height = train.image_shape[1];
    spec.width = train.image_shape[2];
    spec.classes = train.classes();
    return spec;
}

ModelGraph pretrain_model(const ExperimentManifest& manifest, const DataSplits& data, TrainHistory* history) {
    ModelGraph model = build_model(resolve_architecture(manifest, data.train));
    auto h = train(model, data.train, manifest.pretrain);
    if (history) *history = std::move(h);
    return model;
}

ProtocolContext protocol_context(const ExperimentManifest& manifest, const ModelGraph& pretrained,
                                 const DataSplits& data, TrainMode retrain_mode) {
    TrainConfig retrain = manifest.retrain;
    retrain.mode = retrain_mode;
    if (retrain_mode == TrainMode::Conventional) retrain.clean_mix_ratio = 0.0;
    if (retrain_mode == TrainMode::FastAdversarial) {
        retrain.attack.iterations = 1;
        retrain.attack.random_start = true;
    }
    auto ctx = make_context(pretrained, data.train, data.test, retrain, manifest.eval_attack, manifest.eval_seed());
    ctx.reinitialize = manifest.sweep.reinitialize;
    ctx.threads = manifest.threads;
    return ctx;
}

std::vector<ExperimentReport> run_cutoff_sweep(const ExperimentManifest& manifest, const ModelGraph& pretrained,
                                               const DataSplits& data) {
    auto cutoffs = manifest.sweep.cutoffs;
    if (cutoffs.empty()) cutoffs = pretrained.segmentation().names();
    std::vector<ExperimentReport> out;
    for (TrainMode mode : manifest.sweep.retrain_modes) {
        auto ctx = protocol_context(manifest, pretrained, data, mode);
        std::vector<RetrainPlan> plans;
        for (const auto& c : cutoffs) {
            for (CutDirection dir : manifest.sweep.directions) plans.push_back(cutoff_plan(pretrained, c, dir));
        }
        auto reports = run_plans(pretrained, plans, ctx);
        out.insert(out.end(), reports.begin(), reports.end());
    }
    return out;
}

std::vector<EmbeddingSummary> run_embedding(const ExperimentManifest& manifest, const ModelGraph& model,
                                            const DataSplits& data) {
    const auto& a = manifest.analysis;
    HarvestOptions h;
    h.segments = a.segments;
    h.positions_per_image = a.positions_per_image;
    h.attack = a.attack;
    h.seed = manifest.analysis_seed();
    h.cap_positions = true;
    auto samples = harvest(model, data.test.slice(0, a.images), h);

    std::vector<EmbeddingSummary> out;
    for (const auto& segment : a.segments) {
        EmbeddingSummary s;
        s.segment = segment;
        auto clean = sample_matrix(samples, segment, false);
        auto adv = sample_matrix(samples, segment, true);
        s.clean_samples = static_cast<std::size_t>(clean.rows());
        s.adversarial_samples = static_cast<std::size_t>(adv.rows());
        s.result = embed_groups(clean, adv, a.embed);
        out.push_back(std::move(s));
    }
    return out;
}

PipelineResult run_pipeline(const ExperimentManifest& manifest) {
    auto data = load_data(manifest);
    TrainHistory history;
    auto model = pretrain_model(manifest, data, &history);
    PipelineResult r;
    r.history = history_table(history);
    r.cutoffs = experiment_table(run_cutoff_sweep(manifest, model, data), model.segmentation().names());
    r.embedding = embedding_table(run_embedding(manifest, model, data));
    return r;
}

}  // namespace layerprobe
