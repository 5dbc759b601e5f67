#pragma once

#include <string>
#include <vector>

#include "layerprobe/manifest.hpp"
#include "layerprobe/report.hpp"

namespace layerprobe {

struct DataSplits {
    Dataset train;
    Dataset test;
};

/// Loads (or generates) both splits and applies the manifest's size limits.
DataSplits load_data(const ExperimentManifest& manifest);

/// Architecture from the manifest, sized to the dataset's images and classes.
ArchitectureSpec resolve_architecture(const ExperimentManifest& manifest, const Dataset& train);

/// Builds a fresh model and trains it with the pretraining recipe.
ModelGraph pretrain_model(const ExperimentManifest& manifest, const DataSplits& data, TrainHistory* history = nullptr);

ProtocolContext protocol_context(const ExperimentManifest& manifest, const ModelGraph& pretrained,
                                 const DataSplits& data, TrainMode retrain_mode);

/// Plans for every (retrain mode, cutoff, direction) triple of the sweep section, in that nesting order.
std::vector<ExperimentReport> run_cutoff_sweep(const ExperimentManifest& manifest, const ModelGraph& pretrained,
                                               const DataSplits& data);

/// Harvests the first `analysis.images` test images and embeds every requested segment.
std::vector<EmbeddingSummary> run_embedding(const ExperimentManifest& manifest, const ModelGraph& model,
                                            const DataSplits& data);

struct PipelineResult {
    Table history;
    Table cutoffs;
    Table embedding;
};

/// pretrain → cutoff sweep → embedding, entirely in memory.
PipelineResult run_pipeline(const ExperimentManifest& manifest);

}  // namespace layerprobe
