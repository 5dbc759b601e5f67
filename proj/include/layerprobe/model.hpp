#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/ops.hpp"
#include "layerprobe/tensor.hpp"

namespace layerprobe {

enum class LayerKind { Conv2d, BatchNorm2d, ReLU, MaxPool2d, GlobalAvgPool, Linear, ResidualAdd };

std::string to_string(LayerKind kind);

/// One node of the layer list. `inputs` index earlier layers; -1 is the graph input.
struct Layer {
    std::string name;
    LayerKind kind = LayerKind::ReLU;
    std::vector<int> inputs;

    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;

    std::vector<std::string> param_names;
    std::vector<Tensor> params;
    std::vector<double> running_mean;
    std::vector<double> running_var;

    /// Output extents without the batch axis: (C, H, W) or (F).
    Shape output_shape;

    bool parameterized() const { return !params.empty(); }
};

/// Contiguous, inclusive span of layer indices.
struct Segment {
    std::string name;
    std::size_t first = 0;
    std::size_t last = 0;
};

class ModuleSegmentation {
public:
    ModuleSegmentation() = default;
    /// Throws unless the segments partition [0, layer_count) in order.
    ModuleSegmentation(std::vector<Segment> segments, std::size_t layer_count);

    const std::vector<Segment>& segments() const { return segments_; }
    std::size_t size() const { return segments_.size(); }
    std::size_t index_of(const std::string& name) const;
    std::size_t segment_of_layer(std::size_t layer) const;
    std::vector<std::string> names() const;

private:
    std::vector<Segment> segments_;
};

struct ArchitectureSpec {
    std::string family;  // "mini_vgg" or "mini_resnet"
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;
    int classes = 10;
    double width_multiplier = 1.0;  // mini_vgg
    int base_width = 16;            // mini_resnet
    int blocks_per_stage = 2;       // mini_resnet
    std::uint64_t init_seed = 0;

    bool operator==(const ArchitectureSpec&) const = default;
};

struct Provenance {
    std::string train_mode = "none";
    std::string config_digest;
    int epochs = 0;
    std::uint64_t seed = 0;

    bool operator==(const Provenance&) const = default;
};

/// Per-parameter trainable flags, in ModelGraph::parameter_refs() order.
struct FreezeMask {
    std::vector<bool> trainable;

    bool all_trainable() const;
    bool none_trainable() const;
    std::size_t trainable_count() const;
};

struct ForwardOptions {
    NormMode mode = NormMode::Eval;
    /// nullptr means every parameter is trainable.
    const FreezeMask* mask = nullptr;
    /// When false, parameters enter the graph detached (input-gradient-only passes).
    bool param_grads = true;
};

struct ParamRef {
    std::size_t layer;
    std::size_t slot;
    std::size_t segment;
    std::string name;  // "<layer name>.<param name>"
};

class ModelGraph {
public:
    ModelGraph() = default;
    ModelGraph(ArchitectureSpec spec, std::vector<Layer> layers, ModuleSegmentation segmentation);

    // Copies are deep: parameter tensors and running statistics are duplicated.
    ModelGraph(const ModelGraph& other);
    ModelGraph& operator=(const ModelGraph& other);
    ModelGraph(ModelGraph&&) noexcept = default;
    ModelGraph& operator=(ModelGraph&&) noexcept = default;

    /// Logits for an N×C×H×W batch. Train mode updates running statistics of trainable batchnorms;
    /// frozen batchnorms always normalize with their running statistics.
    Tensor forward(const Tensor& x, const ForwardOptions& opts);
    /// Eval-mode logits; never mutates the model.
    Tensor infer(const Tensor& x, bool param_grads = false) const;
    /// Eval-mode outputs of every layer.
    std::vector<Tensor> infer_all(const Tensor& x, bool param_grads = false) const;

    const ArchitectureSpec& spec() const { return spec_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& mutable_layers() { return layers_; }
    const ModuleSegmentation& segmentation() const { return segmentation_; }

    std::vector<ParamRef> parameter_refs() const;
    Tensor& parameter(const ParamRef& ref) { return layers_[ref.layer].params[ref.slot]; }
    const Tensor& parameter(const ParamRef& ref) const { return layers_[ref.layer].params[ref.slot]; }
    /// Total scalar parameter count (running statistics excluded).
    std::size_t parameter_count() const;
    void zero_grad();

    /// Order-sensitive hash of every parameter and running statistic in one segment.
    std::uint64_t segment_hash(std::size_t segment) const;
    /// Bit equality of parameters and running statistics.
    bool same_state(const ModelGraph& other) const;

    Provenance provenance;

private:
    std::vector<Tensor> run(const Tensor& x, const ForwardOptions& opts, bool update_stats) const;

    ArchitectureSpec spec_;
    std::vector<Layer> layers_;
    ModuleSegmentation segmentation_;
};

/// VGG-style: five conv/bn/relu stages each closed by 2×2 max pooling, then GAP and a linear head.
/// Segments m_0…m_4 end at the pooling layers; m_fc is GAP + head.
ModelGraph build_mini_vgg(std::size_t channels, std::size_t height, std::size_t width, int classes,
                          double width_multiplier = 1.0, std::uint64_t seed = 0);

/// Residual network: stem (m_0), four stages whose first block has stride 2 (m_1…m_4), GAP + head (m_fc).
ModelGraph build_mini_resnet(std::size_t channels, std::size_t height, std::size_t width, int classes,
                             int blocks_per_stage = 2, int base_width = 16, std::uint64_t seed = 0);

ModelGraph build_model(const ArchitectureSpec& spec);

/// Draws fresh parameters for one layer from the (seed, layer name) stream and resets running stats.
void init_layer(Layer& layer, std::uint64_t seed);

/// Re-draws every layer of the named segments. Throws std::invalid_argument on an unknown name.
void reinit_segments(ModelGraph& model, std::span<const std::string> segment_names, std::uint64_t seed);
void reinit_layers(ModelGraph& model, std::span<const std::size_t> layer_indices, std::uint64_t seed);

FreezeMask freeze_except(const ModelGraph& model, std::span<const std::string> trainable_segments);
FreezeMask freeze_except_layers(const ModelGraph& model, std::span<const std::size_t> trainable_layers);

/// Indices of layers that own parameters, in layer order.
std::vector<std::size_t> parameterized_layers(const ModelGraph& model);

}  // namespace layerprobe
