#include "layerprobe/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "layerprobe/random.hpp"

namespace layerprobe {

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::Conv2d: return "conv2d";
        case LayerKind::BatchNorm2d: return "batchnorm2d";
        case LayerKind::ReLU: return "relu";
        case LayerKind::MaxPool2d: return "maxpool2d";
        case LayerKind::GlobalAvgPool: return "global_avg_pool";
        case LayerKind::Linear: return "linear";
        case LayerKind::ResidualAdd: return "residual_add";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------

ModuleSegmentation::ModuleSegmentation(std::vector<Segment> segments, std::size_t layer_count)
    : segments_(std::move(segments)) {
    if (segments_.empty()) throw std::invalid_argument("segmentation must contain at least one segment");
    std::size_t expected = 0;
    for (const auto& s : segments_) {
        if (s.first != expected || s.last < s.first) {
            throw std::invalid_argument("segment " + s.name + " does not start at layer " + std::to_string(expected));
        }
        expected = s.last + 1;
    }
    if (expected != layer_count) {
        throw std::invalid_argument("segments cover " + std::to_string(expected) + " of " +
                                    std::to_string(layer_count) + " layers");
    }
}

std::size_t ModuleSegmentation::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (segments_[i].name == name) return i;
    }
    throw std::invalid_argument("unknown segment '" + name + "'");
}

std::size_t ModuleSegmentation::segment_of_layer(std::size_t layer) const {
    for (std::size_t i = 0; i < segments_.size(); ++i) {
        if (layer >= segments_[i].first && layer <= segments_[i].last) return i;
    }
    throw std::out_of_range("layer " + std::to_string(layer) + " is not covered by the segmentation");
}

std::vector<std::string> ModuleSegmentation::names() const {
    std::vector<std::string> out;
    for (const auto& s : segments_) out.push_back(s.name);
    return out;
}

// ---------------------------------------------------------------------------

bool FreezeMask::all_trainable() const {
    for (bool t : trainable) {
        if (!t) return false;
    }
    return true;
}

bool FreezeMask::none_trainable() const {
    for (bool t : trainable) {
        if (t) return false;
    }
    return true;
}

std::size_t FreezeMask::trainable_count() const {
    std::size_t n = 0;
    for (bool t : trainable) n += t ? 1 : 0;
    return n;
}

// ---------------------------------------------------------------------------

namespace {

Shape infer_output_shape(const Layer& layer, const std::vector<Shape>& in) {
    auto need_rank = [&](const Shape& s, std::size_t r) {
        if (s.size() != r) {
            throw DimensionError("layer " + layer.name + " (" + to_string(layer.kind) + ") expects rank " +
                                 std::to_string(r) + " input, got " + shape_str(s));
        }
    };
    const Shape& s = in.at(0);
    switch (layer.kind) {
        case LayerKind::Conv2d: {
            need_rank(s, 3);
            if (static_cast<int>(s[0]) != layer.in_channels) {
                throw DimensionError("layer " + layer.name + " expects " + std::to_string(layer.in_channels) +
                                     " channels, receives " + std::to_string(s[0]));
            }
            long h = static_cast<long>(s[1]) + 2L * layer.padding - layer.kernel;
            long w = static_cast<long>(s[2]) + 2L * layer.padding - layer.kernel;
            if (h < 0 || w < 0) throw DimensionError("layer " + layer.name + ": input too small " + shape_str(s));
            return {static_cast<std::size_t>(layer.out_channels), static_cast<std::size_t>(h / layer.stride + 1),
                    static_cast<std::size_t>(w / layer.stride + 1)};
        }
        case LayerKind::BatchNorm2d:
            need_rank(s, 3);
            if (static_cast<int>(s[0]) != layer.in_channels) {
                throw DimensionError("layer " + layer.name + " normalizes " + std::to_string(layer.in_channels) +
                                     " channels, receives " + std::to_string(s[0]));
            }
            return s;
        case LayerKind::ReLU: return s;
        case LayerKind::MaxPool2d:
            need_rank(s, 3);
            if (s[1] < static_cast<std::size_t>(layer.kernel) || s[2] < static_cast<std::size_t>(layer.kernel)) {
                throw DimensionError("layer " + layer.name + ": pooling window exceeds input " + shape_str(s));
            }
            return {s[0], (s[1] - layer.kernel) / layer.stride + 1, (s[2] - layer.kernel) / layer.stride + 1};
        case LayerKind::GlobalAvgPool: need_rank(s, 3); return {s[0]};
        case LayerKind::Linear:
            need_rank(s, 1);
            if (static_cast<int>(s[0]) != layer.in_channels) {
                throw DimensionError("layer " + layer.name + " expects " + std::to_string(layer.in_channels) +
                                     " features, receives " + std::to_string(s[0]));
            }
            return {static_cast<std::size_t>(layer.out_channels)};
        case LayerKind::ResidualAdd:
            if (in.size() != 2 || in[0] != in[1]) {
                throw DimensionError("layer " + layer.name + ": residual operands " + shape_str(in.at(0)) + " and " +
                                     shape_str(in.size() > 1 ? in[1] : Shape{}) + " differ");
            }
            return s;
    }
    return s;
}

void copy_layers_deep(std::vector<Layer>& layers) {
    for (auto& l : layers) {
        for (auto& p : l.params) p = p.clone();
    }
}

}  // namespace

ModelGraph::ModelGraph(ArchitectureSpec spec, std::vector<Layer> layers, ModuleSegmentation segmentation)
    : spec_(std::move(spec)), layers_(std::move(layers)), segmentation_(std::move(segmentation)) {
    if (segmentation_.segments().back().last + 1 != layers_.size()) {
        throw std::invalid_argument("segmentation does not match the layer list");
    }
    Shape input{spec_.channels, spec_.height, spec_.width};
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& layer = layers_[i];
        if (layer.inputs.empty()) throw std::invalid_argument("layer " + layer.name + " has no inputs");
        std::vector<Shape> in;
        for (int src : layer.inputs) {
            if (src >= static_cast<int>(i) || src < -1) {
                throw std::invalid_argument("layer " + layer.name + " reads a later or invalid layer");
            }
            in.push_back(src < 0 ? input : layers_[static_cast<std::size_t>(src)].output_shape);
        }
        layer.output_shape = infer_output_shape(layer, in);
    }
    const auto& out = layers_.back().output_shape;
    if (out.size() != 1 || static_cast<int>(out[0]) != spec_.classes) {
        throw DimensionError("final layer produces " + shape_str(out) + ", expected " +
                             std::to_string(spec_.classes) + " logits");
    }
}

ModelGraph::ModelGraph(const ModelGraph& other)
    : provenance(other.provenance), spec_(other.spec_), layers_(other.layers_), segmentation_(other.segmentation_) {
    copy_layers_deep(layers_);
}

ModelGraph& ModelGraph::operator=(const ModelGraph& other) {
    if (this != &other) {
        ModelGraph tmp(other);
        *this = std::move(tmp);
    }
    return *this;
}

std::vector<Tensor> ModelGraph::run(const Tensor& x, const ForwardOptions& opts, bool update_stats) const {
    if (x.rank() != 4 || x.dim(1) != spec_.channels || x.dim(2) != spec_.height || x.dim(3) != spec_.width) {
        throw DimensionError("model expects N×" + std::to_string(spec_.channels) + "×" +
                             std::to_string(spec_.height) + "×" + std::to_string(spec_.width) + " input, got " +
                             shape_str(x.shape()));
    }
    std::size_t n_params = 0;
    for (const auto& l : layers_) n_params += l.params.size();
    if (opts.mask && opts.mask->trainable.size() != n_params) {
        throw std::invalid_argument("freeze mask does not match the model's parameter count");
    }
    std::vector<Tensor> outs(layers_.size());
    std::size_t param_index = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& layer = layers_[i];
        auto input = [&](std::size_t k) -> const Tensor& {
            int src = layer.inputs[k];
            return src < 0 ? x : outs[static_cast<std::size_t>(src)];
        };
        bool layer_trainable = true;
        std::vector<Tensor> params;
        for (const auto& p : layer.params) {
            bool trainable = !opts.mask || opts.mask->trainable[param_index];
            layer_trainable = layer_trainable && trainable;
            params.push_back(trainable && opts.param_grads ? p : p.detach());
            ++param_index;
        }
        switch (layer.kind) {
            case LayerKind::Conv2d:
                outs[i] = conv2d(input(0), params[0], params.size() > 1 ? params[1] : Tensor{}, layer.stride,
                                 layer.padding);
                break;
            case LayerKind::BatchNorm2d: {
                BatchNormOptions bn;
                bn.mode = (opts.mode == NormMode::Train && layer_trainable) ? NormMode::Train : NormMode::Eval;
                bn.update_running = update_stats;
                auto& mutable_layer = const_cast<Layer&>(layer);
                RunningStats stats{mutable_layer.running_mean, mutable_layer.running_var};
                outs[i] = batchnorm2d(input(0), params[0], params[1], stats, bn);
                break;
            }
            case LayerKind::ReLU: outs[i] = relu(input(0)); break;
            case LayerKind::MaxPool2d: outs[i] = maxpool2d(input(0), layer.kernel, layer.stride); break;
            case LayerKind::GlobalAvgPool: outs[i] = global_avg_pool(input(0)); break;
            case LayerKind::Linear:
                outs[i] = linear(input(0), params[0], params.size() > 1 ? params[1] : Tensor{});
                break;
            case LayerKind::ResidualAdd: outs[i] = residual_add(input(0), input(1)); break;
        }
    }
    return outs;
}

Tensor ModelGraph::forward(const Tensor& x, const ForwardOptions& opts) {
    return run(x, opts, opts.mode == NormMode::Train).back();
}

Tensor ModelGraph::infer(const Tensor& x, bool param_grads) const {
    return infer_all(x, param_grads).back();
}

std::vector<Tensor> ModelGraph::infer_all(const Tensor& x, bool param_grads) const {
    ForwardOptions opts;
    opts.mode = NormMode::Eval;
    opts.param_grads = param_grads;
    return run(x, opts, false);
}

std::vector<ParamRef> ModelGraph::parameter_refs() const {
    std::vector<ParamRef> refs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (std::size_t k = 0; k < layers_[i].params.size(); ++k) {
            refs.push_back({i, k, segmentation_.segment_of_layer(i), layers_[i].name + "." + layers_[i].param_names[k]});
        }
    }
    return refs;
}

std::size_t ModelGraph::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) {
        for (const auto& p : l.params) n += p.numel();
    }
    return n;
}

void ModelGraph::zero_grad() {
    for (auto& l : layers_) {
        for (auto& p : l.params) p.zero_grad();
    }
}

std::uint64_t ModelGraph::segment_hash(std::size_t segment) const {
    const auto& seg = segmentation_.segments().at(segment);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = seg.first; i <= seg.last; ++i) {
        const auto& l = layers_[i];
        for (const auto& p : l.params) h = fnv1a64(p.data().data(), p.numel() * sizeof(double), h);
        h = fnv1a64(l.running_mean.data(), l.running_mean.size() * sizeof(double), h);
        h = fnv1a64(l.running_var.data(), l.running_var.size() * sizeof(double), h);
    }
    return h;
}

bool ModelGraph::same_state(const ModelGraph& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    auto same_bits = [](std::span<const double> a, std::span<const double> b) {
        return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& a = layers_[i];
        const auto& b = other.layers_[i];
        if (a.params.size() != b.params.size()) return false;
        for (std::size_t k = 0; k < a.params.size(); ++k) {
            if (!same_bits(a.params[k].data(), b.params[k].data())) return false;
        }
        if (!same_bits(a.running_mean, b.running_mean) || !same_bits(a.running_var, b.running_var)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Builders

namespace {

class LayerListBuilder {
public:
    int conv(const std::string& name, int src, int in_c, int out_c, int k, int stride, int pad) {
        Layer l;
        l.name = name;
        l.kind = LayerKind::Conv2d;
        l.inputs = {src};
        l.in_channels = in_c;
        l.out_channels = out_c;
        l.kernel = k;
        l.stride = stride;
        l.padding = pad;
        l.param_names = {"weight"};
        l.params = {Tensor::zeros({static_cast<std::size_t>(out_c), static_cast<std::size_t>(in_c),
                                   static_cast<std::size_t>(k), static_cast<std::size_t>(k)},
                                  true)};
        return push(std::move(l));
    }
    int bn(const std::string& name, int src, int c) {
        Layer l;
        l.name = name;
        l.kind = LayerKind::BatchNorm2d;
        l.inputs = {src};
        l.in_channels = c;
        l.out_channels = c;
        l.param_names = {"gamma", "beta"};
        l.params = {Tensor::zeros({static_cast<std::size_t>(c)}, true),
                    Tensor::zeros({static_cast<std::size_t>(c)}, true)};
        l.running_mean.assign(static_cast<std::size_t>(c), 0.0);
        l.running_var.assign(static_cast<std::size_t>(c), 1.0);
        return push(std::move(l));
    }
    int simple(const std::string& name, LayerKind kind, std::vector<int> inputs, int k = 0, int stride = 1) {
        Layer l;
        l.name = name;
        l.kind = kind;
        l.inputs = std::move(inputs);
        l.kernel = k;
        l.stride = stride;
        return push(std::move(l));
    }
    int linear(const std::string& name, int src, int in_f, int out_f) {
        Layer l;
        l.name = name;
        l.kind = LayerKind::Linear;
        l.inputs = {src};
        l.in_channels = in_f;
        l.out_channels = out_f;
        l.param_names = {"weight", "bias"};
        l.params = {Tensor::zeros({static_cast<std::size_t>(out_f), static_cast<std::size_t>(in_f)}, true),
                    Tensor::zeros({static_cast<std::size_t>(out_f)}, true)};
        return push(std::move(l));
    }
    void close_segment(const std::string& name) {
        segments.push_back({name, seg_start, layers.size() - 1});
        seg_start = layers.size();
    }
    int last() const { return static_cast<int>(layers.size()) - 1; }

    std::vector<Layer> layers;
    std::vector<Segment> segments;

private:
    int push(Layer l) {
        layers.push_back(std::move(l));
        return last();
    }
    std::size_t seg_start = 0;
};

void require_extent(std::size_t height, std::size_t width, std::size_t min_extent, const char* family) {
    if (height < min_extent || width < min_extent) {
        throw std::invalid_argument(std::string(family) + " needs spatial extent >= " + std::to_string(min_extent) +
                                    " for its down-sampling depth, got " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
}

ModelGraph finish(ArchitectureSpec spec, LayerListBuilder&& b) {
    auto n = b.layers.size();
    ModelGraph model(std::move(spec), std::move(b.layers), ModuleSegmentation(std::move(b.segments), n));
    for (auto& l : model.mutable_layers()) init_layer(l, model.spec().init_seed);
    return model;
}

}  // namespace

ModelGraph build_mini_vgg(std::size_t channels, std::size_t height, std::size_t width, int classes,
                          double width_multiplier, std::uint64_t seed) {
    require_extent(height, width, 32, "mini_vgg");
    if (classes < 2) throw std::invalid_argument("mini_vgg needs at least two classes");
    if (!(width_multiplier > 0.0)) throw std::invalid_argument("width multiplier must be positive");
    const int base[5] = {16, 32, 64, 128, 128};
    const int convs[5] = {1, 1, 2, 2, 2};

    ArchitectureSpec spec{"mini_vgg", channels, height, width, classes, width_multiplier, 16, 0, seed};
    LayerListBuilder b;
    int src = -1;
    int in_c = static_cast<int>(channels);
    for (int s = 0; s < 5; ++s) {
        int out_c = std::max(1, static_cast<int>(std::lround(base[s] * width_multiplier)));
        std::string prefix = "m_" + std::to_string(s) + ".";
        for (int c = 0; c < convs[s]; ++c) {
            auto id = std::to_string(c);
            src = b.conv(prefix + "conv" + id, src, in_c, out_c, 3, 1, 1);
            src = b.bn(prefix + "bn" + id, src, out_c);
            src = b.simple(prefix + "relu" + id, LayerKind::ReLU, {src});
            in_c = out_c;
        }
        src = b.simple(prefix + "pool", LayerKind::MaxPool2d, {src}, 2, 2);
        b.close_segment("m_" + std::to_string(s));
    }
    src = b.simple("m_fc.gap", LayerKind::GlobalAvgPool, {src});
    b.linear("m_fc.head", src, in_c, classes);
    b.close_segment("m_fc");
    return finish(spec, std::move(b));
}

ModelGraph build_mini_resnet(std::size_t channels, std::size_t height, std::size_t width, int classes,
                             int blocks_per_stage, int base_width, std::uint64_t seed) {
    require_extent(height, width, 16, "mini_resnet");
    if (classes < 2) throw std::invalid_argument("mini_resnet needs at least two classes");
    if (blocks_per_stage < 1) throw std::invalid_argument("blocks_per_stage must be positive");
    if (base_width < 1) throw std::invalid_argument("base_width must be positive");

    ArchitectureSpec spec{"mini_resnet", channels, height, width, classes, 1.0, base_width, blocks_per_stage, seed};
    LayerListBuilder b;
    int src = b.conv("m_0.conv", -1, static_cast<int>(channels), base_width, 3, 1, 1);
    src = b.bn("m_0.bn", src, base_width);
    src = b.simple("m_0.relu", LayerKind::ReLU, {src});
    b.close_segment("m_0");

    int in_c = base_width;
    for (int s = 1; s <= 4; ++s) {
        int out_c = base_width << (s - 1);
        for (int blk = 0; blk < blocks_per_stage; ++blk) {
            std::string p = "m_" + std::to_string(s) + ".block" + std::to_string(blk) + ".";
            int stride = blk == 0 ? 2 : 1;
            int block_in = src;
            int h = b.conv(p + "conv1", block_in, in_c, out_c, 3, stride, 1);
            h = b.bn(p + "bn1", h, out_c);
            h = b.simple(p + "relu1", LayerKind::ReLU, {h});
            h = b.conv(p + "conv2", h, out_c, out_c, 3, 1, 1);
            h = b.bn(p + "bn2", h, out_c);
            int shortcut = block_in;
            if (stride != 1 || in_c != out_c) {
                shortcut = b.conv(p + "shortcut_conv", block_in, in_c, out_c, 1, stride, 0);
                shortcut = b.bn(p + "shortcut_bn", shortcut, out_c);
            }
            h = b.simple(p + "add", LayerKind::ResidualAdd, {h, shortcut});
            src = b.simple(p + "relu2", LayerKind::ReLU, {h});
            in_c = out_c;
        }
        b.close_segment("m_" + std::to_string(s));
    }
    src = b.simple("m_fc.gap", LayerKind::GlobalAvgPool, {src});
    b.linear("m_fc.head", src, in_c, classes);
    b.close_segment("m_fc");
    return finish(spec, std::move(b));
}

ModelGraph build_model(const ArchitectureSpec& spec) {
    if (spec.family == "mini_vgg") {
        return build_mini_vgg(spec.channels, spec.height, spec.width, spec.classes, spec.width_multiplier,
                              spec.init_seed);
    }
    if (spec.family == "mini_resnet") {
        return build_mini_resnet(spec.channels, spec.height, spec.width, spec.classes, spec.blocks_per_stage,
                                 spec.base_width, spec.init_seed);
    }
    throw std::invalid_argument("unknown architecture family '" + spec.family + "'");
}

void init_layer(Layer& layer, std::uint64_t seed) {
    auto rng = make_stream(seed, "init/" + layer.name);
    switch (layer.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Linear: {
            auto& w = layer.params[0];
            double fan_in = static_cast<double>(w.numel() / w.dim(0));
            double std_dev = std::sqrt(2.0 / fan_in);
            for (auto& v : w.mutable_data()) v = std_dev * standard_normal(rng);
            for (std::size_t k = 1; k < layer.params.size(); ++k) {
                for (auto& v : layer.params[k].mutable_data()) v = 0.0;
            }
            break;
        }
        case LayerKind::BatchNorm2d:
            for (auto& v : layer.params[0].mutable_data()) v = 1.0;
            for (auto& v : layer.params[1].mutable_data()) v = 0.0;
            std::fill(layer.running_mean.begin(), layer.running_mean.end(), 0.0);
            std::fill(layer.running_var.begin(), layer.running_var.end(), 1.0);
            break;
        default: break;
    }
    for (auto& p : layer.params) p.zero_grad();
}

void reinit_segments(ModelGraph& model, std::span<const std::string> segment_names, std::uint64_t seed) {
    std::vector<std::size_t> layers;
    for (const auto& name : segment_names) {
        const auto& seg = model.segmentation().segments()[model.segmentation().index_of(name)];
        for (std::size_t i = seg.first; i <= seg.last; ++i) layers.push_back(i);
    }
    reinit_layers(model, layers, seed);
}

void reinit_layers(ModelGraph& model, std::span<const std::size_t> layer_indices, std::uint64_t seed) {
    auto& layers = model.mutable_layers();
    for (auto i : layer_indices) {
        if (i >= layers.size()) throw std::invalid_argument("layer index " + std::to_string(i) + " out of range");
    }
    for (auto i : layer_indices) init_layer(layers[i], seed);
}

FreezeMask freeze_except(const ModelGraph& model, std::span<const std::string> trainable_segments) {
    std::vector<bool> seg_trainable(model.segmentation().size(), false);
    for (const auto& name : trainable_segments) seg_trainable[model.segmentation().index_of(name)] = true;
    FreezeMask mask;
    for (const auto& ref : model.parameter_refs()) mask.trainable.push_back(seg_trainable[ref.segment]);
    return mask;
}

FreezeMask freeze_except_layers(const ModelGraph& model, std::span<const std::size_t> trainable_layers) {
    std::vector<bool> layer_trainable(model.layers().size(), false);
    for (auto i : trainable_layers) {
        if (i >= layer_trainable.size()) throw std::invalid_argument("layer index " + std::to_string(i) + " out of range");
        layer_trainable[i] = true;
    }
    FreezeMask mask;
    for (const auto& ref : model.parameter_refs()) mask.trainable.push_back(layer_trainable[ref.layer]);
    return mask;
}

std::vector<std::size_t> parameterized_layers(const ModelGraph& model) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < model.layers().size(); ++i) {
        if (model.layers()[i].parameterized()) out.push_back(i);
    }
    return out;
}

}  // namespace layerprobe
