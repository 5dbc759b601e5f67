#include "layerprobe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace layerprobe {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

void TensorNode::accumulate_grad(std::span<const double> g) {
    if (g.size() != data->size()) {
        throw DimensionError("gradient of size " + std::to_string(g.size()) +
                             " does not match tensor of size " + std::to_string(data->size()));
    }
    if (grad.empty()) {
        grad.assign(g.begin(), g.end());
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

std::span<double> TensorNode::grad_buffer() {
    if (grad.empty()) grad.assign(data->size(), 0.0);
    return grad;
}

namespace {

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> data, bool requires_grad) {
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != data.size()) {
        throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(shape_numel(shape)) +
                             " values, data has " + std::to_string(data.size()));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->data = std::make_shared<std::vector<double>>(std::move(data));
    node->requires_grad = requires_grad;
    return node;
}

const TensorNode& checked(const std::shared_ptr<TensorNode>& node) {
    if (!node) throw std::logic_error("use of an undefined tensor");
    return *node;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(make_node({1}, {value}, requires_grad));
}

Tensor Tensor::make_result(Shape shape, std::vector<double> data, std::shared_ptr<OpRecord> creator) {
    bool needs = false;
    for (const auto& in : creator->inputs) needs = needs || in->requires_grad;
    auto node = make_node(std::move(shape), std::move(data), needs);
    if (needs) node->creator = std::move(creator);
    return Tensor(std::move(node));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(node_).data->size(); }

std::span<const double> Tensor::data() const { return *checked(node_).data; }

std::span<double> Tensor::mutable_data() {
    checked(node_);
    return *node_->data;
}

double Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return data()[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool value) {
    checked(node_);
    node_->requires_grad = value;
}

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const double> Tensor::grad() const { return checked(node_).grad; }

void Tensor::zero_grad() {
    checked(node_);
    node_->grad.clear();
}

Tensor Tensor::detach() const {
    const auto& src = checked(node_);
    auto node = std::make_shared<TensorNode>();
    node->shape = src.shape;
    node->data = src.data;
    return Tensor(std::move(node));
}

Tensor Tensor::clone() const {
    const auto& src = checked(node_);
    auto node = std::make_shared<TensorNode>();
    node->shape = src.shape;
    node->data = std::make_shared<std::vector<double>>(*src.data);
    node->grad = src.grad;
    node->requires_grad = src.requires_grad;
    return Tensor(std::move(node));
}

bool Tensor::all_finite() const {
    const auto& n = checked(node_);
    auto finite = [](double v) { return std::isfinite(v); };
    return std::all_of(n.data->begin(), n.data->end(), finite) &&
           std::all_of(n.grad.begin(), n.grad.end(), finite);
}

void Tensor::check_finite(const std::string& context) const {
    if (!all_finite()) throw std::domain_error("non-finite value in " + context);
}

ComputationTape ComputationTape::record(const Tensor& root) {
    ComputationTape tape;
    if (!root.defined()) throw std::logic_error("cannot record a tape from an undefined tensor");

    // Iterative post-order DFS; a node is emitted after all of its inputs.
    std::unordered_map<const TensorNode*, std::size_t> ids;
    struct Frame {
        std::shared_ptr<TensorNode> node;
        std::size_t next_input;
    };
    std::unordered_map<const TensorNode*, bool> on_stack;
    std::vector<Frame> stack{{root.node(), 0}};
    on_stack[root.node().get()] = true;
    while (!stack.empty()) {
        auto& frame = stack.back();
        const auto& creator = frame.node->creator;
        std::size_t n_inputs = creator ? creator->inputs.size() : 0;
        if (frame.next_input < n_inputs) {
            auto child = creator->inputs[frame.next_input++];
            if (!child->requires_grad || ids.count(child.get()) || on_stack[child.get()]) continue;
            on_stack[child.get()] = true;
            stack.push_back({std::move(child), 0});
            continue;
        }
        Entry entry;
        entry.id = tape.entries_.size();
        entry.node = frame.node;
        if (creator) {
            for (const auto& in : creator->inputs) {
                auto it = ids.find(in.get());
                if (it != ids.end()) entry.input_ids.push_back(it->second);
            }
        }
        ids[frame.node.get()] = entry.id;
        on_stack[frame.node.get()] = false;
        tape.entries_.push_back(std::move(entry));
        stack.pop_back();
    }
    return tape;
}

void ComputationTape::replay_backward() const {
    if (entries_.empty()) return;
    auto& root = *entries_.back().node;
    std::vector<double> ones(root.data->size(), 1.0);
    root.accumulate_grad(ones);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        const auto& node = *it->node;
        if (node.creator && !node.grad.empty()) node.creator->backward(node);
    }
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw std::logic_error("backward on an undefined tensor");
    if (loss.numel() != 1) {
        throw DimensionError("backward requires a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any tensor requiring grad");
    ComputationTape::record(loss).replay_backward();
}

}  // namespace layerprobe
