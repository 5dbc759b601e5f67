#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace layerprobe {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand extents are incompatible.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct TensorNode;

/// Backward rule of a recorded operation. Reads the output gradient and
/// accumulates into the gradients of the inputs that require them.
struct OpRecord {
    std::string name;
    std::vector<std::shared_ptr<TensorNode>> inputs;
    std::function<void(const TensorNode& out)> backward;
};

struct TensorNode {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::vector<double> grad;
    bool requires_grad = false;
    std::shared_ptr<OpRecord> creator;

    void accumulate_grad(std::span<const double> g);
    std::span<double> grad_buffer();
};

/// Dense row-major array of doubles with an optional gradient.
///
/// Copies are shallow handles: two Tensor objects may refer to the same node.
/// Use clone() for an independent copy and detach() for a gradient-free alias
/// that shares storage.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    /// Output of a recorded operation. requires_grad is set when any input requires it.
    static Tensor make_result(Shape shape, std::vector<double> data, std::shared_ptr<OpRecord> creator);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    void set_requires_grad(bool value);
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;

    /// True when every stored value (and gradient, if present) is finite.
    bool all_finite() const;
    /// Throws std::domain_error naming `context` if any value is NaN or Inf.
    void check_finite(const std::string& context) const;

    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

/// Recorded operations reachable from a root, in topological order.
class ComputationTape {
public:
    struct Entry {
        std::size_t id;
        std::shared_ptr<TensorNode> node;
        std::vector<std::size_t> input_ids;
    };

    static ComputationTape record(const Tensor& root);

    const std::vector<Entry>& entries() const { return entries_; }
    /// Seeds the root gradient with ones and runs every backward rule once, in reverse order.
    void replay_backward() const;

private:
    std::vector<Entry> entries_;
};

/// Populates gradients of all requires_grad tensors reachable from `loss`.
void backward(const Tensor& loss);

}  // namespace layerprobe
