#pragma once

#include <span>
#include <vector>

#include "layerprobe/tensor.hpp"

namespace layerprobe {

// Elementwise and reduction helpers. Operands of binary ops must share a shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor relu(const Tensor& x);

/// NCHW input, OIKK weight, optional bias of length O. Square kernels,
/// symmetric stride and zero padding.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

enum class NormMode { Train, Eval };

/// Running statistics owned by a batchnorm layer. Updated in place in train mode.
struct RunningStats {
    std::span<double> mean;
    std::span<double> var;
};

struct BatchNormOptions {
    NormMode mode = NormMode::Train;
    double momentum = 0.1;
    double eps = 1e-5;
    /// When false, train mode normalizes with batch statistics but leaves the running stats alone.
    bool update_running = true;
};

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats stats,
                   const BatchNormOptions& opts);

/// Floor-mode max pooling without padding; ties go to the first maximal element.
Tensor maxpool2d(const Tensor& input, int kernel, int stride);

/// N×C×H×W -> N×C.
Tensor global_avg_pool(const Tensor& input);

/// N×F input, O×F weight, optional bias of length O -> N×O.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Elementwise sum of two identically shaped activations.
Tensor residual_add(const Tensor& a, const Tensor& b);

/// Mean over the batch of −log softmax(logits)[label].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Per-row cross-entropy values without recording anything on a tape.
std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Row-wise argmax of an N×K tensor.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace layerprobe
