#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "layerprobe/tensor.hpp"

namespace layerprobe {

/// Raised for malformed dataset files; the message carries byte offsets or counts.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// N images of shape (C, H, W) with values in [0, 1] and integer labels.
struct Dataset {
    Shape image_shape;
    std::vector<double> images;
    std::vector<int> labels;
    std::string split;
    std::vector<std::string> class_names;

    std::size_t size() const { return labels.size(); }
    int classes() const { return static_cast<int>(class_names.size()); }
    std::size_t image_numel() const { return shape_numel(image_shape); }

    /// Gathers the listed samples into an N×C×H×W tensor plus labels.
    std::pair<Tensor, std::vector<int>> batch(std::span<const std::size_t> indices) const;
    /// Samples [first, first + count), clipped to the dataset size.
    Dataset slice(std::size_t first, std::size_t count) const;
    /// Throws unless labels lie in [0, classes) and every pixel lies in [0, 1].
    void validate() const;
};

const std::vector<std::string>& cifar10_class_names();

/// Parses one CIFAR-10 binary batch: records of 1 label byte + 3×1024 channel-planar pixel bytes.
Dataset load_cifar10_file(const std::filesystem::path& file, const std::string& split);

/// Loads the standard split from a directory holding data_batch_{1..5}.bin / test_batch.bin.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split);

/// Parses an IDX image file (magic 0x00000803) and its label file (magic 0x00000801).
Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       const std::string& split);

/// Loads train-images-idx3-ubyte / train-labels-idx1-ubyte (or t10k-*) from a directory.
Dataset load_mnist(const std::filesystem::path& dir, const std::string& split);

struct SyntheticOptions {
    int classes = 10;
    int samples_per_class = 100;
    int image_size = 16;
    int channels = 3;
    std::uint64_t seed = 0;
    std::string split = "train";

    double blob_strength = 0.9;
    double color_jitter = 0.10;
    double texture_amplitude = 0.06;
    double noise = 0.03;
    int clutter_blobs = 1;
};

/// Deterministic class-conditional images: a large blob in a jittered class colour at a
/// random position, a faint class-specific stripe texture with random phase, smaller
/// clutter blobs in arbitrary class colours, and pixel noise.
Dataset make_synthetic(const SyntheticOptions& opts);

/// Accuracy of a nearest-class-mean classifier fit on `train` and scored on `test`.
double nearest_centroid_accuracy(const Dataset& train, const Dataset& test);

}  // namespace layerprobe
