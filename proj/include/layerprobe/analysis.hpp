#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "layerprobe/attacks.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/model.hpp"

namespace layerprobe {

/// Channel vector at one spatial position of a segment (or layer) output.
struct ActivationSample {
    std::string segment;
    std::vector<double> channels;
    std::size_t image_id = 0;
    std::size_t h = 0;
    std::size_t w = 0;
    bool adversarial = false;
    int label = 0;
};

struct HarvestOptions {
    /// Segment names, or layer names for single-layer probes.
    std::vector<std::string> segments;
    std::size_t positions_per_image = 20;
    /// When set, every image is also attacked (true-label PGD) and harvested a second time.
    std::optional<AttackConfig> attack;
    std::uint64_t seed = 0;
    std::size_t batch_size = 100;
    /// When true, segments smaller than positions_per_image contribute every position instead of
    /// raising an error.
    bool cap_positions = false;
};

/// Spatial extent (H·W) of a segment or layer output; rank-1 outputs count as a single position.
std::size_t output_positions(const ModelGraph& model, const std::string& segment_or_layer);

/// Samples channel vectors at uniformly drawn positions (without replacement). An image's clean and
/// adversarial versions share positions. Output order: image, then clean before adversarial, then
/// segment, then position.
std::vector<ActivationSample> harvest(const ModelGraph& model, const Dataset& images, const HarvestOptions& opts);

/// Rows of the samples matching `segment` and `adversarial`, stacked into an n×C matrix.
Eigen::MatrixXd sample_matrix(const std::vector<ActivationSample>& samples, const std::string& segment,
                              bool adversarial);

/// Per-column z-score. Constant columns become zero.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x);

struct PcaResult {
    Eigen::MatrixXd projected;        // n × k
    Eigen::MatrixXd components;       // d × k, orthonormal columns
    Eigen::VectorXd mean;             // d
    Eigen::VectorXd explained_ratio;  // k, non-increasing
};

/// Projection onto the top principal directions. Directions with negligible variance are dropped,
/// so fewer than `out_dims` columns may be returned. Component signs are fixed so that the
/// largest-magnitude loading is positive.
PcaResult pca_reduce(const Eigen::MatrixXd& x, std::size_t out_dims);

struct TsneOptions {
    double perplexity = 30.0;
    int iterations = 1000;
    double exaggeration = 12.0;
    int exaggeration_iterations = 250;
    double learning_rate = 200.0;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::uint64_t seed = 0;
};

struct TsneResult {
    Eigen::MatrixXd coords;  // n × 2
    double kl = 0.0;
    /// KL divergence (without exaggeration) right after the exaggeration phase.
    double kl_after_exaggeration = 0.0;
    /// Achieved Shannon entropy (nats) of each conditional distribution.
    std::vector<double> entropies;
};

/// Conditional affinities with per-row bandwidths calibrated to log(perplexity) within 1e-5 nats.
/// Column i of the returned n×n matrix is p(· | i); `entropies` receives the achieved entropies.
Eigen::MatrixXd calibrate_affinities(const Eigen::MatrixXd& x, double perplexity, std::vector<double>* entropies);

/// Exact O(n²) t-SNE. Requires 5 ≤ n ≤ 10000 and perplexity < (n − 1) / 3.
TsneResult tsne_embed(const Eigen::MatrixXd& x, const TsneOptions& opts);

struct Bounds {
    double xmin = 0.0;
    double xmax = 1.0;
    double ymin = 0.0;
    double ymax = 1.0;

    bool operator==(const Bounds&) const = default;
};

/// Bounding box of both point sets, padded by `pad` of the range on every side.
Bounds shared_bounds(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double pad = 0.05);

struct DensityGrid {
    std::size_t resolution = 0;
    Bounds bounds;
    double bandwidth_x = 0.0;
    double bandwidth_y = 0.0;
    /// Row-major: density[iy * resolution + ix].
    std::vector<double> density;

    double cell_width() const { return (bounds.xmax - bounds.xmin) / static_cast<double>(resolution); }
    double cell_height() const { return (bounds.ymax - bounds.ymin) / static_cast<double>(resolution); }
    double cell_area() const { return cell_width() * cell_height(); }
    double x_center(std::size_t ix) const { return bounds.xmin + (static_cast<double>(ix) + 0.5) * cell_width(); }
    double y_center(std::size_t iy) const { return bounds.ymin + (static_cast<double>(iy) + 0.5) * cell_height(); }
    double at(std::size_t ix, std::size_t iy) const { return density[iy * resolution + ix]; }
};

/// Scott's rule per axis: sample standard deviation · n^(−1/6).
std::pair<double, double> scott_bandwidth(const Eigen::MatrixXd& coords);

/// Gaussian product-kernel density evaluated at cell centres and rescaled so that
/// Σ density · cell_area = 1.
DensityGrid kde_grid(const Eigen::MatrixXd& coords, const Bounds& bounds, std::size_t resolution = 200);

/// Jensen–Shannon divergence (nats) of two mass vectors after adding 1e-12 to every cell and renormalizing.
double js_divergence(std::span<const double> p, std::span<const double> q);
/// Same, on the cell masses of two grids that share resolution and bounds.
double divergence(const DensityGrid& a, const DensityGrid& b);

struct EmbedOptions {
    TsneOptions tsne;
    std::size_t pca_dims = 50;
    bool standardize = true;
    std::size_t grid_resolution = 200;
};

struct EmbeddingResult {
    Eigen::MatrixXd coords;          // clean rows first, then adversarial rows
    std::vector<bool> adversarial;   // per row
    double perplexity = 0.0;
    int iterations = 0;
    std::size_t pca_dims = 0;
    std::uint64_t seed = 0;
    double kl = 0.0;
    double kl_after_exaggeration = 0.0;
    DensityGrid clean_grid;
    DensityGrid adversarial_grid;
    double js = 0.0;
};

/// Pools both groups, standardizes, reduces with PCA to min(pca_dims, C), embeds with t-SNE and
/// compares the two groups' densities on a shared grid.
EmbeddingResult embed_groups(const Eigen::MatrixXd& clean, const Eigen::MatrixXd& adversarial, const EmbedOptions& opts);

}  // namespace layerprobe
