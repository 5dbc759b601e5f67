#include "layerprobe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "layerprobe/random.hpp"

namespace layerprobe {

namespace {

/// Index of the layer whose output represents `name` (a segment's last layer, or the layer itself).
std::size_t probe_layer(const ModelGraph& model, const std::string& name) {
    for (const auto& seg : model.segmentation().segments()) {
        if (seg.name == name) return seg.last;
    }
    const auto& layers = model.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].name == name) return i;
    }
    throw std::invalid_argument("unknown segment or layer '" + name + "'");
}

}  // namespace

std::size_t output_positions(const ModelGraph& model, const std::string& segment_or_layer) {
    const auto& shape = model.layers()[probe_layer(model, segment_or_layer)].output_shape;
    return shape.size() == 3 ? shape[1] * shape[2] : 1;
}

std::vector<ActivationSample> harvest(const ModelGraph& model, const Dataset& images, const HarvestOptions& opts) {
    if (opts.segments.empty()) throw std::invalid_argument("harvest: no segments requested");
    if (opts.positions_per_image == 0) throw std::invalid_argument("harvest: positions_per_image must be positive");
    if (opts.batch_size == 0) throw std::invalid_argument("harvest: batch size must be positive");

    std::vector<std::size_t> probes, counts;
    for (const auto& name : opts.segments) {
        probes.push_back(probe_layer(model, name));
        std::size_t extent = output_positions(model, name);
        counts.push_back(std::min(extent, opts.positions_per_image));
        if (opts.positions_per_image > extent && !opts.cap_positions) {
            throw std::invalid_argument("harvest: " + std::to_string(opts.positions_per_image) +
                                        " positions requested but '" + name + "' has only " +
                                        std::to_string(extent) + " spatial positions");
        }
    }

    std::optional<AttackConfig> attack = opts.attack;
    if (attack) {
        attack->target_mode = TargetMode::TrueLabel;
        validate(*attack);
    }
    const auto attack_seed = derive_seed(opts.seed, "harvest-attack");

    std::vector<ActivationSample> out;
    std::vector<std::size_t> idx;
    std::vector<std::size_t> cells;
    for (std::size_t first = 0; first < images.size(); first += opts.batch_size) {
        std::size_t last = std::min(images.size(), first + opts.batch_size);
        idx.resize(last - first);
        std::iota(idx.begin(), idx.end(), first);
        auto [x, y] = images.batch(idx);

        std::vector<std::vector<Tensor>> groups;
        groups.push_back(model.infer_all(x));
        if (attack) groups.push_back(model.infer_all(pgd(model, x, y, *attack, attack_seed, idx)));

        for (std::size_t b = 0; b < idx.size(); ++b) {
            for (std::size_t g = 0; g < groups.size(); ++g) {
                for (std::size_t s = 0; s < probes.size(); ++s) {
                    const Tensor& act = groups[g][probes[s]];
                    const auto data = act.data();
                    const bool spatial = act.rank() == 4;
                    const std::size_t c = act.dim(1);
                    const std::size_t h = spatial ? act.dim(2) : 1;
                    const std::size_t w = spatial ? act.dim(3) : 1;

                    cells.resize(h * w);
                    std::iota(cells.begin(), cells.end(), 0);
                    auto rng = make_stream(opts.seed, "harvest-positions/" + opts.segments[s], idx[b]);
                    for (std::size_t k = 0; k < counts[s]; ++k) {
                        auto j = k + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(cells.size() - k));
                        std::swap(cells[k], cells[j]);
                    }
                    for (std::size_t k = 0; k < counts[s]; ++k) {
                        ActivationSample sample;
                        sample.segment = opts.segments[s];
                        sample.image_id = idx[b];
                        sample.h = cells[k] / w;
                        sample.w = cells[k] % w;
                        sample.adversarial = g == 1;
                        sample.label = y[b];
                        sample.channels.resize(c);
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            sample.channels[ch] = data[(b * c + ch) * h * w + cells[k]];
                        }
                        out.push_back(std::move(sample));
                    }
                }
            }
        }
    }
    return out;
}

Eigen::MatrixXd sample_matrix(const std::vector<ActivationSample>& samples, const std::string& segment,
                              bool adversarial) {
    std::vector<const ActivationSample*> rows;
    for (const auto& s : samples) {
        if (s.segment == segment && s.adversarial == adversarial) rows.push_back(&s);
    }
    if (rows.empty()) return {};
    const std::size_t c = rows.front()->channels.size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(c));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]->channels.size() != c) throw DimensionError("sample_matrix: inconsistent channel counts");
        for (std::size_t j = 0; j < c; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i]->channels[j];
    }
    return m;
}

Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
    if (x.rows() == 0) throw std::invalid_argument("standardize: no rows");
    Eigen::RowVectorXd mean = x.colwise().mean();
    Eigen::MatrixXd out = x.rowwise() - mean;
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(x.rows()));
        if (sd > 0.0) {
            out.col(j) /= sd;
        } else {
            out.col(j).setZero();
        }
    }
    return out;
}

PcaResult pca_reduce(const Eigen::MatrixXd& x, std::size_t out_dims) {
    const auto n = static_cast<std::size_t>(x.rows());
    const auto d = static_cast<std::size_t>(x.cols());
    if (out_dims == 0 || out_dims > d) {
        throw std::invalid_argument("pca_reduce: out_dims must lie in [1, " + std::to_string(d) + "]");
    }
    if (n <= out_dims) {
        throw std::invalid_argument("pca_reduce: " + std::to_string(n) + " samples cannot support " +
                                    std::to_string(out_dims) + " components");
    }
    PcaResult r;
    r.mean = x.colwise().mean().transpose();
    Eigen::MatrixXd centered = x.rowwise() - r.mean.transpose();
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw std::runtime_error("pca_reduce: eigendecomposition failed");

    const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
    const double largest = std::max(evals(evals.size() - 1), 0.0);
    const double total = std::max(evals.cwiseMax(0.0).sum(), std::numeric_limits<double>::min());
    std::size_t k = 0;
    while (k < out_dims && evals(static_cast<Eigen::Index>(d - 1 - k)) > largest * 1e-12) ++k;
    k = std::max<std::size_t>(k, 1);

    r.components.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
    r.explained_ratio.resize(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < k; ++i) {
        auto src = static_cast<Eigen::Index>(d - 1 - i);
        Eigen::VectorXd v = solver.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        r.components.col(static_cast<Eigen::Index>(i)) = v;
        r.explained_ratio(static_cast<Eigen::Index>(i)) = std::max(evals(src), 0.0) / total;
    }
    r.projected = centered * r.components;
    return r;
}

namespace {

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
    Eigen::VectorXd norms = x.rowwise().squaredNorm();
    Eigen::MatrixXd d = -2.0 * (x * x.transpose());
    d.colwise() += norms;
    d.rowwise() += norms.transpose();
    d = d.cwiseMax(0.0);
    d.diagonal().setZero();
    return d;
}

double kl_divergence(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
    const Eigen::Index n = y.rows();
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) z += 2.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double pij = p(j, i);
            if (pij <= 0.0) continue;
            double q = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm()) / z;
            kl += 2.0 * pij * std::log(pij / std::max(q, 1e-300));
        }
    }
    return kl;
}

}  // namespace

Eigen::MatrixXd calibrate_affinities(const Eigen::MatrixXd& x, double perplexity, std::vector<double>* entropies) {
    const Eigen::Index n = x.rows();
    if (!(perplexity > 0.0)) throw std::invalid_argument("perplexity must be positive");
    const double target = std::log(perplexity);
    const Eigen::MatrixXd d = squared_distances(x);
    Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(n, n);  // column i holds p_{·|i}
    if (entropies) entropies->assign(static_cast<std::size_t>(n), 0.0);

    Eigen::VectorXd row(n), prob(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        row = d.col(i);
        double dmin = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) dmin = std::min(dmin, row(j));
        }
        double beta = 1.0;
        double lo = 0.0, hi = std::numeric_limits<double>::infinity();
        double entropy = 0.0;
        for (int it = 0; it < 200; ++it) {
            double total = 0.0, weighted = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) {
                    prob(j) = 0.0;
                    continue;
                }
                double shifted = row(j) - dmin;
                prob(j) = std::exp(-beta * shifted);
                total += prob(j);
                weighted += shifted * prob(j);
            }
            entropy = std::log(total) + beta * weighted / total;
            prob /= total;
            double diff = entropy - target;
            if (std::abs(diff) < 1e-5) break;
            if (diff > 0.0) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        cond.col(i) = prob;
        if (entropies) (*entropies)[static_cast<std::size_t>(i)] = entropy;
    }
    return cond;
}

TsneResult tsne_embed(const Eigen::MatrixXd& x, const TsneOptions& opts) {
    const Eigen::Index n = x.rows();
    if (n < 5 || n > 10000) {
        throw std::invalid_argument("tsne_embed: sample count " + std::to_string(n) + " outside [5, 10000]");
    }
    if (opts.perplexity >= static_cast<double>(n - 1) / 3.0) {
        throw std::invalid_argument("tsne_embed: perplexity " + std::to_string(opts.perplexity) +
                                    " must be below (n - 1) / 3 = " + std::to_string(static_cast<double>(n - 1) / 3.0));
    }
    if (opts.iterations < 1) throw std::invalid_argument("tsne_embed: iterations must be positive");

    TsneResult result;
    Eigen::MatrixXd p = calibrate_affinities(x, opts.perplexity, &result.entropies);
    p = (p + p.transpose().eval()) / (2.0 * static_cast<double>(n));

    auto rng = make_stream(opts.seed, "tsne-init");
    Eigen::MatrixXd y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        y(i, 0) = 1e-4 * standard_normal(rng);
        y(i, 1) = 1e-4 * standard_normal(rng);
    }
    Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
    Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);
    Eigen::MatrixXd attract(n, 2), repel(n, 2);

    bool kl_recorded = false;
    for (int it = 0; it < opts.iterations; ++it) {
        if (it == opts.exaggeration_iterations && !kl_recorded) {
            result.kl_after_exaggeration = kl_divergence(p, y);
            kl_recorded = true;
        }
        const double exag = it < opts.exaggeration_iterations ? opts.exaggeration : 1.0;
        const double momentum = it < opts.exaggeration_iterations ? opts.initial_momentum : opts.final_momentum;

        attract.setZero();
        repel.setZero();
        double z = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double yi0 = y(i, 0), yi1 = y(i, 1);
            const double* pcol = p.col(i).data();
            double ax = 0.0, ay = 0.0, rx = 0.0, ry = 0.0;
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const double dx = yi0 - y(j, 0), dy = yi1 - y(j, 1);
                const double q = 1.0 / (1.0 + dx * dx + dy * dy);
                z += 2.0 * q;
                const double a = exag * pcol[j] * q;
                const double r = q * q;
                ax += a * dx;
                ay += a * dy;
                rx += r * dx;
                ry += r * dy;
                attract(j, 0) -= a * dx;
                attract(j, 1) -= a * dy;
                repel(j, 0) -= r * dx;
                repel(j, 1) -= r * dy;
            }
            attract(i, 0) += ax;
            attract(i, 1) += ay;
            repel(i, 0) += rx;
            repel(i, 1) += ry;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int k = 0; k < 2; ++k) {
                const double g = 4.0 * (attract(i, k) - repel(i, k) / z);
                double& gain = gains(i, k);
                gain = (g > 0.0) != (update(i, k) > 0.0) ? gain + 0.2 : gain * 0.8;
                gain = std::max(gain, 0.01);
                update(i, k) = momentum * update(i, k) - opts.learning_rate * gain * g;
                y(i, k) += update(i, k);
            }
        }
        y.rowwise() -= y.colwise().mean();
    }
    result.kl = kl_divergence(p, y);
    if (!kl_recorded) result.kl_after_exaggeration = result.kl;
    result.coords = std::move(y);
    return result;
}

Bounds shared_bounds(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double pad) {
    if (a.cols() != 2 || b.cols() != 2) throw DimensionError("shared_bounds: coordinates must have two columns");
    if (a.rows() + b.rows() == 0) throw std::invalid_argument("shared_bounds: no points");
    Bounds out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
               std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto* m : {&a, &b}) {
        for (Eigen::Index i = 0; i < m->rows(); ++i) {
            out.xmin = std::min(out.xmin, (*m)(i, 0));
            out.xmax = std::max(out.xmax, (*m)(i, 0));
            out.ymin = std::min(out.ymin, (*m)(i, 1));
            out.ymax = std::max(out.ymax, (*m)(i, 1));
        }
    }
    double px = out.xmax > out.xmin ? pad * (out.xmax - out.xmin) : 0.5;
    double py = out.ymax > out.ymin ? pad * (out.ymax - out.ymin) : 0.5;
    out.xmin -= px;
    out.xmax += px;
    out.ymin -= py;
    out.ymax += py;
    return out;
}

std::pair<double, double> scott_bandwidth(const Eigen::MatrixXd& coords) {
    const Eigen::Index n = coords.rows();
    if (coords.cols() != 2) throw DimensionError("scott_bandwidth: coordinates must have two columns");
    if (n < 2) throw std::invalid_argument("kde needs at least 2 points");
    Eigen::RowVector2d mean = coords.colwise().mean();
    Eigen::MatrixXd c = coords.rowwise() - mean;
    const double factor = std::pow(static_cast<double>(n), -1.0 / 6.0);
    const double sx = std::sqrt(c.col(0).squaredNorm() / static_cast<double>(n - 1));
    const double sy = std::sqrt(c.col(1).squaredNorm() / static_cast<double>(n - 1));
    if (!(sx > 0.0) || !(sy > 0.0)) {
        throw std::invalid_argument("kde bandwidth is zero: the points do not spread in both axes");
    }
    return {sx * factor, sy * factor};
}

DensityGrid kde_grid(const Eigen::MatrixXd& coords, const Bounds& bounds, std::size_t resolution) {
    if (resolution == 0) throw std::invalid_argument("kde_grid: resolution must be positive");
    if (!(bounds.xmax > bounds.xmin) || !(bounds.ymax > bounds.ymin)) {
        throw std::invalid_argument("kde_grid: empty bounding box");
    }
    DensityGrid grid;
    grid.resolution = resolution;
    grid.bounds = bounds;
    std::tie(grid.bandwidth_x, grid.bandwidth_y) = scott_bandwidth(coords);

    const Eigen::Index n = coords.rows();
    const auto r = static_cast<Eigen::Index>(resolution);
    auto kernel = [&](Eigen::Index axis, double h, auto center) {
        Eigen::MatrixXd k(n, r);
        const double norm = 1.0 / (h * std::sqrt(2.0 * std::numbers::pi));
        for (Eigen::Index c = 0; c < r; ++c) {
            const double g = center(static_cast<std::size_t>(c));
            for (Eigen::Index i = 0; i < n; ++i) {
                const double u = (g - coords(i, axis)) / h;
                k(i, c) = norm * std::exp(-0.5 * u * u);
            }
        }
        return k;
    };
    Eigen::MatrixXd kx = kernel(0, grid.bandwidth_x, [&](std::size_t c) { return grid.x_center(c); });
    Eigen::MatrixXd ky = kernel(1, grid.bandwidth_y, [&](std::size_t c) { return grid.y_center(c); });
    Eigen::MatrixXd g = ky.transpose() * kx;  // (iy, ix)

    const double mass = g.sum() * grid.cell_area();
    if (!(mass > 0.0)) throw std::runtime_error("kde_grid: density underflows on the grid");
    grid.density.resize(resolution * resolution);
    for (Eigen::Index iy = 0; iy < r; ++iy) {
        for (Eigen::Index ix = 0; ix < r; ++ix) {
            grid.density[static_cast<std::size_t>(iy * r + ix)] = g(iy, ix) / mass;
        }
    }
    return grid;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size() || p.empty()) throw DimensionError("js_divergence: distributions differ in size");
    constexpr double eps = 1e-12;
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("js_divergence: negative mass");
        sp += p[i] + eps;
        sq += q[i] + eps;
    }
    double js = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double a = (p[i] + eps) / sp;
        const double b = (q[i] + eps) / sq;
        const double m = 0.5 * (a + b);
        js += 0.5 * a * std::log(a / m) + 0.5 * b * std::log(b / m);
    }
    return std::clamp(js, 0.0, std::numbers::ln2);
}

double divergence(const DensityGrid& a, const DensityGrid& b) {
    if (a.resolution != b.resolution || a.density.size() != b.density.size()) {
        throw DimensionError("divergence: grids differ in resolution");
    }
    if (!(a.bounds == b.bounds)) throw std::invalid_argument("divergence: grids use different bounding boxes");
    std::vector<double> pa(a.density.size()), pb(b.density.size());
    const double area = a.cell_area();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        pa[i] = a.density[i] * area;
        pb[i] = b.density[i] * area;
    }
    return js_divergence(pa, pb);
}

EmbeddingResult embed_groups(const Eigen::MatrixXd& clean, const Eigen::MatrixXd& adversarial,
                             const EmbedOptions& opts) {
    if (clean.cols() != adversarial.cols()) throw DimensionError("embed_groups: groups differ in channel count");
    if (clean.rows() < 2 || adversarial.rows() < 2) throw std::invalid_argument("embed_groups: each group needs 2 rows");
    Eigen::MatrixXd pooled(clean.rows() + adversarial.rows(), clean.cols());
    pooled << clean, adversarial;
    if (opts.standardize) pooled = standardize(pooled);

    EmbeddingResult r;
    auto dims = std::min<std::size_t>(opts.pca_dims, static_cast<std::size_t>(pooled.cols()));
    auto pca = pca_reduce(pooled, dims);
    r.pca_dims = static_cast<std::size_t>(pca.projected.cols());

    auto t = tsne_embed(pca.projected, opts.tsne);
    r.coords = t.coords;
    r.kl = t.kl;
    r.kl_after_exaggeration = t.kl_after_exaggeration;
    r.perplexity = opts.tsne.perplexity;
    r.iterations = opts.tsne.iterations;
    r.seed = opts.tsne.seed;
    r.adversarial.assign(static_cast<std::size_t>(pooled.rows()), false);
    std::fill(r.adversarial.begin() + clean.rows(), r.adversarial.end(), true);

    Eigen::MatrixXd yc = r.coords.topRows(clean.rows());
    Eigen::MatrixXd ya = r.coords.bottomRows(adversarial.rows());
    auto bounds = shared_bounds(yc, ya);
    r.clean_grid = kde_grid(yc, bounds, opts.grid_resolution);
    r.adversarial_grid = kde_grid(ya, bounds, opts.grid_resolution);
    r.js = divergence(r.clean_grid, r.adversarial_grid);
    return r;
}

}  // namespace layerprobe
