#include "layerprobe/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace layerprobe {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<TensorNode>;

std::shared_ptr<OpRecord> make_record(std::string name, std::vector<NodePtr> inputs) {
    auto rec = std::make_shared<OpRecord>();
    rec->name = std::move(name);
    rec->inputs = std::move(inputs);
    return rec;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": operand shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
    }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(t.shape()));
    }
}

template <class F>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, const char* name, F fwd,
                          std::function<void(const TensorNode&, TensorNode&, TensorNode&)> bwd) {
    require_same_shape(a, b, name);
    auto da = a.data();
    auto db = b.data();
    std::vector<double> out(da.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(da[i], db[i]);
    auto rec = make_record(name, {a.node(), b.node()});
    TensorNode* pa = a.node().get();
    TensorNode* pb = b.node().get();
    rec->backward = [pa, pb, bwd = std::move(bwd)](const TensorNode& o) { bwd(o, *pa, *pb); };
    return Tensor::make_result(a.shape(), std::move(out), std::move(rec));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "add", [](double x, double y) { return x + y; },
        [](const TensorNode& o, TensorNode& x, TensorNode& y) {
            if (x.requires_grad) x.accumulate_grad(o.grad);
            if (y.requires_grad) y.accumulate_grad(o.grad);
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](const TensorNode& o, TensorNode& x, TensorNode& y) {
            if (x.requires_grad) x.accumulate_grad(o.grad);
            if (y.requires_grad) {
                std::vector<double> g(o.grad.size());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = -o.grad[i];
                y.accumulate_grad(g);
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return elementwise_binary(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](const TensorNode& o, TensorNode& x, TensorNode& y) {
            const auto& xd = *x.data;
            const auto& yd = *y.data;
            if (x.requires_grad) {
                std::vector<double> g(o.grad.size());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * yd[i];
                x.accumulate_grad(g);
            }
            if (y.requires_grad) {
                std::vector<double> g(o.grad.size());
                for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * xd[i];
                y.accumulate_grad(g);
            }
        });
}

Tensor scale(const Tensor& a, double factor) {
    auto d = a.data();
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] * factor;
    auto rec = make_record("scale", {a.node()});
    TensorNode* pa = a.node().get();
    rec->backward = [pa, factor](const TensorNode& o) {
        std::vector<double> g(o.grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = o.grad[i] * factor;
        pa->accumulate_grad(g);
    };
    return Tensor::make_result(a.shape(), std::move(out), std::move(rec));
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto rec = make_record("sum", {a.node()});
    TensorNode* pa = a.node().get();
    rec->backward = [pa](const TensorNode& o) {
        std::vector<double> g(pa->data->size(), o.grad[0]);
        pa->accumulate_grad(g);
    };
    return Tensor::make_result({1}, {s}, std::move(rec));
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor relu(const Tensor& x) {
    auto d = x.data();
    std::vector<double> out(d.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] < 0.0 ? 0.0 : d[i];  // NaN passes through
    auto rec = make_record("relu", {x.node()});
    TensorNode* px = x.node().get();
    rec->backward = [px](const TensorNode& o) {
        const auto& xd = *px->data;
        auto g = px->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (xd[i] > 0.0) g[i] += o.grad[i];
        }
    };
    return Tensor::make_result(x.shape(), std::move(out), std::move(rec));
}

// ---------------------------------------------------------------------------
// conv2d via im2col and a single GEMM over the whole batch

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, o, k, ho, wo;
    int stride, pad;
    std::size_t rows() const { return c * k * k; }
    std::size_t cols() const { return n * ho * wo; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
    const std::size_t plane = g.ho * g.wo;
    const std::size_t ncols = g.cols();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                double* row = col + ((ci * g.k + ki) * g.k + kj) * ncols;
                for (std::size_t ni = 0; ni < g.n; ++ni) {
                    const double* src = x + (ni * g.c + ci) * g.h * g.w;
                    double* dst = row + ni * plane;
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(kj);
                            bool inside = ih >= 0 && iw >= 0 && ih < static_cast<long>(g.h) &&
                                          iw < static_cast<long>(g.w);
                            dst[oh * g.wo + ow] = inside ? src[ih * g.w + iw] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* dx) {
    const std::size_t plane = g.ho * g.wo;
    const std::size_t ncols = g.cols();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ki = 0; ki < g.k; ++ki) {
            for (std::size_t kj = 0; kj < g.k; ++kj) {
                const double* row = col + ((ci * g.k + ki) * g.k + kj) * ncols;
                for (std::size_t ni = 0; ni < g.n; ++ni) {
                    double* dst = dx + (ni * g.c + ci) * g.h * g.w;
                    const double* src = row + ni * plane;
                    for (std::size_t oh = 0; oh < g.ho; ++oh) {
                        long ih = static_cast<long>(oh) * g.stride - g.pad + static_cast<long>(ki);
                        if (ih < 0 || ih >= static_cast<long>(g.h)) continue;
                        for (std::size_t ow = 0; ow < g.wo; ++ow) {
                            long iw = static_cast<long>(ow) * g.stride - g.pad + static_cast<long>(kj);
                            if (iw < 0 || iw >= static_cast<long>(g.w)) continue;
                            dst[ih * g.w + iw] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(weight, 4, "conv2d", "weight");
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be positive");
    if (padding < 0) throw std::invalid_argument("conv2d: padding must be non-negative");
    if (weight.dim(2) != weight.dim(3)) {
        throw DimensionError("conv2d: kernel must be square, got " + shape_str(weight.shape()));
    }
    if (input.dim(1) != weight.dim(1)) {
        throw DimensionError("conv2d: input has " + std::to_string(input.dim(1)) +
                             " channels but weight expects " + std::to_string(weight.dim(1)));
    }
    ConvGeometry g{};
    g.n = input.dim(0);
    g.c = input.dim(1);
    g.h = input.dim(2);
    g.w = input.dim(3);
    g.o = weight.dim(0);
    g.k = weight.dim(2);
    g.stride = stride;
    g.pad = padding;
    long span_h = static_cast<long>(g.h) + 2L * padding - static_cast<long>(g.k);
    long span_w = static_cast<long>(g.w) + 2L * padding - static_cast<long>(g.k);
    if (span_h < 0 || span_w < 0) {
        throw DimensionError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " +
                             shape_str(input.shape()));
    }
    g.ho = static_cast<std::size_t>(span_h / stride + 1);
    g.wo = static_cast<std::size_t>(span_w / stride + 1);
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.o)) {
        throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(g.o) + " output channels");
    }

    auto col = std::make_shared<std::vector<double>>(g.rows() * g.cols());
    im2col(input.data().data(), g, col->data());

    RowMat prod = ConstMapMat(weight.data().data(), g.o, g.rows()) *
                  ConstMapMat(col->data(), g.rows(), g.cols());

    const std::size_t plane = g.ho * g.wo;
    std::vector<double> out(g.n * g.o * plane);
    auto bd = bias.defined() ? bias.data() : std::span<const double>{};
    for (std::size_t ni = 0; ni < g.n; ++ni) {
        for (std::size_t oi = 0; oi < g.o; ++oi) {
            const double* src = prod.data() + oi * g.cols() + ni * plane;
            double* dst = out.data() + (ni * g.o + oi) * plane;
            double b = bias.defined() ? bd[oi] : 0.0;
            for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + b;
        }
    }

    std::vector<NodePtr> inputs{input.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    auto rec = make_record("conv2d", inputs);
    TensorNode* px = input.node().get();
    TensorNode* pw = weight.node().get();
    TensorNode* pb = bias.defined() ? bias.node().get() : nullptr;
    rec->backward = [px, pw, pb, g, col](const TensorNode& o) {
        const std::size_t plane = g.ho * g.wo;
        RowMat dy(g.o, g.cols());
        for (std::size_t ni = 0; ni < g.n; ++ni) {
            for (std::size_t oi = 0; oi < g.o; ++oi) {
                const double* src = o.grad.data() + (ni * g.o + oi) * plane;
                std::copy(src, src + plane, dy.data() + oi * g.cols() + ni * plane);
            }
        }
        if (pw->requires_grad) {
            RowMat dw = dy * ConstMapMat(col->data(), g.rows(), g.cols()).transpose();
            pw->accumulate_grad(std::span<const double>(dw.data(), static_cast<std::size_t>(dw.size())));
        }
        if (pb && pb->requires_grad) {
            std::vector<double> db(g.o);
            for (std::size_t oi = 0; oi < g.o; ++oi) db[oi] = dy.row(static_cast<Eigen::Index>(oi)).sum();
            pb->accumulate_grad(db);
        }
        if (px->requires_grad) {
            RowMat dcol = ConstMapMat(pw->data->data(), g.o, g.rows()).transpose() * dy;
            auto dx = px->grad_buffer();
            col2im_add(dcol.data(), g, dx.data());
        }
    };
    return Tensor::make_result({g.n, g.o, g.ho, g.wo}, std::move(out), std::move(rec));
}

// ---------------------------------------------------------------------------

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats stats,
                   const BatchNormOptions& opts) {
    require_rank(input, 4, "batchnorm2d", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (gamma.numel() != c || beta.numel() != c || stats.mean.size() != c || stats.var.size() != c) {
        throw DimensionError("batchnorm2d: affine/running parameters do not match " + std::to_string(c) +
                             " channels");
    }
    const bool train = opts.mode == NormMode::Train;
    if (train && n < 2) throw std::invalid_argument("batchnorm2d: train mode needs batch size >= 2");

    const auto x = input.data();
    const auto gd = gamma.data();
    const auto bd = beta.data();
    const double m = static_cast<double>(n * plane);

    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    std::vector<double> out(x.size());

    for (std::size_t ci = 0; ci < c; ++ci) {
        double mu, var;
        if (train) {
            double s = 0.0;
            for (std::size_t ni = 0; ni < n; ++ni) {
                const double* p = x.data() + (ni * c + ci) * plane;
                for (std::size_t k = 0; k < plane; ++k) s += p[k];
            }
            mu = s / m;
            double ss = 0.0;
            for (std::size_t ni = 0; ni < n; ++ni) {
                const double* p = x.data() + (ni * c + ci) * plane;
                for (std::size_t k = 0; k < plane; ++k) ss += (p[k] - mu) * (p[k] - mu);
            }
            var = ss / m;
            if (opts.update_running) {
                stats.mean[ci] = (1.0 - opts.momentum) * stats.mean[ci] + opts.momentum * mu;
                stats.var[ci] = (1.0 - opts.momentum) * stats.var[ci] + opts.momentum * ss / (m - 1.0);
            }
        } else {
            mu = stats.mean[ci];
            var = stats.var[ci];
        }
        double is = 1.0 / std::sqrt(var + opts.eps);
        (*inv_std)[ci] = is;
        for (std::size_t ni = 0; ni < n; ++ni) {
            std::size_t off = (ni * c + ci) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                double h = (x[off + k] - mu) * is;
                (*xhat)[off + k] = h;
                out[off + k] = gd[ci] * h + bd[ci];
            }
        }
    }

    auto rec = make_record("batchnorm2d", {input.node(), gamma.node(), beta.node()});
    TensorNode* px = input.node().get();
    TensorNode* pg = gamma.node().get();
    TensorNode* pb = beta.node().get();
    rec->backward = [px, pg, pb, xhat, inv_std, n, c, plane, m, train](const TensorNode& o) {
        const auto& dy = o.grad;
        std::vector<double> dgamma(c, 0.0), dbeta(c, 0.0);
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ni = 0; ni < n; ++ni) {
                std::size_t off = (ni * c + ci) * plane;
                for (std::size_t k = 0; k < plane; ++k) {
                    dbeta[ci] += dy[off + k];
                    dgamma[ci] += dy[off + k] * (*xhat)[off + k];
                }
            }
        }
        if (px->requires_grad) {
            const auto& gd = *pg->data;
            auto dx = px->grad_buffer();
            for (std::size_t ci = 0; ci < c; ++ci) {
                double scale_c = gd[ci] * (*inv_std)[ci];
                for (std::size_t ni = 0; ni < n; ++ni) {
                    std::size_t off = (ni * c + ci) * plane;
                    for (std::size_t k = 0; k < plane; ++k) {
                        if (train) {
                            dx[off + k] += scale_c / m *
                                           (m * dy[off + k] - dbeta[ci] - (*xhat)[off + k] * dgamma[ci]);
                        } else {
                            dx[off + k] += scale_c * dy[off + k];
                        }
                    }
                }
            }
        }
        if (pg->requires_grad) pg->accumulate_grad(dgamma);
        if (pb->requires_grad) pb->accumulate_grad(dbeta);
    };
    return Tensor::make_result(input.shape(), std::move(out), std::move(rec));
}

// ---------------------------------------------------------------------------

Tensor maxpool2d(const Tensor& input, int kernel, int stride) {
    require_rank(input, 4, "maxpool2d", "input");
    if (kernel < 1 || stride < 1) throw std::invalid_argument("maxpool2d: kernel and stride must be positive");
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const std::size_t k = static_cast<std::size_t>(kernel), s = static_cast<std::size_t>(stride);
    if (h < k || w < k) {
        throw DimensionError("maxpool2d: window " + std::to_string(k) + " exceeds input " + shape_str(input.shape()));
    }
    const std::size_t ho = (h - k) / s + 1, wo = (w - k) / s + 1;
    const auto x = input.data();
    std::vector<double> out(n * c * ho * wo);
    auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t in_off = plane * h * w;
        for (std::size_t oh = 0; oh < ho; ++oh) {
            for (std::size_t ow = 0; ow < wo; ++ow) {
                std::size_t best = in_off + oh * s * w + ow * s;
                for (std::size_t i = 0; i < k; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                        std::size_t idx = in_off + (oh * s + i) * w + (ow * s + j);
                        if (x[idx] > x[best]) best = idx;
                    }
                }
                std::size_t o = (plane * ho + oh) * wo + ow;
                out[o] = x[best];
                (*arg)[o] = best;
            }
        }
    }
    auto rec = make_record("maxpool2d", {input.node()});
    TensorNode* px = input.node().get();
    rec->backward = [px, arg](const TensorNode& o) {
        auto dx = px->grad_buffer();
        for (std::size_t i = 0; i < arg->size(); ++i) dx[(*arg)[i]] += o.grad[i];
    };
    return Tensor::make_result({n, c, ho, wo}, std::move(out), std::move(rec));
}

Tensor global_avg_pool(const Tensor& input) {
    require_rank(input, 4, "global_avg_pool", "input");
    const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
    const auto x = input.data();
    std::vector<double> out(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < plane; ++k) s += x[i * plane + k];
        out[i] = s / static_cast<double>(plane);
    }
    auto rec = make_record("global_avg_pool", {input.node()});
    TensorNode* px = input.node().get();
    rec->backward = [px, plane](const TensorNode& o) {
        auto dx = px->grad_buffer();
        const double inv = 1.0 / static_cast<double>(plane);
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            for (std::size_t k = 0; k < plane; ++k) dx[i * plane + k] += o.grad[i] * inv;
        }
    };
    return Tensor::make_result({n, c}, std::move(out), std::move(rec));
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "linear", "input");
    require_rank(weight, 2, "linear", "weight");
    const std::size_t n = input.dim(0), f = input.dim(1), o = weight.dim(0);
    if (weight.dim(1) != f) {
        throw DimensionError("linear: input has " + std::to_string(f) + " features but weight expects " +
                             std::to_string(weight.dim(1)));
    }
    if (bias.defined() && bias.numel() != o) {
        throw DimensionError("linear: bias shape " + shape_str(bias.shape()) + " does not match " +
                             std::to_string(o) + " outputs");
    }
    RowMat y = ConstMapMat(input.data().data(), n, f) * ConstMapMat(weight.data().data(), o, f).transpose();
    if (bias.defined()) {
        auto bd = bias.data();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < o; ++j) y(i, j) += bd[j];
        }
    }
    std::vector<double> out(y.data(), y.data() + y.size());
    std::vector<NodePtr> inputs{input.node(), weight.node()};
    if (bias.defined()) inputs.push_back(bias.node());
    auto rec = make_record("linear", inputs);
    TensorNode* px = input.node().get();
    TensorNode* pw = weight.node().get();
    TensorNode* pb = bias.defined() ? bias.node().get() : nullptr;
    rec->backward = [px, pw, pb, n, f, o](const TensorNode& out_node) {
        ConstMapMat dy(out_node.grad.data(), n, o);
        if (px->requires_grad) {
            RowMat dx = dy * ConstMapMat(pw->data->data(), o, f);
            px->accumulate_grad(std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size())));
        }
        if (pw->requires_grad) {
            RowMat dw = dy.transpose() * ConstMapMat(px->data->data(), n, f);
            pw->accumulate_grad(std::span<const double>(dw.data(), static_cast<std::size_t>(dw.size())));
        }
        if (pb && pb->requires_grad) {
            std::vector<double> db(o, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < o; ++j) db[j] += dy(i, j);
            }
            pb->accumulate_grad(db);
        }
    };
    return Tensor::make_result({n, o}, std::move(out), std::move(rec));
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "residual_add");
    return add(a, b);
}

// ---------------------------------------------------------------------------

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    if (labels.size() != logits.dim(0)) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(logits.dim(0)) + " rows");
    }
    const int k = static_cast<int>(logits.dim(1));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k) {
            throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at row " +
                                    std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
        }
    }
}

// Stable log-softmax of one row into `out`; returns nothing, out has k entries.
void log_softmax_row(const double* row, std::size_t k, double* out) {
    double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[j] = row[j] - lse;
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    const auto z = logits.data();
    auto probs = std::make_shared<std::vector<double>>(n * k);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double* lp = probs->data() + i * k;
        log_softmax_row(z.data() + i * k, k, lp);
        total -= lp[labels[i]];
        for (std::size_t j = 0; j < k; ++j) lp[j] = std::exp(lp[j]);
    }
    auto rec = make_record("softmax_cross_entropy", {logits.node()});
    TensorNode* pz = logits.node().get();
    std::vector<int> y(labels.begin(), labels.end());
    rec->backward = [pz, probs, y = std::move(y), n, k](const TensorNode& o) {
        const double g = o.grad[0] / static_cast<double>(n);
        auto dz = pz->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                double t = (static_cast<int>(j) == y[i]) ? 1.0 : 0.0;
                dz[i * k + j] += g * ((*probs)[i * k + j] - t);
            }
        }
    };
    return Tensor::make_result({1}, {total / static_cast<double>(n)}, std::move(rec));
}

std::vector<double> per_sample_cross_entropy(const Tensor& logits, std::span<const int> labels) {
    check_labels(logits, labels);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<double> lp(k), out(n);
    for (std::size_t i = 0; i < n; ++i) {
        log_softmax_row(logits.data().data() + i * k, k, lp.data());
        out[i] = -lp[labels[i]];
    }
    return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
    require_rank(logits, 2, "argmax_rows", "logits");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    auto z = logits.data();
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = z.data() + i * k;
        out[i] = static_cast<int>(std::max_element(row, row + k) - row);
    }
    return out;
}

}  // namespace layerprobe
