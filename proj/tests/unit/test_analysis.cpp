#include <doctest.h>

#include <cmath>
#include <numbers>

#include "layerprobe/analysis.hpp"
#include "layerprobe/ops.hpp"
#include "layerprobe/random.hpp"

using namespace layerprobe;

namespace {

Eigen::MatrixXd gaussian_points(Eigen::Index n, Eigen::Index d, double shift, std::uint64_t seed) {
    auto rng = make_stream(seed, "analysis-test");
    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = standard_normal(rng) + shift;
    return x;
}

double sample_std(const Eigen::VectorXd& v) {
    double mean = v.mean();
    double ss = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) ss += (v(i) - mean) * (v(i) - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("kde grid matches a brute-force kernel sum") {
    auto pts = gaussian_points(40, 2, 0.0, 1);
    pts.col(1) *= 2.5;
    Bounds b{-4.0, 4.0, -7.0, 6.0};
    const std::size_t r = 23;
    auto grid = kde_grid(pts, b, r);

    const double n = static_cast<double>(pts.rows());
    const double hx = sample_std(pts.col(0)) * std::pow(n, -1.0 / 6.0);
    const double hy = sample_std(pts.col(1)) * std::pow(n, -1.0 / 6.0);
    CHECK(grid.bandwidth_x == doctest::Approx(hx).epsilon(1e-12));
    CHECK(grid.bandwidth_y == doctest::Approx(hy).epsilon(1e-12));

    const double cw = (b.xmax - b.xmin) / r, ch = (b.ymax - b.ymin) / r;
    std::vector<double> brute(r * r, 0.0);
    double total = 0.0;
    for (std::size_t iy = 0; iy < r; ++iy) {
        for (std::size_t ix = 0; ix < r; ++ix) {
            const double cx = b.xmin + (ix + 0.5) * cw, cy = b.ymin + (iy + 0.5) * ch;
            double acc = 0.0;
            for (Eigen::Index i = 0; i < pts.rows(); ++i) {
                const double u = (cx - pts(i, 0)) / hx, v = (cy - pts(i, 1)) / hy;
                acc += std::exp(-0.5 * (u * u + v * v));
            }
            brute[iy * r + ix] = acc;
            total += acc * cw * ch;
        }
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < r * r; ++k) {
        CHECK(grid.density[k] == doctest::Approx(brute[k] / total).epsilon(1e-10));
        sum += grid.density[k] * grid.cell_area();
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("scott bandwidth rejects degenerate coordinates") {
    Eigen::MatrixXd same = Eigen::MatrixXd::Ones(10, 2);
    CHECK_THROWS(kde_grid(same, Bounds{}, 10));
}

TEST_CASE("shared bounds pad both point sets") {
    Eigen::MatrixXd a(2, 2), c(1, 2);
    a << 0.0, 0.0, 1.0, 2.0;
    c << 3.0, 1.0;
    auto b = shared_bounds(a, c);
    CHECK(b.xmin == doctest::Approx(-0.15));
    CHECK(b.xmax == doctest::Approx(3.15));
    CHECK(b.ymin == doctest::Approx(-0.1));
    CHECK(b.ymax == doctest::Approx(2.1));
    Eigen::MatrixXd flat(2, 2);
    flat << 1.0, 5.0, 1.0, 5.0;
    auto f = shared_bounds(flat, flat);
    CHECK(f.xmin == doctest::Approx(0.5));
    CHECK(f.ymax == doctest::Approx(5.5));
}

TEST_CASE("js divergence on fixed distributions") {
    std::vector<double> p{0.25, 0.25, 0.5};
    CHECK(js_divergence(p, p) == doctest::Approx(0.0).epsilon(1e-12));
    std::vector<double> left{1.0, 0.0}, right{0.0, 1.0};
    CHECK(js_divergence(left, right) == doctest::Approx(std::numbers::ln2).epsilon(1e-9));
    std::vector<double> u{0.5, 0.5}, v{0.9, 0.1};
    CHECK(js_divergence(u, v) == doctest::Approx(0.10174922507919676).epsilon(1e-9));
    CHECK(js_divergence(u, v) == doctest::Approx(js_divergence(v, u)).epsilon(1e-14));
    std::vector<double> shorter{1.0};
    CHECK_THROWS(js_divergence(u, shorter));
}

TEST_CASE("pca drops directions without variance and reconstructs full-rank data") {
    // points on the plane z = x + y
    auto base = gaussian_points(30, 2, 0.0, 2);
    Eigen::MatrixXd planar(30, 3);
    planar << base, base.col(0) + base.col(1);
    auto flat = pca_reduce(planar, 3);
    CHECK(flat.projected.cols() == 2);
    CHECK(flat.explained_ratio.sum() == doctest::Approx(1.0));

    auto full = gaussian_points(25, 4, 1.0, 3);
    auto r = pca_reduce(full, 4);
    REQUIRE(r.projected.cols() == 4);
    Eigen::MatrixXd back = (r.projected * r.components.transpose()).rowwise() + r.mean.transpose();
    CHECK((back - full).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::MatrixXd gram = r.components.transpose() * r.components;
    CHECK((gram - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-10);
    for (Eigen::Index k = 1; k < 4; ++k) CHECK(r.explained_ratio(k) <= r.explained_ratio(k - 1));
    for (Eigen::Index k = 0; k < 4; ++k) {
        Eigen::Index arg;
        r.components.col(k).cwiseAbs().maxCoeff(&arg);
        CHECK(r.components(arg, k) > 0.0);
    }
}

TEST_CASE("pca recovers a rotated principal axis") {
    auto raw = gaussian_points(200, 2, 0.0, 4);
    raw.col(0) *= 5.0;
    const double t = 0.6;
    Eigen::Matrix2d rot;
    rot << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    Eigen::MatrixXd x = raw * rot.transpose();
    auto r = pca_reduce(x, 1);
    Eigen::Vector2d axis(std::cos(t), std::sin(t));
    CHECK(std::abs(r.components.col(0).dot(axis)) > 0.995);
}

TEST_CASE("affinity calibration hits the target entropy") {
    auto x = gaussian_points(60, 5, 0.0, 5);
    std::vector<double> entropies;
    auto p = calibrate_affinities(x, 12.0, &entropies);
    for (Eigen::Index i = 0; i < p.cols(); ++i) {
        CHECK(p.col(i).sum() == doctest::Approx(1.0));
        CHECK(p(i, i) == 0.0);
        CHECK(std::abs(entropies[static_cast<std::size_t>(i)] - std::log(12.0)) < 1e-4);
        double h = 0.0;
        for (Eigen::Index j = 0; j < p.rows(); ++j)
            if (p(j, i) > 0.0) h -= p(j, i) * std::log(p(j, i));
        CHECK(h == doctest::Approx(entropies[static_cast<std::size_t>(i)]).epsilon(1e-8));
    }
}

TEST_CASE("t-sne separates two distant clusters deterministically") {
    Eigen::MatrixXd x(60, 8);
    x << gaussian_points(30, 8, 0.0, 6), gaussian_points(30, 8, 12.0, 7);
    TsneOptions o;
    o.perplexity = 10.0;
    o.iterations = 400;
    o.exaggeration_iterations = 100;
    o.seed = 3;
    auto a = tsne_embed(x, o);
    auto b = tsne_embed(x, o);
    CHECK(a.coords == b.coords);
    CHECK(a.kl < a.kl_after_exaggeration);
    CHECK(a.kl >= 0.0);

    Eigen::RowVector2d c0 = a.coords.topRows(30).colwise().mean();
    Eigen::RowVector2d c1 = a.coords.bottomRows(30).colwise().mean();
    const double gap = (c0 - c1).norm();
    double spread = 0.0;
    for (Eigen::Index i = 0; i < 30; ++i) {
        spread = std::max(spread, (a.coords.row(i) - c0).norm());
        spread = std::max(spread, (a.coords.row(30 + i) - c1).norm());
    }
    CHECK(gap > spread);

    o.seed = 4;
    CHECK_FALSE(tsne_embed(x, o).coords == a.coords);
    o.perplexity = 25.0;
    CHECK_THROWS(tsne_embed(x, o));
}

TEST_CASE("standardize gives zero mean and unit population variance") {
    auto x = gaussian_points(20, 3, 2.0, 8);
    x.col(2).setConstant(4.0);
    auto z = standardize(x);
    for (Eigen::Index j = 0; j < 2; ++j) {
        CHECK(std::abs(z.col(j).mean()) < 1e-12);
        CHECK(z.col(j).squaredNorm() / 20.0 == doctest::Approx(1.0));
    }
    CHECK(z.col(2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("harvest pairs clean and adversarial samples at shared positions") {
    SyntheticOptions so;
    so.classes = 4;
    so.samples_per_class = 3;
    so.image_size = 16;
    auto data = make_synthetic(so);
    auto m = build_mini_resnet(3, 16, 16, 4, 1, 4, 2);
    HarvestOptions h;
    h.segments = {"m_1", "m_3"};
    h.positions_per_image = 4;
    AttackConfig attack;
    attack.iterations = 2;
    h.attack = attack;
    h.seed = 9;
    h.batch_size = 5;
    auto s = harvest(m, data, h);
    REQUIRE(s.size() == data.size() * 2 * 2 * 4);
    for (std::size_t img = 0; img < data.size(); ++img) {
        const std::size_t base = img * 16;
        for (std::size_t k = 0; k < 8; ++k) {
            const auto& clean = s[base + k];
            const auto& adv = s[base + 8 + k];
            CHECK_FALSE(clean.adversarial);
            CHECK(adv.adversarial);
            CHECK(clean.image_id == img);
            CHECK(clean.segment == adv.segment);
            CHECK(clean.h == adv.h);
            CHECK(clean.w == adv.w);
            CHECK(clean.label == data.labels[img]);
        }
    }
    CHECK(sample_matrix(s, "m_1", true).rows() == static_cast<Eigen::Index>(data.size() * 4));
    CHECK(sample_matrix(s, "m_3", false).cols() == 16);

    h.positions_per_image = 20;
    CHECK_THROWS_AS(harvest(m, data, h), std::invalid_argument);
    h.cap_positions = true;
    h.attack.reset();
    auto capped = harvest(m, data, h);
    CHECK(capped.size() == data.size() * (20 + 4));
}

TEST_CASE("harvesting every position averages to the global pool of the segment output") {
    SyntheticOptions so;
    so.classes = 2;
    so.samples_per_class = 2;
    so.image_size = 16;
    auto data = make_synthetic(so);
    auto m = build_mini_resnet(3, 16, 16, 2, 1, 4, 3);
    HarvestOptions h;
    h.segments = {"m_3"};
    h.positions_per_image = 4;
    auto s = harvest(m, data, h);
    const auto& seg = m.segmentation().segments()[3];
    std::vector<std::size_t> idx{0, 1, 2, 3};
    auto outputs = m.infer_all(data.batch(idx).first);
    auto pooled = global_avg_pool(outputs[seg.last]);
    const std::size_t c = pooled.dim(1);
    for (std::size_t img = 0; img < 4; ++img) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mean = 0.0;
            for (std::size_t k = 0; k < 4; ++k) mean += s[img * 4 + k].channels[ch] / 4.0;
            CHECK(mean == doctest::Approx(pooled.at(img * c + ch)).epsilon(1e-12));
        }
    }
}

TEST_CASE("embedding two identical groups gives a near-zero divergence") {
    auto g = gaussian_points(40, 6, 0.0, 10);
    EmbedOptions o;
    o.tsne.perplexity = 8.0;
    o.tsne.iterations = 300;
    o.tsne.exaggeration_iterations = 100;
    o.pca_dims = 4;
    o.grid_resolution = 40;
    auto same = embed_groups(g, g, o);
    CHECK(same.coords.rows() == 80);
    CHECK(same.pca_dims == 4);
    CHECK(same.js < 0.05);
    auto far = embed_groups(g, gaussian_points(40, 6, 10.0, 11), o);
    CHECK(far.js > 0.5);
    CHECK(far.js <= std::numbers::ln2 + 1e-12);
}
