#include <doctest.h>

#include <cmath>

#include "../common/gradcheck.hpp"
#include "layerprobe/attacks.hpp"
#include "layerprobe/dataset.hpp"

using namespace layerprobe;
using layerprobe::testing::random_tensor;

namespace {

ModelGraph small_model(std::uint64_t seed) { return build_mini_resnet(3, 16, 16, 4, 1, 4, seed); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

}  // namespace

TEST_CASE("pgd stays inside the epsilon ball and the pixel range") {
    auto m = small_model(1);
    auto rng = make_stream(1, "pgd-ball");
    auto x = random_tensor({3, 3, 16, 16}, rng, 0.0, 1.0, false);
    std::vector<int> y{0, 1, 3};
    AttackConfig cfg;
    cfg.epsilon = 0.05;
    cfg.step_size = 0.02;
    cfg.iterations = 5;
    cfg.restarts = 2;
    auto adv = pgd(m, x, y, cfg, 4);
    CHECK(max_abs_diff(adv, x) <= cfg.epsilon + 1e-9);
    for (double v : adv.data()) CHECK((v >= 0.0 && v <= 1.0));
    CHECK_FALSE(adv.requires_grad());
}

TEST_CASE("zero epsilon returns the input unchanged") {
    auto m = small_model(2);
    auto rng = make_stream(2, "pgd-zero");
    auto x = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0, false);
    std::vector<int> y{1, 2};
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    auto adv = pgd(m, x, y, cfg, 1);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(adv.at(i) == x.at(i));
    auto f = fgsm(m, x, y, 0.0, TargetMode::TrueLabel);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(f.at(i) == x.at(i));
}

TEST_CASE("single-step pgd without random start equals fgsm bit for bit") {
    auto m = small_model(3);
    auto rng = make_stream(3, "pgd-fgsm");
    auto x = random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0, false);
    std::vector<int> y{0, 1, 2, 3};
    for (auto target : {TargetMode::TrueLabel, TargetMode::Prediction}) {
        AttackConfig cfg;
        cfg.epsilon = 8.0 / 255.0;
        cfg.step_size = cfg.epsilon;
        cfg.iterations = 1;
        cfg.random_start = false;
        cfg.target_mode = target;
        auto a = pgd(m, x, y, cfg, 9);
        auto b = fgsm(m, x, y, cfg.epsilon, target);
        for (std::size_t i = 0; i < x.numel(); ++i) CHECK(a.at(i) == b.at(i));
    }
}

TEST_CASE("fgsm moves every pixel with a non-zero gradient by epsilon before clamping") {
    auto m = small_model(4);
    auto x = Tensor::full({1, 3, 16, 16}, 0.5);
    std::vector<int> y{2};
    auto adv = fgsm(m, x, y, 0.01, TargetMode::TrueLabel);
    for (double v : adv.data()) CHECK((std::abs(v - 0.5) == doctest::Approx(0.01) || v == 0.5));
}

TEST_CASE("more iterations and restarts never lower the attained loss") {
    auto m = small_model(5);
    auto rng = make_stream(5, "pgd-monotone");
    auto x = random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0, false);
    std::vector<int> y{0, 1, 2, 3};
    AttackConfig one;
    one.epsilon = 0.03;
    one.step_size = 0.01;
    one.iterations = 3;
    one.target_mode = TargetMode::TrueLabel;
    AttackConfig more = one;
    more.iterations = 6;
    AttackConfig restarts = one;
    restarts.restarts = 3;
    auto loss = [&](const Tensor& a) { return per_sample_cross_entropy(m.infer(a), y); };
    auto l1 = loss(pgd(m, x, y, one, 7));
    auto l2 = loss(pgd(m, x, y, more, 7));
    auto l3 = loss(pgd(m, x, y, restarts, 7));
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(l2[i] >= l1[i]);
        CHECK(l3[i] >= l1[i]);
    }
}

TEST_CASE("random starts are keyed by sample id, not by batch position") {
    auto m = small_model(6);
    auto rng = make_stream(6, "pgd-ids");
    auto x = random_tensor({4, 3, 16, 16}, rng, 0.0, 1.0, false);
    std::vector<int> y{0, 1, 2, 3};
    AttackConfig cfg;
    cfg.iterations = 2;
    cfg.target_mode = TargetMode::TrueLabel;
    std::vector<std::size_t> ids{10, 11, 12, 13};
    auto whole = pgd(m, x, y, cfg, 3, ids);

    const std::size_t per = x.numel() / 4;
    auto rows = [&](std::size_t a, std::size_t b) {
        std::vector<double> v(x.data().begin() + static_cast<long>(a * per), x.data().begin() + static_cast<long>(b * per));
        return Tensor::from_data({b - a, 3, 16, 16}, v);
    };
    std::vector<int> y2(y.begin() + 2, y.end());
    std::vector<std::size_t> ids2(ids.begin() + 2, ids.end());
    auto part = pgd(m, rows(2, 4), y2, cfg, 3, ids2);
    for (std::size_t i = 0; i < 2 * per; ++i) CHECK(part.at(i) == whole.at(2 * per + i));
}

TEST_CASE("attack configuration is validated") {
    AttackConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    bad = {};
    bad.epsilon = -0.1;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    bad = {};
    bad.restarts = 0;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    CHECK(parse_target_mode("prediction") == TargetMode::Prediction);
    CHECK_THROWS(parse_target_mode("label"));
}

TEST_CASE("evaluation with zero epsilon reports equal clean and robust accuracy") {
    SyntheticOptions o;
    o.classes = 4;
    o.samples_per_class = 5;
    o.image_size = 16;
    auto data = make_synthetic(o);
    auto m = small_model(8);
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    auto r = evaluate(m, data, cfg, 1, 7);
    CHECK(r.clean_acc == r.robust_acc);
    CHECK(r.samples == 20);
    CHECK(r.per_class_clean_acc.size() == 4);
    AttackConfig real;
    auto r2 = evaluate(m, data, real, 1, 7);
    auto r3 = evaluate(m, data, real, 1, 20);
    CHECK(r2.robust_acc == r3.robust_acc);
    Dataset empty;
    CHECK_THROWS(evaluate(m, empty, real, 1));
}
