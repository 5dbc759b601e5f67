#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "layerprobe/training.hpp"

using namespace layerprobe;

namespace {

Dataset tiny_data(int per_class = 25, std::uint64_t seed = 3) {
    SyntheticOptions o;
    o.classes = 4;
    o.samples_per_class = per_class;
    o.image_size = 16;
    o.seed = seed;
    return make_synthetic(o);
}

ModelGraph tiny_model(std::uint64_t seed = 1) { return build_mini_resnet(3, 16, 16, 4, 1, 4, seed); }

TrainConfig tiny_config(TrainMode mode, int epochs) {
    TrainConfig c;
    c.mode = mode;
    c.epochs = epochs;
    c.batch_size = 50;
    c.seed = 12;
    c.schedule.kind = ScheduleConfig::Kind::Constant;
    c.optimizer.lr = 3e-3;
    if (mode == TrainMode::FastAdversarial) {
        c.attack.iterations = 1;
        c.attack.step_size = 1.25 * c.attack.epsilon;
    } else {
        c.attack.iterations = 3;
    }
    return c;
}

}  // namespace

TEST_CASE("first adam step with unit gradient moves by the learning rate") {
    std::vector<double> p{0.0};
    std::vector<double> g{1.0};
    AdamState s;
    adam_step(p, g, s, 0.1, 0.0);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-7));
    CHECK(s.step == 1);
}

TEST_CASE("adam leaves parameters alone without gradient or decay") {
    std::vector<double> p{0.3, -1.2};
    std::vector<double> g{0.0, 0.0};
    AdamState s;
    for (int i = 0; i < 5; ++i) adam_step(p, g, s, 0.1, 0.0);
    CHECK(p[0] == 0.3);
    CHECK(p[1] == -1.2);
}

TEST_CASE("identical adam runs produce identical trajectories") {
    std::vector<double> a{0.5, 1.0}, b{0.5, 1.0};
    AdamState sa, sb;
    for (int i = 0; i < 20; ++i) {
        std::vector<double> g{std::sin(i * 0.7), std::cos(i * 1.3)};
        adam_step(a, g, sa, 0.01, 1e-4);
        adam_step(b, g, sb, 0.01, 1e-4);
    }
    CHECK(a == b);
}

TEST_CASE("coupled and decoupled adam decay differ only in where the decay enters") {
    std::vector<double> coupled{1.0}, decoupled{1.0};
    std::vector<double> g{0.0};
    AdamState s1, s2;
    adam_step(coupled, g, s1, 0.1, 0.5, {}, true);
    adam_step(decoupled, g, s2, 0.1, 0.5, {}, false);
    // coupled: effective gradient 0.5 gives a unit Adam step of lr; decoupled: p·(1 − lr·λ) only.
    CHECK(coupled[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(decoupled[0] == doctest::Approx(0.95));
}

TEST_CASE("sgd momentum without momentum or decay is plain gradient descent") {
    std::vector<double> p{1.0, 2.0}, g{0.5, -1.0}, v{0.0, 0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.0, 0.0);
    CHECK(p[0] == doctest::Approx(0.95));
    CHECK(p[1] == doctest::Approx(2.1));
}

TEST_CASE("sgd velocity converges to the geometric-series limit") {
    std::vector<double> p{0.0}, g{1.0}, v{0.0};
    const double m = 0.875;
    for (int i = 0; i < 200; ++i) sgd_momentum_step(p, g, v, 0.0, m, 0.0);
    CHECK(std::abs(v[0] - 1.0 / (1.0 - m)) < 1e-9);
}

TEST_CASE("sgd weight decay is added to the gradient") {
    std::vector<double> p{2.0}, g{0.5}, v{0.0};
    sgd_momentum_step(p, g, v, 0.1, 0.0, 0.1);
    CHECK(v[0] == doctest::Approx(0.7));
    CHECK(p[0] == doctest::Approx(1.93));
}

TEST_CASE("schedules follow their closed forms at every epoch") {
    ScheduleConfig cosine;
    const int total = 40;
    for (int e = 0; e < total; ++e) {
        double expected = 0.001 * 0.5 * (1.0 + std::cos(std::numbers::pi * e / total));
        CHECK(schedule_lr(cosine, e, total, 0.001) == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(schedule_lr(cosine, 0, total, 0.001) == 0.001);
    CHECK(schedule_lr(cosine, total / 2, total, 0.001) == doctest::Approx(0.0005));

    ScheduleConfig step;
    step.kind = ScheduleConfig::Kind::StepDecay;
    step.milestones = {30, 60, 90};
    step.factor = 0.1;
    CHECK(schedule_lr(step, 65, 100, 0.256) == doctest::Approx(0.00256));
    CHECK(schedule_lr(step, 29, 100, 0.256) == doctest::Approx(0.256));
    CHECK(schedule_lr(step, 30, 100, 0.256) == doctest::Approx(0.0256));
    CHECK(schedule_lr(step, 99, 100, 0.256) == doctest::Approx(0.000256));

    ScheduleConfig constant;
    constant.kind = ScheduleConfig::Kind::Constant;
    CHECK(schedule_lr(constant, 7, 10, 0.3) == 0.3);
    CHECK_THROWS(schedule_lr(cosine, total, total, 0.001));
    CHECK_THROWS(schedule_lr(cosine, -1, total, 0.001));
}

TEST_CASE("mixed batches keep floor(ratio·B) clean samples") {
    CHECK(clean_count(128, 0.5) == 64);
    CHECK(clean_count(10, 0.29) == 2);
    CHECK(clean_count(100, 0.29) == 29);
    CHECK(clean_count(7, 1.0) == 7);
    CHECK_THROWS(clean_count(7, 1.5));

    auto data = tiny_data(32);
    auto m = tiny_model();
    std::vector<std::size_t> idx(128);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    auto [x, y] = data.batch(idx);
    AttackConfig attack;
    attack.iterations = 2;

    auto all_clean = build_mixed_batch(m, x, y, attack, 1.0, 5, idx);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(all_clean.at(i) == x.at(i));

    auto half = build_mixed_batch(m, x, y, attack, 0.5, 5, idx);
    const std::size_t per = x.numel() / 128;
    std::size_t changed_rows = 0;
    double worst = 0.0;
    for (std::size_t r = 0; r < 128; ++r) {
        bool changed = false;
        for (std::size_t k = r * per; k < (r + 1) * per; ++k) {
            worst = std::max(worst, std::abs(half.at(k) - x.at(k)));
            changed = changed || half.at(k) != x.at(k);
        }
        if (r < 64) CHECK_FALSE(changed);
        changed_rows += changed ? 1 : 0;
    }
    CHECK(changed_rows == 64);
    CHECK(worst <= attack.epsilon + 1e-9);

    auto all_adv = build_mixed_batch(m, x, y, attack, 0.0, 5, idx);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(all_adv.at(i) - x.at(i)) <= attack.epsilon + 1e-9);
}

TEST_CASE("training configuration is validated") {
    TrainConfig c;
    c.mode = TrainMode::FastAdversarial;
    c.attack.iterations = 3;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    c.attack.iterations = 1;
    c.attack.random_start = false;
    CHECK_THROWS_AS(validate(c), std::invalid_argument);
    TrainConfig conv;
    conv.clean_mix_ratio = 0.5;
    CHECK_THROWS_AS(validate(conv), std::invalid_argument);
    CHECK(parse_train_mode("fast_adversarial") == TrainMode::FastAdversarial);
    CHECK_THROWS(parse_train_mode("madry"));
}

TEST_CASE("zero epochs leave the model untouched") {
    auto data = tiny_data();
    auto m = tiny_model();
    auto before = m;
    auto h = train(m, data, tiny_config(TrainMode::Adversarial, 0));
    CHECK(h.epochs.empty());
    CHECK(m.same_state(before));
}

TEST_CASE("frozen parameters and statistics are bit-identical after training") {
    auto data = tiny_data();
    for (auto mode : {TrainMode::Conventional, TrainMode::Adversarial, TrainMode::FastAdversarial}) {
        auto m = tiny_model();
        auto before = m;
        std::vector<std::string> keep{"m_1", "m_fc"};
        auto mask = freeze_except(m, keep);
        train(m, data, tiny_config(mode, 2), mask);
        for (std::size_t s = 0; s < m.segmentation().size(); ++s) {
            const auto& name = m.segmentation().segments()[s].name;
            if (name == "m_1" || name == "m_fc") {
                CHECK(m.segment_hash(s) != before.segment_hash(s));
            } else {
                CHECK(m.segment_hash(s) == before.segment_hash(s));
            }
        }
    }
}

TEST_CASE("training loss falls over twenty epochs in every mode") {
    auto data = tiny_data(25, 4);
    for (auto mode : {TrainMode::Conventional, TrainMode::Adversarial, TrainMode::FastAdversarial}) {
        for (double mix : {0.0, 0.5}) {
            if (mode == TrainMode::Conventional && mix > 0.0) continue;
            auto m = tiny_model(2);
            auto cfg = tiny_config(mode, 20);
            cfg.clean_mix_ratio = mix;
            auto h = train(m, data, cfg);
            REQUIRE(h.epochs.size() == 20);
            CHECK(h.epochs.back().train_loss < h.epochs.front().train_loss);
            CHECK(h.epochs[3].lr == cfg.optimizer.lr);
        }
    }
}

TEST_CASE("training is deterministic and records provenance") {
    auto data = tiny_data();
    auto a = tiny_model();
    auto b = tiny_model();
    auto cfg = tiny_config(TrainMode::Adversarial, 2);
    cfg.clean_mix_ratio = 0.5;
    cfg.augment = true;
    cfg.joint_batchnorm = false;
    auto ha = train(a, data, cfg);
    auto hb = train(b, data, cfg);
    CHECK(a.same_state(b));
    CHECK(ha.epochs[1].train_loss == hb.epochs[1].train_loss);
    CHECK(a.provenance.train_mode == "adversarial");
    CHECK(a.provenance.epochs == 2);
    CHECK(a.provenance.config_digest == config_digest(cfg));
    auto other = cfg;
    other.seed += 1;
    CHECK(config_digest(other) != config_digest(cfg));
}

TEST_CASE("a non-finite loss aborts with the failing epoch and batch") {
    auto data = tiny_data();
    data.images[5] = std::numeric_limits<double>::quiet_NaN();
    auto m = tiny_model();
    auto cfg = tiny_config(TrainMode::Conventional, 1);
    cfg.batch_size = 100;
    try {
        train(m, data, cfg);
        FAIL("training should have diverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.epoch == 0);
        CHECK(e.batch == 0);
        CHECK(e.lr == cfg.optimizer.lr);
    }
}
