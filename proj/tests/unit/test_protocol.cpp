#include <doctest.h>

#include <set>

#include "layerprobe/protocol.hpp"

using namespace layerprobe;

namespace {

struct Fixture {
    Dataset train_data;
    Dataset test_data;
    ModelGraph pretrained;
    ProtocolContext ctx;

    Fixture() {
        SyntheticOptions o;
        o.classes = 4;
        o.samples_per_class = 10;
        o.image_size = 16;
        o.seed = 21;
        train_data = make_synthetic(o);
        o.samples_per_class = 5;
        o.split = "test";
        o.seed = 22;
        test_data = make_synthetic(o);

        pretrained = build_mini_resnet(3, 16, 16, 4, 1, 4, 31);
        TrainConfig pre;
        pre.epochs = 2;
        pre.batch_size = 20;
        pre.seed = 4;
        train(pretrained, train_data, pre);

        TrainConfig retrain;
        retrain.mode = TrainMode::Adversarial;
        retrain.epochs = 1;
        retrain.batch_size = 20;
        retrain.clean_mix_ratio = 0.5;
        retrain.attack.iterations = 1;
        retrain.seed = 5;
        AttackConfig eval;
        eval.iterations = 2;
        ctx = make_context(pretrained, train_data, test_data, retrain, eval, 6);
    }
};

ExperimentReport fake(std::vector<bool> flags, double clean, double robust) {
    ExperimentReport r;
    r.segment_trainable = std::move(flags);
    r.clean_acc = clean;
    r.robust_acc = robust;
    return r;
}

}  // namespace

TEST_CASE("median uses the midpoint for even counts") {
    CHECK(median({3.0, 1.0, 2.0}) == 2.0);
    CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
    CHECK(median({7.0}) == 7.0);
    CHECK_THROWS(median({}));
}

TEST_CASE("aggregate median splits reports by segment participation") {
    std::vector<ExperimentReport> reports{
        fake({true, false}, 0.9, 0.1),
        fake({true, true}, 0.8, 0.3),
        fake({false, true}, 0.7, 0.5),
        fake({true, false}, 0.6, 0.2),
    };
    auto s0 = aggregate_median(reports, 0);
    CHECK(s0.count_with == 3);
    CHECK(s0.count_without == 1);
    CHECK(s0.clean_with == doctest::Approx(0.8));
    CHECK(s0.robust_with == doctest::Approx(0.2));
    CHECK(s0.clean_without == doctest::Approx(0.7));
    auto s1 = aggregate_median(reports, 1);
    CHECK(s1.clean_with == doctest::Approx(0.75));
    CHECK(s1.robust_without == doctest::Approx(0.15));
    std::vector<ExperimentReport> all_with{fake({true}, 0.5, 0.5)};
    CHECK_THROWS(aggregate_median(all_with, 0));
    CHECK_THROWS(aggregate_median(reports, 2));
}

TEST_CASE("cutoff plans in opposite directions are complementary") {
    auto m = build_mini_resnet(3, 16, 16, 4, 1, 4, 1);
    auto all = parameterized_layers(m);
    for (const auto& name : m.segmentation().names()) {
        auto up = cutoff_plan(m, name, CutDirection::UpTo);
        auto after = cutoff_plan(m, name, CutDirection::After);
        std::set<std::size_t> joined(up.layers.begin(), up.layers.end());
        for (auto l : after.layers) CHECK(joined.insert(l).second);
        CHECK(joined.size() == all.size());
    }
    CHECK(cutoff_plan(m, "m_fc", CutDirection::After).layers.empty());
    CHECK(cutoff_plan(m, "m_1", CutDirection::UpTo).descriptor == "upto:m_1");
    CHECK_THROWS(cutoff_plan(m, "m_7", CutDirection::UpTo));

    auto pl = parameterized_layers(m);
    auto lu = layer_cutoff_plan(m, pl[3], CutDirection::UpTo);
    auto la = layer_cutoff_plan(m, pl[3], CutDirection::After);
    CHECK(lu.layers.size() == 4);
    CHECK(lu.layers.size() + la.layers.size() == pl.size());
    CHECK_THROWS(layer_cutoff_plan(m, 2, CutDirection::UpTo));  // ReLU
}

TEST_CASE("subset plans name their segments in order") {
    auto m = build_mini_resnet(3, 16, 16, 4, 1, 4, 1);
    CHECK(subset_plan(m, 0b000101).descriptor == "subset:m_0+m_2");
    CHECK(subset_plan(m, 0b100000).descriptor == "subset:m_fc");
    CHECK_THROWS(subset_plan(m, 0));
    CHECK_THROWS(subset_plan(m, 1U << 6));
}

TEST_CASE("retraining after the head is plain evaluation") {
    Fixture f;
    auto r = run_cutoff(f.pretrained, "m_fc", CutDirection::After, f.ctx);
    auto direct = evaluate(f.pretrained, f.test_data, f.ctx.eval_attack, f.ctx.eval_seed);
    CHECK(r.retrain_mode == "none");
    CHECK(r.clean_acc == direct.clean_acc);
    CHECK(r.robust_acc == direct.robust_acc);
    for (bool b : r.segment_trainable) CHECK_FALSE(b);
}

TEST_CASE("combination sweep covers every non-empty subset and ignores the thread count") {
    Fixture f;
    auto serial = run_combination_sweep(f.pretrained, f.ctx);
    REQUIRE(serial.size() == 63);
    std::set<std::string> descriptors;
    for (std::size_t i = 0; i < serial.size(); ++i) {
        descriptors.insert(serial[i].descriptor);
        for (std::size_t s = 0; s < 6; ++s) CHECK(serial[i].segment_trainable[s] == bool(((i + 1) >> s) & 1U));
        CHECK(serial[i].retrain_mode == "adversarial");
        CHECK(serial[i].pretrain_mode == "conventional");
    }
    CHECK(descriptors.size() == 63);

    auto threaded_ctx = f.ctx;
    threaded_ctx.threads = 3;
    std::vector<RetrainPlan> plans{subset_plan(f.pretrained, 5), subset_plan(f.pretrained, 18),
                                   subset_plan(f.pretrained, 63)};
    auto threaded = run_plans(f.pretrained, plans, threaded_ctx);
    CHECK(threaded[0].clean_acc == serial[4].clean_acc);
    CHECK(threaded[1].robust_acc == serial[17].robust_acc);
    CHECK(threaded[2].clean_acc == serial[62].clean_acc);
    CHECK(threaded[2].robust_acc == serial[62].robust_acc);
}

TEST_CASE("reinit sweep restores the model and starts with the baseline") {
    Fixture f;
    auto model = f.pretrained;
    auto entries = reinit_robustness_sweep(model, f.test_data, f.ctx.eval_attack, 6, 99);
    CHECK(model.same_state(f.pretrained));
    REQUIRE(entries.size() == parameterized_layers(model).size() + 1);
    CHECK(entries[0].layer == "none");
    auto base = evaluate(f.pretrained, f.test_data, f.ctx.eval_attack, 6);
    CHECK(entries[0].clean_acc == base.clean_acc);
    CHECK(entries[1].layer_index == static_cast<int>(parameterized_layers(model)[0]));
}
