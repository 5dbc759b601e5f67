#include <doctest.h>

#include <cstdio>
#include <functional>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "layerprobe/checkpoint.hpp"
#include "layerprobe/dataset.hpp"
#include "layerprobe/manifest.hpp"
#include "layerprobe/report.hpp"

using namespace layerprobe;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("layerprobe-unit-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

const char* kManifest = R"({
  "name": "unit",
  "seed": 5,
  "output_dir": "out",
  "dataset": {"kind": "synthetic", "synthetic": {"classes": 4, "samples_per_class": 8, "image_size": 16}},
  "architecture": {"family": "mini_resnet", "base_width": 4, "blocks_per_stage": 1},
  "pretrain": {
    "mode": "adversarial",
    "optimizer": {"kind": "adam", "lr": 0.001},
    "schedule": {"kind": "cosine"},
    "batch_size": 16,
    "epochs": 1,
    "attack": {"epsilon": "8/255", "step_size": "2/255", "iterations": 7, "target": "prediction"}
  },
  "evaluation": {"attack": {"epsilon": "8/255", "step_size": "2/255", "iterations": 2}}
})";

}  // namespace

TEST_CASE("cifar record parsing scales bytes and keeps labels") {
    auto dir = scratch_dir("cifar");
    std::vector<std::uint8_t> rec(1 + 3072, 255);
    rec[0] = 3;
    write_bytes(dir / "one.bin", rec);
    auto d = load_cifar10_file(dir / "one.bin", "test");
    REQUIRE(d.size() == 1);
    CHECK(d.labels[0] == 3);
    CHECK(d.image_shape == Shape{3, 32, 32});
    for (double v : d.images) CHECK(v == 1.0);

    rec.pop_back();
    write_bytes(dir / "short.bin", rec);
    auto msg = error_of([&] { load_cifar10_file(dir / "short.bin", "test"); });
    CHECK(msg.find("short.bin") != std::string::npos);
    CHECK(msg.find("3073") != std::string::npos);
}

TEST_CASE("mnist idx parsing checks magic numbers and counts") {
    auto dir = scratch_dir("mnist");
    std::vector<std::uint8_t> img;
    put_be32(img, 0x803);
    put_be32(img, 2);
    put_be32(img, 2);
    put_be32(img, 2);
    for (int i = 0; i < 8; ++i) img.push_back(128);
    std::vector<std::uint8_t> lab;
    put_be32(lab, 0x801);
    put_be32(lab, 2);
    lab.push_back(7);
    lab.push_back(1);
    write_bytes(dir / "img", img);
    write_bytes(dir / "lab", lab);
    auto d = load_mnist_idx(dir / "img", dir / "lab", "train");
    REQUIRE(d.size() == 2);
    CHECK(d.image_shape == Shape{1, 2, 2});
    CHECK(d.images[0] == doctest::Approx(128.0 / 255.0));
    CHECK(d.labels[0] == 7);

    auto lab3 = lab;
    lab3[7] = 3;
    lab3.push_back(0);
    write_bytes(dir / "lab3", lab3);
    CHECK(error_of([&] { load_mnist_idx(dir / "img", dir / "lab3", "train"); }).find("declares") != std::string::npos);

    auto bad = img;
    bad[3] = 0x04;
    write_bytes(dir / "bad", bad);
    CHECK_THROWS_AS(load_mnist_idx(dir / "bad", dir / "lab", "train"), FormatError);
}

TEST_CASE("checkpoints round-trip weights, statistics and provenance") {
    auto m = build_mini_resnet(3, 16, 16, 4, 1, 4, 12);
    m.provenance.train_mode = "adversarial";
    m.provenance.epochs = 3;
    m.provenance.config_digest = "abc";
    m.provenance.seed = 44;
    m.mutable_layers()[1].running_mean[0] = 0.25;
    auto dir = scratch_dir("ckpt");
    save_checkpoint(m, dir / "m.lprb");
    auto back = load_checkpoint(dir / "m.lprb");
    CHECK(back.same_state(m));
    CHECK(back.provenance == m.provenance);
    CHECK(back.spec() == m.spec());
    CHECK(architecture_descriptor(back) == architecture_descriptor(m));

    auto bytes = checkpoint_bytes(m);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(model_from_bytes(flipped), CheckpointCorruptError);

    auto versioned = bytes;
    versioned[4] = 2;
    try {
        model_from_bytes(versioned);
        FAIL("version check missing");
    } catch (const CheckpointVersionError& e) {
        CHECK(e.found == 2);
        CHECK(e.supported == kCheckpointVersion);
    }
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(model_from_bytes(magic), CheckpointError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.lprb"), CheckpointError);
}

TEST_CASE("manifest parsing accepts fractions and reports offending paths") {
    auto m = parse_manifest(kManifest);
    CHECK(m.pretrain.attack.epsilon == doctest::Approx(8.0 / 255.0));
    CHECK(m.pretrain.attack.target_mode == TargetMode::Prediction);
    CHECK(m.retrain.mode == TrainMode::Adversarial);
    CHECK(m.architecture.family == "mini_resnet");
    CHECK(m.eval_seed() != m.analysis_seed());
    CHECK(parse_fraction("1/4") == 0.25);
    CHECK(parse_fraction("0.5") == 0.5);
    CHECK_THROWS(parse_fraction("1/0"));

    std::string unknown = kManifest;
    unknown.replace(unknown.find("\"batch_size\": 16"), 16, "\"batch_size\": 16, \"batch_sise\": 16");
    try {
        parse_manifest(unknown);
        FAIL("unknown key accepted");
    } catch (const ManifestError& e) {
        CHECK(e.path == "pretrain.batch_sise");
        CHECK(std::string(e.what()).find("batch_sise") != std::string::npos);
    }

    std::string missing = kManifest;
    auto at = missing.find("\"iterations\": 2");
    missing.replace(at, 15, "\"restarts\": 1");
    try {
        parse_manifest(missing);
        FAIL("missing key accepted");
    } catch (const ManifestError& e) {
        CHECK(e.path == "evaluation.attack.iterations");
    }
    CHECK_THROWS_AS(parse_manifest("{"), ManifestError);
}

TEST_CASE("root seed derivation changes every consumer seed") {
    auto m = parse_manifest(kManifest);
    auto n = m;
    apply_root_seed(n, 6);
    CHECK(n.seed == 6);
    CHECK(n.pretrain.seed != m.pretrain.seed);
    CHECK(n.retrain.seed != m.retrain.seed);
    CHECK(n.architecture.init_seed != m.architecture.init_seed);
    CHECK(n.eval_seed() != m.eval_seed());
}

TEST_CASE("report tables round-trip through tsv exactly") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(parse_double(format_double(1.0 / 3.0)) == 1.0 / 3.0);
    ExperimentReport r;
    r.descriptor = "upto:m_1";
    r.pretrain_mode = "conventional";
    r.retrain_mode = "adversarial";
    r.segment_trainable = {true, true, false};
    r.clean_acc = 0.8125;
    r.robust_acc = 1.0 / 3.0;
    r.seed = 17;
    std::vector<std::string> names{"m_0", "m_1", "m_fc"};
    auto t = experiment_table({r}, names);
    auto text = to_tsv(t);
    auto back = parse_tsv(text, t.kind);
    CHECK(back == t);
    CHECK(to_tsv(back) == text);
    auto reports = experiments_from_table(back);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].robust_acc == r.robust_acc);
    CHECK(reports[0].segment_trainable == r.segment_trainable);
    CHECK(to_json_document(t).find("\"clean_acc\": 0.8125") != std::string::npos);
    CHECK_THROWS(parse_tsv("a\tb\n1\n", "x"));
}

#ifdef LAYERPROBE_CLI_PATH
TEST_CASE("cli exit codes separate usage, configuration and runtime failures") {
    auto dir = scratch_dir("cli");
    auto run = [&](const std::string& args) {
        std::string cmd = std::string(LAYERPROBE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
        int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    CHECK(run("") == 1);
    CHECK(run("no-such-command") == 1);
    CHECK(run("--help") == 0);

    std::ofstream(dir / "bad.json") << "{\"seed\": 1}";
    CHECK(run("pretrain " + (dir / "bad.json").string()) == 1);

    std::string good = kManifest;
    good.replace(good.find("\"out\""), 5, "\"" + (dir / "out").string() + "\"");
    std::ofstream(dir / "good.json") << good;
    CHECK(run("attack-eval " + (dir / "good.json").string() + " --checkpoint " + (dir / "absent.lprb").string()) == 2);
    CHECK(run("pretrain " + (dir / "good.json").string()) == 0);
    CHECK(fs::exists(dir / "out" / "pretrained.lprb"));
    CHECK(run("attack-eval " + (dir / "good.json").string()) == 0);
}
#endif
