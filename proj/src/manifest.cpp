#include "layerprobe/manifest.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "layerprobe/random.hpp"

namespace layerprobe {

using nlohmann::json;

ManifestError::ManifestError(std::string path_, const std::string& message)
    : std::runtime_error(path_ + ": " + message), path(std::move(path_)) {}

double parse_fraction(const std::string& text) {
    auto parse_number = [&](std::string_view s) {
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw std::invalid_argument("'" + text + "' is not a number or a fraction like 8/255");
        }
        return v;
    };
    auto slash = text.find('/');
    if (slash == std::string::npos) return parse_number(text);
    double num = parse_number(std::string_view(text).substr(0, slash));
    double den = parse_number(std::string_view(text).substr(slash + 1));
    if (den == 0.0) throw std::invalid_argument("'" + text + "' divides by zero");
    return num / den;
}

namespace {

/// Object view that records which keys were read so leftovers can be rejected.
class Node {
public:
    Node(const json& value, std::string path) : value_(value), path_(std::move(path)) {
        if (!value_.is_object()) throw ManifestError(label(), "expected an object");
    }

    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* optional(const std::string& key) {
        used_.insert(key);
        auto it = value_.find(key);
        return it == value_.end() ? nullptr : &*it;
    }
    const json& required(const std::string& key) {
        const json* v = optional(key);
        if (!v) throw ManifestError(child(key), "required field is missing");
        return *v;
    }
    void finish() const {
        for (auto it = value_.begin(); it != value_.end(); ++it) {
            if (!used_.count(it.key())) throw ManifestError(child(it.key()), "unknown key");
        }
    }

    std::string str(const std::string& key) { return as_string(required(key), child(key)); }
    double number(const std::string& key) { return as_number(required(key), child(key)); }

    template <class T>
    void opt_number(const std::string& key, T& out) {
        if (auto v = optional(key)) out = static_cast<T>(as_number(*v, child(key)));
    }
    void opt_fraction(const std::string& key, double& out) {
        if (auto v = optional(key)) out = as_fraction(*v, child(key));
    }
    template <class T>
    void opt_integer(const std::string& key, T& out) {
        if (auto v = optional(key)) out = as_integer<T>(*v, child(key));
    }
    template <class T>
    T integer(const std::string& key) {
        return as_integer<T>(required(key), child(key));
    }
    void opt_bool(const std::string& key, bool& out) {
        if (auto v = optional(key)) {
            if (!v->is_boolean()) throw ManifestError(child(key), "expected true or false");
            out = v->get<bool>();
        }
    }
    void opt_string(const std::string& key, std::string& out) {
        if (auto v = optional(key)) out = as_string(*v, child(key));
    }
    std::vector<std::string> opt_strings(const std::string& key, std::vector<std::string> fallback) {
        auto v = optional(key);
        if (!v) return fallback;
        if (!v->is_array()) throw ManifestError(child(key), "expected an array of strings");
        std::vector<std::string> out;
        for (std::size_t i = 0; i < v->size(); ++i) {
            out.push_back(as_string((*v)[i], child(key) + "[" + std::to_string(i) + "]"));
        }
        return out;
    }

    static std::string as_string(const json& v, const std::string& path) {
        if (!v.is_string()) throw ManifestError(path, "expected a string");
        return v.get<std::string>();
    }
    static double as_number(const json& v, const std::string& path) {
        if (!v.is_number()) throw ManifestError(path, "expected a number");
        return v.get<double>();
    }
    static double as_fraction(const json& v, const std::string& path) {
        if (v.is_number()) return v.get<double>();
        if (v.is_string()) {
            try {
                return parse_fraction(v.get<std::string>());
            } catch (const std::invalid_argument& e) {
                throw ManifestError(path, e.what());
            }
        }
        throw ManifestError(path, "expected a number or a fraction string such as \"8/255\"");
    }
    template <class T>
    static T as_integer(const json& v, const std::string& path) {
        if (!v.is_number_integer()) throw ManifestError(path, "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
            throw ManifestError(path, "expected a non-negative integer");
        } else {
            return static_cast<T>(v.get<std::int64_t>());
        }
    }

    const std::string& path() const { return path_; }

private:
    std::string label() const { return path_.empty() ? "<root>" : path_; }

    const json& value_;
    std::string path_;
    std::set<std::string> used_;
};

template <class F>
auto with_path(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const std::invalid_argument& e) {
        throw ManifestError(path, e.what());
    }
}

AttackConfig parse_attack(const json& value, const std::string& path) {
    Node n(value, path);
    AttackConfig a;
    a.epsilon = Node::as_fraction(n.required("epsilon"), n.child("epsilon"));
    a.step_size = Node::as_fraction(n.required("step_size"), n.child("step_size"));
    a.iterations = n.integer<int>("iterations");
    n.opt_bool("random_start", a.random_start);
    n.opt_integer("restarts", a.restarts);
    if (auto t = n.optional("target")) {
        a.target_mode = with_path(n.child("target"), [&] { return parse_target_mode(Node::as_string(*t, n.child("target"))); });
    }
    n.finish();
    with_path(path, [&] {
        validate(a);
        return 0;
    });
    return a;
}

OptimizerConfig parse_optimizer(const json& value, const std::string& path) {
    Node n(value, path);
    OptimizerConfig o;
    auto kind = n.str("kind");
    if (kind == "adam") {
        o.kind = OptimizerConfig::Kind::Adam;
        n.opt_number("beta1", o.beta1);
        n.opt_number("beta2", o.beta2);
        n.opt_number("eps", o.adam_eps);
    } else if (kind == "sgd_momentum") {
        o.kind = OptimizerConfig::Kind::SgdMomentum;
        o.momentum = n.number("momentum");
    } else {
        throw ManifestError(n.child("kind"), "unknown optimizer '" + kind + "' (expected adam or sgd_momentum)");
    }
    o.lr = n.number("lr");
    n.finish();
    return o;
}

ScheduleConfig parse_schedule(const json& value, const std::string& path) {
    Node n(value, path);
    ScheduleConfig s;
    auto kind = n.str("kind");
    if (kind == "cosine") {
        s.kind = ScheduleConfig::Kind::Cosine;
    } else if (kind == "constant") {
        s.kind = ScheduleConfig::Kind::Constant;
    } else if (kind == "step_decay") {
        s.kind = ScheduleConfig::Kind::StepDecay;
        const auto& m = n.required("milestones");
        if (!m.is_array()) throw ManifestError(n.child("milestones"), "expected an array of epochs");
        for (std::size_t i = 0; i < m.size(); ++i) {
            s.milestones.push_back(Node::as_integer<int>(m[i], n.child("milestones") + "[" + std::to_string(i) + "]"));
        }
        s.factor = n.number("factor");
    } else {
        throw ManifestError(n.child("kind"), "unknown schedule '" + kind + "' (expected cosine, constant or step_decay)");
    }
    n.finish();
    return s;
}

TrainConfig parse_train(const json& value, const std::string& path) {
    Node n(value, path);
    TrainConfig t;
    t.mode = with_path(n.child("mode"), [&] { return parse_train_mode(n.str("mode")); });
    t.optimizer = parse_optimizer(n.required("optimizer"), n.child("optimizer"));
    t.schedule = parse_schedule(n.required("schedule"), n.child("schedule"));
    t.batch_size = n.integer<int>("batch_size");
    t.epochs = n.integer<int>("epochs");
    n.opt_number("weight_decay", t.weight_decay);
    n.opt_bool("coupled_weight_decay", t.coupled_weight_decay);
    n.opt_number("clean_mix_ratio", t.clean_mix_ratio);
    n.opt_bool("joint_batchnorm", t.joint_batchnorm);
    n.opt_bool("augment", t.augment);
    if (t.mode != TrainMode::Conventional) {
        t.attack = parse_attack(n.required("attack"), n.child("attack"));
    } else if (auto a = n.optional("attack")) {
        t.attack = parse_attack(*a, n.child("attack"));
    }
    n.finish();
    with_path(path, [&] {
        validate(t);
        return 0;
    });
    return t;
}

DatasetSpec parse_dataset(const json& value, const std::string& path) {
    Node n(value, path);
    DatasetSpec d;
    d.kind = n.str("kind");
    if (d.kind == "cifar10" || d.kind == "mnist") {
        d.path = n.str("path");
    } else if (d.kind == "synthetic") {
        if (auto s = n.optional("synthetic")) {
            Node sn(*s, n.child("synthetic"));
            sn.opt_integer("classes", d.synthetic.classes);
            sn.opt_integer("samples_per_class", d.synthetic.samples_per_class);
            sn.opt_integer("test_samples_per_class", d.synthetic_test_per_class);
            sn.opt_integer("image_size", d.synthetic.image_size);
            sn.opt_integer("channels", d.synthetic.channels);
            sn.opt_number("blob_strength", d.synthetic.blob_strength);
            sn.opt_number("color_jitter", d.synthetic.color_jitter);
            sn.opt_number("texture_amplitude", d.synthetic.texture_amplitude);
            sn.opt_number("noise", d.synthetic.noise);
            sn.opt_integer("clutter_blobs", d.synthetic.clutter_blobs);
            sn.finish();
            if (d.synthetic.classes < 2) throw ManifestError(sn.child("classes"), "need at least 2 classes");
            if (d.synthetic.samples_per_class < 1 || d.synthetic_test_per_class < 1) {
                throw ManifestError(sn.path(), "sample counts must be positive");
            }
            if (d.synthetic.image_size < 8) throw ManifestError(sn.child("image_size"), "must be at least 8");
            if (d.synthetic.channels != 1 && d.synthetic.channels != 3) {
                throw ManifestError(sn.child("channels"), "must be 1 or 3");
            }
        }
    } else {
        throw ManifestError(n.child("kind"), "unknown dataset '" + d.kind + "' (expected cifar10, mnist or synthetic)");
    }
    n.opt_integer("train_limit", d.train_limit);
    n.opt_integer("test_limit", d.test_limit);
    n.finish();
    return d;
}

ArchitectureSpec parse_architecture(const json& value, const std::string& path) {
    Node n(value, path);
    ArchitectureSpec a;
    a.family = n.str("family");
    if (a.family == "mini_vgg") {
        n.opt_number("width_multiplier", a.width_multiplier);
        if (!(a.width_multiplier > 0.0)) throw ManifestError(n.child("width_multiplier"), "must be positive");
    } else if (a.family == "mini_resnet") {
        n.opt_integer("base_width", a.base_width);
        n.opt_integer("blocks_per_stage", a.blocks_per_stage);
        if (a.base_width < 1) throw ManifestError(n.child("base_width"), "must be positive");
        if (a.blocks_per_stage < 1) throw ManifestError(n.child("blocks_per_stage"), "must be positive");
    } else {
        throw ManifestError(n.child("family"), "unknown family '" + a.family + "' (expected mini_vgg or mini_resnet)");
    }
    n.finish();
    return a;
}

TsneOptions parse_tsne(const json& value, const std::string& path) {
    Node n(value, path);
    TsneOptions t;
    n.opt_number("perplexity", t.perplexity);
    n.opt_integer("iterations", t.iterations);
    n.opt_number("exaggeration", t.exaggeration);
    n.opt_integer("exaggeration_iterations", t.exaggeration_iterations);
    n.opt_number("learning_rate", t.learning_rate);
    n.finish();
    if (!(t.perplexity > 0.0)) throw ManifestError(n.child("perplexity"), "must be positive");
    if (t.iterations < 1) throw ManifestError(n.child("iterations"), "must be positive");
    return t;
}

AnalysisSpec parse_analysis(const json& value, const std::string& path) {
    Node n(value, path);
    AnalysisSpec a;
    a.segments = n.opt_strings("segments", a.segments);
    n.opt_integer("positions_per_image", a.positions_per_image);
    n.opt_integer("images", a.images);
    a.attack = parse_attack(n.required("attack"), n.child("attack"));
    if (auto t = n.optional("tsne")) a.embed.tsne = parse_tsne(*t, n.child("tsne"));
    n.opt_integer("pca_dims", a.embed.pca_dims);
    n.opt_bool("standardize", a.embed.standardize);
    n.opt_integer("grid_resolution", a.embed.grid_resolution);
    n.finish();
    if (a.segments.empty()) throw ManifestError(n.child("segments"), "must not be empty");
    if (a.positions_per_image == 0) throw ManifestError(n.child("positions_per_image"), "must be positive");
    if (a.images == 0) throw ManifestError(n.child("images"), "must be positive");
    if (a.embed.pca_dims == 0) throw ManifestError(n.child("pca_dims"), "must be positive");
    if (a.embed.grid_resolution == 0) throw ManifestError(n.child("grid_resolution"), "must be positive");
    return a;
}

SweepSpec parse_sweep(const json& value, const std::string& path) {
    Node n(value, path);
    SweepSpec s;
    s.cutoffs = n.opt_strings("cutoffs", {});
    if (n.optional("directions")) {
        s.directions.clear();
        auto names = n.opt_strings("directions", {});
        for (std::size_t i = 0; i < names.size(); ++i) {
            s.directions.push_back(with_path(n.child("directions") + "[" + std::to_string(i) + "]",
                                             [&] { return parse_cut_direction(names[i]); }));
        }
    }
    if (n.optional("retrain_modes")) {
        s.retrain_modes.clear();
        auto names = n.opt_strings("retrain_modes", {});
        for (std::size_t i = 0; i < names.size(); ++i) {
            s.retrain_modes.push_back(with_path(n.child("retrain_modes") + "[" + std::to_string(i) + "]",
                                                [&] { return parse_train_mode(names[i]); }));
        }
    }
    n.opt_bool("reinitialize", s.reinitialize);
    n.finish();
    if (s.directions.empty()) throw ManifestError(n.child("directions"), "must not be empty");
    if (s.retrain_modes.empty()) throw ManifestError(n.child("retrain_modes"), "must not be empty");
    return s;
}

}  // namespace

std::uint64_t ExperimentManifest::eval_seed() const { return derive_seed(seed, "eval"); }
std::uint64_t ExperimentManifest::analysis_seed() const { return derive_seed(seed, "analysis"); }

void apply_root_seed(ExperimentManifest& m, std::uint64_t seed) {
    m.seed = seed;
    m.architecture.init_seed = derive_seed(seed, "init");
    m.pretrain.seed = derive_seed(seed, "pretrain");
    m.retrain.seed = derive_seed(seed, "retrain");
    m.dataset.synthetic.seed = derive_seed(seed, "data");
    m.analysis.embed.tsne.seed = derive_seed(seed, "tsne");
}

ExperimentManifest parse_manifest(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ManifestError("<root>", std::string("malformed JSON: ") + e.what());
    }
    Node root(doc, "");
    ExperimentManifest m;
    root.opt_string("name", m.name);
    auto seed = root.integer<std::uint64_t>("seed");
    m.output_dir = root.str("output_dir");
    root.opt_integer("threads", m.threads);
    if (m.threads == 0) throw ManifestError("threads", "must be positive");
    m.dataset = parse_dataset(root.required("dataset"), "dataset");
    m.architecture = parse_architecture(root.required("architecture"), "architecture");
    m.pretrain = parse_train(root.required("pretrain"), "pretrain");
    m.retrain = m.pretrain;
    if (auto r = root.optional("retrain")) m.retrain = parse_train(*r, "retrain");
    {
        Node ev(root.required("evaluation"), "evaluation");
        m.eval_attack = parse_attack(ev.required("attack"), ev.child("attack"));
        ev.opt_integer("batch_size", m.eval_batch_size);
        ev.finish();
        if (m.eval_batch_size == 0) throw ManifestError(ev.child("batch_size"), "must be positive");
    }
    if (auto s = root.optional("sweep")) m.sweep = parse_sweep(*s, "sweep");
    m.analysis.attack = m.eval_attack;
    if (auto a = root.optional("analysis")) m.analysis = parse_analysis(*a, "analysis");
    root.finish();
    apply_root_seed(m, seed);
    return m;
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("<file>", "cannot open manifest " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_manifest(text.str());
}

}  // namespace layerprobe
