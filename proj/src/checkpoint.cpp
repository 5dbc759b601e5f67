#include "layerprobe/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "layerprobe/random.hpp"

namespace layerprobe {

CheckpointVersionError::CheckpointVersionError(std::uint32_t found_, std::uint32_t supported_)
    : CheckpointError("checkpoint format version " + std::to_string(found_) + " is not supported (this build reads " +
                      "version " + std::to_string(supported_) + "); re-save the model with a matching build"),
      found(found_),
      supported(supported_) {}

namespace {

constexpr char kMagic[4] = {'L', 'P', 'R', 'B'};
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& data, std::size_t end) : data_(data), end_(end) {}
    void need(std::size_t n) const {
        if (pos_ + n > end_) {
            throw CheckpointError("checkpoint truncated: need " + std::to_string(n) + " bytes at offset " +
                                  std::to_string(pos_) + ", " + std::to_string(end_ - pos_) + " remain");
        }
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::string str() {
        auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::vector<std::uint8_t>& data_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double>* values;  // running statistics
    Tensor* tensor;               // parameters
};

std::vector<NamedTensor> state_entries(ModelGraph& model) {
    std::vector<NamedTensor> out;
    for (auto& layer : model.mutable_layers()) {
        for (std::size_t k = 0; k < layer.params.size(); ++k) {
            out.push_back({layer.name + "." + layer.param_names[k], layer.params[k].shape(), nullptr, &layer.params[k]});
        }
        if (layer.kind == LayerKind::BatchNorm2d) {
            out.push_back({layer.name + ".running_mean", {layer.running_mean.size()}, &layer.running_mean, nullptr});
            out.push_back({layer.name + ".running_var", {layer.running_var.size()}, &layer.running_var, nullptr});
        }
    }
    return out;
}

nlohmann::json descriptor_json(const ModelGraph& model) {
    const auto& s = model.spec();
    nlohmann::json j;
    j["architecture"] = {{"family", s.family},
                         {"channels", s.channels},
                         {"height", s.height},
                         {"width", s.width},
                         {"classes", s.classes},
                         {"width_multiplier", s.width_multiplier},
                         {"base_width", s.base_width},
                         {"blocks_per_stage", s.blocks_per_stage},
                         {"init_seed", s.init_seed}};
    j["provenance"] = {{"train_mode", model.provenance.train_mode},
                       {"config_digest", model.provenance.config_digest},
                       {"epochs", model.provenance.epochs},
                       {"seed", model.provenance.seed}};
    return j;
}

}  // namespace

std::string architecture_descriptor(const ModelGraph& model) { return descriptor_json(model).dump(); }

std::vector<std::uint8_t> checkpoint_bytes(const ModelGraph& model) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(architecture_descriptor(model));
    std::uint32_t count = 0;
    for (const auto& layer : model.layers()) {
        count += static_cast<std::uint32_t>(layer.params.size());
        if (layer.kind == LayerKind::BatchNorm2d) count += 2;
    }
    w.u32(count);
    auto record = [&](const std::string& name, const Shape& shape, std::span<const double> values) {
        w.str(name);
        w.u8(kDtypeF64);
        w.u32(static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) w.u64(d);
        for (double v : values) w.u64(std::bit_cast<std::uint64_t>(v));
    };
    for (const auto& layer : model.layers()) {
        for (std::size_t k = 0; k < layer.params.size(); ++k) {
            record(layer.name + "." + layer.param_names[k], layer.params[k].shape(), layer.params[k].data());
        }
        if (layer.kind == LayerKind::BatchNorm2d) {
            record(layer.name + ".running_mean", {layer.running_mean.size()}, layer.running_mean);
            record(layer.name + ".running_var", {layer.running_var.size()}, layer.running_var);
        }
    }
    w.u64(fnv1a64(w.out.data(), w.out.size()));
    return std::move(w.out);
}

ModelGraph model_from_bytes(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError("not a checkpoint: missing LPRB header");
    }
    std::uint32_t version = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + static_cast<std::size_t>(i)]) << (8 * i);
    if (version != kCheckpointVersion) throw CheckpointVersionError(version, kCheckpointVersion);

    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i) stored |= static_cast<std::uint64_t>(bytes[body + static_cast<std::size_t>(i)]) << (8 * i);
    const auto actual = fnv1a64(bytes.data(), body);
    if (stored != actual) {
        throw CheckpointCorruptError("checkpoint checksum mismatch (stored " + std::to_string(stored) + ", computed " +
                                     std::to_string(actual) + "); the file is corrupted");
    }

    Reader r(bytes, body);
    for (int i = 0; i < 8; ++i) r.u8();
    nlohmann::json desc;
    try {
        desc = nlohmann::json::parse(r.str());
        const auto& a = desc.at("architecture");
        ArchitectureSpec spec;
        spec.family = a.at("family").get<std::string>();
        spec.channels = a.at("channels").get<std::size_t>();
        spec.height = a.at("height").get<std::size_t>();
        spec.width = a.at("width").get<std::size_t>();
        spec.classes = a.at("classes").get<int>();
        spec.width_multiplier = a.at("width_multiplier").get<double>();
        spec.base_width = a.at("base_width").get<int>();
        spec.blocks_per_stage = a.at("blocks_per_stage").get<int>();
        spec.init_seed = a.at("init_seed").get<std::uint64_t>();

        ModelGraph model = build_model(spec);
        const auto& p = desc.at("provenance");
        model.provenance.train_mode = p.at("train_mode").get<std::string>();
        model.provenance.config_digest = p.at("config_digest").get<std::string>();
        model.provenance.epochs = p.at("epochs").get<int>();
        model.provenance.seed = p.at("seed").get<std::uint64_t>();

        std::map<std::string, NamedTensor> expected;
        for (auto& e : state_entries(model)) expected.emplace(e.name, e);
        const auto count = r.u32();
        if (count != expected.size()) {
            throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, the architecture needs " +
                                  std::to_string(expected.size()));
        }
        for (std::uint32_t t = 0; t < count; ++t) {
            auto name = r.str();
            auto it = expected.find(name);
            if (it == expected.end()) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
            auto dtype = r.u8();
            if (dtype != kDtypeF64) throw CheckpointError("tensor '" + name + "' has unsupported dtype tag " + std::to_string(dtype));
            Shape shape(r.u32());
            for (auto& d : shape) d = r.u64();
            if (shape != it->second.shape) {
                throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                                      shape_str(it->second.shape));
            }
            std::span<double> dst = it->second.tensor
                                        ? it->second.tensor->mutable_data()
                                        : std::span<double>(it->second.values->data(), it->second.values->size());
            for (auto& v : dst) v = std::bit_cast<double>(r.u64());
            expected.erase(it);
        }
        if (r.pos() != body) throw CheckpointError("checkpoint has " + std::to_string(body - r.pos()) + " trailing bytes");
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("invalid architecture descriptor: ") + e.what());
    }
}

void save_checkpoint(const ModelGraph& model, const std::filesystem::path& path) {
    auto bytes = checkpoint_bytes(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + path.string());
}

ModelGraph load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return model_from_bytes(bytes);
}

}  // namespace layerprobe
