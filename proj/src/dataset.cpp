#include "layerprobe/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>

#include "layerprobe/random.hpp"

namespace layerprobe {

std::pair<Tensor, std::vector<int>> Dataset::batch(std::span<const std::size_t> indices) const {
    const std::size_t per = image_numel();
    std::vector<double> data(indices.size() * per);
    std::vector<int> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        auto src = indices[i];
        if (src >= size()) throw std::out_of_range("sample index " + std::to_string(src) + " out of range");
        std::copy_n(images.begin() + static_cast<long>(src * per), per, data.begin() + static_cast<long>(i * per));
        y[i] = labels[src];
    }
    Shape shape{indices.size()};
    shape.insert(shape.end(), image_shape.begin(), image_shape.end());
    return {Tensor::from_data(std::move(shape), std::move(data)), std::move(y)};
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const {
    Dataset out;
    out.image_shape = image_shape;
    out.split = split;
    out.class_names = class_names;
    first = std::min(first, size());
    std::size_t last = std::min(size(), first + count);
    const std::size_t per = image_numel();
    out.images.assign(images.begin() + static_cast<long>(first * per), images.begin() + static_cast<long>(last * per));
    out.labels.assign(labels.begin() + static_cast<long>(first), labels.begin() + static_cast<long>(last));
    return out;
}

void Dataset::validate() const {
    if (images.size() != labels.size() * image_numel()) {
        throw FormatError("dataset holds " + std::to_string(images.size()) + " pixel values for " +
                          std::to_string(labels.size()) + " images of shape " + shape_str(image_shape));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes()) {
            throw FormatError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                              " outside [0, " + std::to_string(classes()) + ")");
        }
    }
    for (double v : images) {
        if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel value outside [0, 1]");
    }
}

const std::vector<std::string>& cifar10_class_names() {
    static const std::vector<std::string> names{"airplane", "automobile", "bird",  "cat",  "deer",
                                                "dog",      "frog",       "horse", "ship", "truck"};
    return names;
}

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

constexpr std::size_t kCifarRecord = 1 + 3 * 1024;

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& file, const std::string& split) {
    auto bytes = read_file(file);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
        std::size_t records = bytes.size() / kCifarRecord + 1;
        throw FormatError(file.string() + ": expected a whole number of " + std::to_string(kCifarRecord) +
                          "-byte records (next boundary at " + std::to_string(records * kCifarRecord) +
                          " bytes), got " + std::to_string(bytes.size()) + " bytes");
    }
    Dataset d;
    d.image_shape = {3, 32, 32};
    d.split = split;
    d.class_names = cifar10_class_names();
    const std::size_t n = bytes.size() / kCifarRecord;
    d.labels.resize(n);
    d.images.resize(n * 3072);
    for (std::size_t r = 0; r < n; ++r) {
        std::size_t off = r * kCifarRecord;
        if (bytes[off] > 9) {
            throw FormatError(file.string() + ": label byte " + std::to_string(bytes[off]) + " > 9 at offset " +
                              std::to_string(off));
        }
        d.labels[r] = bytes[off];
        for (std::size_t k = 0; k < 3072; ++k) d.images[r * 3072 + k] = bytes[off + 1 + k] / 255.0;
    }
    return d;
}

Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split) {
    std::vector<std::string> files;
    if (split == "train") {
        for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else if (split == "test") {
        files.push_back("test_batch.bin");
    } else {
        throw std::invalid_argument("CIFAR-10 split must be train or test, got '" + split + "'");
    }
    Dataset out;
    for (const auto& f : files) {
        auto part = load_cifar10_file(dir / f, split);
        if (part.size() != 10000) {
            throw FormatError((dir / f).string() + ": expected 10000 records (" + std::to_string(10000 * kCifarRecord) +
                              " bytes), got " + std::to_string(part.size()) + " records (" +
                              std::to_string(part.size() * kCifarRecord) + " bytes)");
        }
        if (out.labels.empty()) {
            out = std::move(part);
        } else {
            out.images.insert(out.images.end(), part.images.begin(), part.images.end());
            out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
        }
    }
    return out;
}

Dataset load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                       const std::string& split) {
    auto ib = read_file(images);
    auto lb = read_file(labels);
    if (ib.size() < 16) throw FormatError(images.string() + ": file too short for an IDX image header");
    if (lb.size() < 8) throw FormatError(labels.string() + ": file too short for an IDX label header");
    if (read_be32(ib, 0) != 0x00000803) {
        throw FormatError(images.string() + ": bad magic number at offset 0 (expected 0x00000803)");
    }
    if (read_be32(lb, 0) != 0x00000801) {
        throw FormatError(labels.string() + ": bad magic number at offset 0 (expected 0x00000801)");
    }
    const std::size_t n = read_be32(ib, 4), rows = read_be32(ib, 8), cols = read_be32(ib, 12);
    const std::size_t nl = read_be32(lb, 4);
    if (n != nl) {
        throw FormatError("image file declares " + std::to_string(n) + " items but label file declares " +
                          std::to_string(nl));
    }
    if (ib.size() != 16 + n * rows * cols) {
        throw FormatError(images.string() + ": expected " + std::to_string(16 + n * rows * cols) + " bytes, got " +
                          std::to_string(ib.size()));
    }
    if (lb.size() != 8 + n) {
        throw FormatError(labels.string() + ": expected " + std::to_string(8 + n) + " bytes, got " +
                          std::to_string(lb.size()));
    }
    Dataset d;
    d.image_shape = {1, rows, cols};
    d.split = split;
    for (int c = 0; c < 10; ++c) d.class_names.push_back(std::to_string(c));
    d.labels.resize(n);
    d.images.resize(n * rows * cols);
    for (std::size_t i = 0; i < n; ++i) {
        if (lb[8 + i] > 9) {
            throw FormatError(labels.string() + ": label byte " + std::to_string(lb[8 + i]) + " > 9 at offset " +
                              std::to_string(8 + i));
        }
        d.labels[i] = lb[8 + i];
    }
    for (std::size_t k = 0; k < d.images.size(); ++k) d.images[k] = ib[16 + k] / 255.0;
    return d;
}

Dataset load_mnist(const std::filesystem::path& dir, const std::string& split) {
    std::string prefix = split == "train" ? "train" : (split == "test" ? "t10k" : "");
    if (prefix.empty()) throw std::invalid_argument("MNIST split must be train or test, got '" + split + "'");
    return load_mnist_idx(dir / (prefix + "-images-idx3-ubyte"), dir / (prefix + "-labels-idx1-ubyte"), split);
}

// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> hue_color(double hue) {
    // HSV with s = 0.85, v = 0.9
    const double s = 0.85, v = 0.9;
    double h = std::fmod(hue, 1.0) * 6.0;
    int sector = static_cast<int>(h);
    double f = h - sector;
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

}  // namespace

Dataset make_synthetic(const SyntheticOptions& opts) {
    if (opts.image_size < 8) throw std::invalid_argument("synthetic image_size must be >= 8");
    if (opts.classes < 2) throw std::invalid_argument("synthetic data needs at least two classes");
    if (opts.samples_per_class < 1) throw std::invalid_argument("samples_per_class must be positive");
    if (opts.channels != 1 && opts.channels != 3) throw std::invalid_argument("synthetic channels must be 1 or 3");

    const int k = opts.classes;
    const std::size_t s = static_cast<std::size_t>(opts.image_size);
    const std::size_t ch = static_cast<std::size_t>(opts.channels);
    const std::size_t plane = s * s;
    const double size = static_cast<double>(s);

    // Blob colours (robust cue) and stripe textures (low-amplitude cue).
    std::vector<std::array<double, 3>> palette;
    for (int c = 0; c < k; ++c) palette.push_back(hue_color(static_cast<double>(c) / k));
    auto texture_angle = [&](int c) { return std::numbers::pi * static_cast<double>(c) / k; };
    auto texture_period = [&](int c) { return 2.5 + (c % 3) * 0.75; };


    Dataset d;
    d.image_shape = {ch, s, s};
    d.split = opts.split;
    for (int c = 0; c < k; ++c) d.class_names.push_back("class_" + std::to_string(c));
    const std::size_t n = static_cast<std::size_t>(k) * static_cast<std::size_t>(opts.samples_per_class);
    d.images.resize(n * ch * plane);
    d.labels.resize(n);

    std::vector<double> img(3 * plane);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % static_cast<std::size_t>(k));
        d.labels[i] = label;
        auto rng = make_stream(opts.seed, "synthetic/" + opts.split, i);

        double bg = 0.3 + 0.3 * uniform01(rng);
        double gx = 0.15 * (uniform01(rng) - 0.5), gy = 0.15 * (uniform01(rng) - 0.5);
        for (std::size_t c = 0; c < 3; ++c) {
            double tint = 0.06 * (uniform01(rng) - 0.5);
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) {
                    img[c * plane + y * s + x] = bg + tint + gx * (x / size - 0.5) + gy * (y / size - 0.5);
                }
            }
        }

        auto paint_blob = [&](double cx, double cy, double radius, std::array<double, 3> color, double strength) {
            for (std::size_t y = 0; y < s; ++y) {
                for (std::size_t x = 0; x < s; ++x) {
                    double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
                    double a = strength * std::exp(-(dx * dx + dy * dy) / (2.0 * radius * radius));
                    for (std::size_t c = 0; c < 3; ++c) {
                        auto& p = img[c * plane + y * s + x];
                        p = p * (1.0 - a) + color[c] * a;
                    }
                }
            }
        };

        // Clutter blobs take arbitrary palette colours and are smaller than the class blob.
        for (int b = 0; b < opts.clutter_blobs; ++b) {
            int other = static_cast<int>(uniform01(rng) * k) % k;
            double cx = size * (0.15 + 0.7 * uniform01(rng)), cy = size * (0.15 + 0.7 * uniform01(rng));
            paint_blob(cx, cy, size * 0.08, palette[static_cast<std::size_t>(other)], 0.7);
        }
        {
            auto color = palette[static_cast<std::size_t>(label)];
            for (auto& v : color) v = std::clamp(v + opts.color_jitter * standard_normal(rng), 0.0, 1.0);
            double cx = size * (0.3 + 0.4 * uniform01(rng)), cy = size * (0.3 + 0.4 * uniform01(rng));
            double radius = size * (0.14 + 0.06 * uniform01(rng));
            paint_blob(cx, cy, radius, color, opts.blob_strength);
        }

        const double theta = texture_angle(label), period = texture_period(label);
        const double phase = 2.0 * std::numbers::pi * uniform01(rng);
        const double ux = std::cos(theta), uy = std::sin(theta);
        for (std::size_t y = 0; y < s; ++y) {
            for (std::size_t x = 0; x < s; ++x) {
                double t = opts.texture_amplitude *
                           std::sin(2.0 * std::numbers::pi * (x * ux + y * uy) / period + phase);
                for (std::size_t c = 0; c < 3; ++c) img[c * plane + y * s + x] += t;
            }
        }

        double* dst = d.images.data() + i * ch * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            if (ch == 1) {
                double g = (img[p] + img[plane + p] + img[2 * plane + p]) / 3.0 + opts.noise * standard_normal(rng);
                dst[p] = std::clamp(g, 0.0, 1.0);
            } else {
                for (std::size_t c = 0; c < 3; ++c) {
                    dst[c * plane + p] = std::clamp(img[c * plane + p] + opts.noise * standard_normal(rng), 0.0, 1.0);
                }
            }
        }
    }
    return d;
}

double nearest_centroid_accuracy(const Dataset& train, const Dataset& test) {
    if (train.image_shape != test.image_shape) throw DimensionError("train/test image shapes differ");
    const std::size_t per = train.image_numel();
    const int k = train.classes();
    std::vector<double> centroids(static_cast<std::size_t>(k) * per, 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        auto c = static_cast<std::size_t>(train.labels[i]);
        ++counts[c];
        for (std::size_t p = 0; p < per; ++p) centroids[c * per + p] += train.images[i * per + p];
    }
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (std::size_t p = 0; p < per; ++p) centroids[c * per + p] /= std::max<std::size_t>(counts[c], 1);
    }
    std::size_t ok = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int c = 0; c < k; ++c) {
            double dist = 0.0;
            for (std::size_t p = 0; p < per; ++p) {
                double diff = test.images[i * per + p] - centroids[static_cast<std::size_t>(c) * per + p];
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                arg = c;
            }
        }
        ok += arg == test.labels[i] ? 1 : 0;
    }
    return test.size() ? static_cast<double>(ok) / static_cast<double>(test.size()) : 0.0;
}

}  // namespace layerprobe
