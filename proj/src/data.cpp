#include "cumix/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cumix/png_io.hpp"
#include "cumix/serialize.hpp"

namespace fs = std::filesystem;

namespace cumix::data {

void Dataset::push(const Tensor<float>& image, int32_t label) {
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != h_ || image.dim(2) != w_)
        throw ShapeError("dataset: image " + shape_str(image.shape()) + " does not match " +
                         shape_str({3, h_, w_}));
    pixels_.insert(pixels_.end(), image.data().begin(), image.data().end());
    labels_.push_back(label);
}

std::span<const float> Dataset::image_data(int64_t i) const {
    const int64_t stride = 3 * h_ * w_;
    return {pixels_.data() + i * stride, static_cast<size_t>(stride)};
}

Tensor<float> Dataset::image(int64_t i) const {
    const auto d = image_data(i);
    return Tensor<float>({3, h_, w_}, std::vector<float>(d.begin(), d.end()));
}

Tensor<float> Dataset::batch(std::span<const int64_t> rows) const {
    const int64_t stride = 3 * h_ * w_;
    Tensor<float> out({static_cast<int64_t>(rows.size()), 3, h_, w_});
    float* o = out.mutable_data().data();
    for (size_t r = 0; r < rows.size(); ++r) {
        const auto d = image_data(rows[r]);
        std::copy(d.begin(), d.end(), o + static_cast<int64_t>(r) * stride);
    }
    return out;
}

Tensor<float> Dataset::onehot(std::span<const int64_t> rows) const {
    Tensor<float> out({static_cast<int64_t>(rows.size()), num_classes_});
    float* o = out.mutable_data().data();
    for (size_t r = 0; r < rows.size(); ++r)
        o[static_cast<int64_t>(r) * num_classes_ + label(rows[r])] = 1.0f;
    return out;
}

uint64_t Dataset::digest() const {
    uint64_t h = fnv1a(labels_.data(), labels_.size() * sizeof(int32_t));
    return fnv1a(pixels_.data(), pixels_.size() * sizeof(float), h);
}

void Dataset::validate() const {
    if (num_classes_ < 2) throw ConfigError("dataset: num_classes must be >= 2");
    for (size_t i = 0; i < labels_.size(); ++i)
        if (labels_[i] < 0 || labels_[i] >= num_classes_)
            throw ConfigError("dataset: sample " + std::to_string(i) + " has label " +
                              std::to_string(labels_[i]) + " outside 0.." +
                              std::to_string(num_classes_ - 1));
    if (split_ == "train") {
        std::vector<int64_t> counts(static_cast<size_t>(num_classes_), 0);
        for (const auto l : labels_) counts[static_cast<size_t>(l)]++;
        for (int64_t c = 0; c < num_classes_; ++c)
            if (counts[static_cast<size_t>(c)] == 0)
                throw ConfigError("dataset: train split has no sample of class " +
                                  std::to_string(c));
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

struct Rgb {
    double r, g, b;
};

Rgb hsv(double h, double s, double v) {
    h = h - std::floor(h);
    const double i = std::floor(h * 6.0);
    const double f = h * 6.0 - i;
    const double p = v * (1.0 - s), q = v * (1.0 - f * s), t = v * (1.0 - (1.0 - f) * s);
    switch (static_cast<int>(i) % 6) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

double shape_sdf(int shape_id, double u, double v, double r) {
    const double au = std::abs(u), av = std::abs(v);
    switch (shape_id & 7) {
        case 0:  // disk
            return std::hypot(u, v) - r;
        case 1:  // square
            return std::max(au, av) - 0.85 * r;
        case 2: {  // triangle, apex up
            const double k = 0.9 * r;
            const double d1 = v - k;
            const double d2 = -0.5 * v - 0.866 * u - 0.5 * k;
            const double d3 = -0.5 * v + 0.866 * u - 0.5 * k;
            return std::max({d1, d2, d3});
        }
        case 3:  // plus
            return std::min(std::max(au - 0.32 * r, av - r), std::max(au - r, av - 0.32 * r));
        case 4:  // ring
            return std::abs(std::hypot(u, v) - 0.72 * r) - 0.28 * r;
        case 5:  // diamond
            return (au + av) - 1.15 * r;
        case 6:  // horizontal bar
            return std::max(au - r, av - 0.38 * r);
        default:  // vertical bar
            return std::max(au - 0.38 * r, av - r);
    }
}

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace

Dataset generate_synthetic(const SynthSpec& spec) {
    if (spec.classes < 2) throw ConfigError("generate_synthetic: need at least 2 classes");
    if (spec.image_size < 8) throw ConfigError("generate_synthetic: image_size must be >= 8");
    if (spec.per_class < 1) throw ConfigError("generate_synthetic: per_class must be >= 1");

    const int64_t n_cls = spec.classes;
    const int64_t s = spec.image_size;
    std::ostringstream prov;
    prov << "synthetic seed=" << spec.seed << " style=" << spec.style
         << " scramble=" << spec.scramble_prob;
    Dataset ds(s, s, n_cls, spec.split, prov.str());

    Rng rng = Rng(spec.seed).split(fnv1a(spec.split) ^ static_cast<uint64_t>(spec.style));

    // Class->cue tables. The three multipliers are coprime with any class
    // count we use, so every cue alone identifies the class.
    auto shape_of = [&](int64_t c) { return static_cast<int>((c + spec.style) % 8); };
    auto palette_of = [&](int64_t c) { return (c * 3 + spec.style * 2 + 1) % n_cls; };
    auto texture_of = [&](int64_t c) { return (c * 5 + spec.style * 3) % n_cls; };

    for (int64_t cls = 0; cls < n_cls; ++cls) {
        for (int64_t i = 0; i < spec.per_class; ++i) {
            int64_t shape_cls = cls, palette_cls = cls, texture_cls = cls;
            if (rng.uniform() < spec.scramble_prob) shape_cls = rng.uniform_int(n_cls);
            if (rng.uniform() < spec.scramble_prob) palette_cls = rng.uniform_int(n_cls);
            if (rng.uniform() < spec.scramble_prob) texture_cls = rng.uniform_int(n_cls);

            const int shape_id = shape_of(shape_cls);
            const int64_t palette_id = palette_of(palette_cls);
            const int64_t texture_id = texture_of(texture_cls);

            const double cx = (static_cast<double>(s) - 1.0) / 2.0 + rng.uniform(-0.12, 0.12) * s;
            const double cy = (static_cast<double>(s) - 1.0) / 2.0 + rng.uniform(-0.12, 0.12) * s;
            const double radius = (0.28 + rng.uniform() * 0.08) * s;
            const double phi = rng.uniform(-0.35, 0.35);
            const double cphi = std::cos(phi), sphi = std::sin(phi);

            const double hue = static_cast<double>(palette_id) / static_cast<double>(n_cls);
            const Rgb fg = hsv(hue + 0.02, 0.85, 0.95);
            const Rgb bg = hsv(hue + 0.5, 0.35, 0.25);

            const double freq = 1.5 + 0.9 * static_cast<double>(texture_id);
            const double theta = static_cast<double>(texture_id) * M_PI /
                                     static_cast<double>(n_cls) + 0.3;
            const double tc = std::cos(theta), ts = std::sin(theta);

            Tensor<float> img({3, s, s});
            float* px = img.mutable_data().data();
            for (int64_t y = 0; y < s; ++y) {
                for (int64_t x = 0; x < s; ++x) {
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double u = cphi * dx + sphi * dy;
                    const double v = -sphi * dx + cphi * dy;
                    const double sd = shape_sdf(shape_id, u, v, radius);
                    const double cover = smoothstep(0.8, -0.8, sd);
                    const double wave =
                        0.5 + 0.5 * std::sin(2.0 * M_PI * freq * (u * tc + v * ts) /
                                             static_cast<double>(s));
                    const double lum = 0.50 + 0.50 * wave;
                    const double noise = rng.normal() * 0.02;
                    const double rr = bg.r + cover * (fg.r * lum - bg.r) + noise;
                    const double gg = bg.g + cover * (fg.g * lum - bg.g) + noise;
                    const double bb = bg.b + cover * (fg.b * lum - bg.b) + noise;
                    // Quantize to the 8-bit grid so on-disk formats round-trip.
                    px[(0 * s + y) * s + x] =
                        static_cast<float>(std::lround(std::clamp(rr, 0.0, 1.0) * 255.0)) / 255.0f;
                    px[(1 * s + y) * s + x] =
                        static_cast<float>(std::lround(std::clamp(gg, 0.0, 1.0) * 255.0)) / 255.0f;
                    px[(2 * s + y) * s + x] =
                        static_cast<float>(std::lround(std::clamp(bb, 0.0, 1.0) * 255.0)) / 255.0f;
                }
            }
            ds.push(img, static_cast<int32_t>(cls));
        }
    }
    ds.validate();
    return ds;
}

// ---------------------------------------------------------------------------
// Storage
// ---------------------------------------------------------------------------

void save_dataset(const std::string& dir, const Dataset& ds, StorageFormat format) {
    fs::create_directories(dir);
    if (format == StorageFormat::Packed) {
        const int64_t stride = 3 * ds.height() * ds.width();
        std::vector<float> all;
        all.reserve(static_cast<size_t>(ds.size() * stride));
        for (int64_t i = 0; i < ds.size(); ++i) {
            const auto d = ds.image_data(i);
            all.insert(all.end(), d.begin(), d.end());
        }
        io::save_tensor_file(dir + "/images.cumten",
                             Tensor<float>({ds.size(), 3, ds.height(), ds.width()}, std::move(all)));
        io::save_i32_file(dir + "/labels.cumten", {ds.size()}, ds.labels());
        return;
    }
    std::ofstream manifest(dir + "/manifest.csv");
    if (!manifest) throw IoError("save_dataset: cannot write manifest in " + dir);
    for (int64_t i = 0; i < ds.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "img_%06lld.png", static_cast<long long>(i));
        io::write_png(dir + "/" + name, ds.image(i));
        manifest << name << "," << ds.label(i) << "\n";
    }
}

namespace {

Dataset load_packed(const std::string& dir, int64_t expected_classes) {
    const Tensor<float> images = io::load_tensor_file<float>(dir + "/images.cumten");
    auto [lshape, labels] = io::load_i32_file(dir + "/labels.cumten");
    if (images.rank() != 4 || images.dim(1) != 3)
        throw IoError("load_dataset: images.cumten is not [N,3,H,W]");
    if (lshape.size() != 1 || lshape[0] != images.dim(0))
        throw IoError("load_dataset: labels.cumten does not pair with images.cumten");
    int64_t classes = expected_classes;
    if (classes == 0)
        for (const auto l : labels) classes = std::max<int64_t>(classes, l + 1);
    Dataset ds(images.dim(2), images.dim(3), classes, "loaded", dir);
    const int64_t stride = 3 * images.dim(2) * images.dim(3);
    const float* v = images.data().data();
    for (int64_t i = 0; i < images.dim(0); ++i) {
        for (int64_t j = 0; j < stride; ++j) {
            const float p = v[i * stride + j];
            if (p < 0.0f || p > 1.0f)
                throw IoError("load_dataset: pixel outside [0,1] in image " + std::to_string(i));
        }
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= classes)
            throw IoError("load_dataset: row " + std::to_string(i) + " has label " +
                          std::to_string(labels[static_cast<size_t>(i)]) + " outside 0.." +
                          std::to_string(classes - 1));
        ds.push(Tensor<float>({3, images.dim(2), images.dim(3)},
                              std::vector<float>(v + i * stride, v + (i + 1) * stride)),
                labels[static_cast<size_t>(i)]);
    }
    return ds;
}

Dataset load_manifest(const std::string& manifest_path, int64_t expected_classes) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("load_dataset: missing manifest " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    std::string line;
    std::vector<std::pair<std::string, int32_t>> rows;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos)
            throw IoError("load_dataset: manifest row " + std::to_string(lineno) +
                          " is not 'path,label': " + line);
        rows.emplace_back(line.substr(0, comma),
                          static_cast<int32_t>(std::stol(line.substr(comma + 1))));
    }
    if (rows.empty()) throw IoError("load_dataset: empty manifest " + manifest_path);

    int64_t classes = expected_classes;
    if (classes == 0)
        for (const auto& [p, l] : rows) classes = std::max<int64_t>(classes, l + 1);

    Dataset ds;
    bool first = true;
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& [rel, label] = rows[i];
        if (label < 0 || label >= classes)
            throw IoError("load_dataset: manifest row " + std::to_string(i + 1) + " (" + rel +
                          ") has label " + std::to_string(label) + " outside 0.." +
                          std::to_string(classes - 1));
        const Tensor<float> img = io::read_png((base / rel).string());
        if (first) {
            ds = Dataset(img.dim(1), img.dim(2), classes, "loaded", manifest_path);
            first = false;
        }
        ds.push(img, label);
    }
    return ds;
}

}  // namespace

Dataset load_dataset(const std::string& path, int64_t expected_classes) {
    if (fs::is_directory(path)) {
        if (fs::exists(fs::path(path) / "images.cumten")) return load_packed(path, expected_classes);
        if (fs::exists(fs::path(path) / "manifest.csv"))
            return load_manifest((fs::path(path) / "manifest.csv").string(), expected_classes);
        throw IoError("load_dataset: no images.cumten or manifest.csv in " + path);
    }
    if (!fs::exists(path)) throw IoError("load_dataset: missing " + path);
    return load_manifest(path, expected_classes);
}

}  // namespace cumix::data
