#include "cumix/transforms.hpp"

#include <algorithm>
#include <cmath>

namespace cumix::data {

double noise_sigma(int severity) { return 0.04 * severity; }
double blur_sigma(int severity) { return 0.4 * severity; }
double brightness_delta(int severity) { return 0.1 * severity; }
double contrast_factor(int severity) { return 1.0 - 0.15 * severity; }

std::string deform_label(const DeformSpec& spec) {
    char buf[48];
    switch (spec.kind) {
        case DeformSpec::Kind::Rotate:
            std::snprintf(buf, sizeof(buf), "rotate_pm%g", spec.magnitude);
            break;
        case DeformSpec::Kind::Shear:
            std::snprintf(buf, sizeof(buf), "shear_pm%g", spec.magnitude);
            break;
        default:
            std::snprintf(buf, sizeof(buf), "zoom_%g", spec.magnitude);
            break;
    }
    return buf;
}

std::string corruption_label(CorruptionSpec::Kind kind) {
    switch (kind) {
        case CorruptionSpec::Kind::GaussianNoise: return "gaussian_noise";
        case CorruptionSpec::Kind::GaussianBlur: return "gaussian_blur";
        case CorruptionSpec::Kind::Brightness: return "brightness";
        default: return "contrast";
    }
}

namespace {

void check_image(const Tensor<float>& img, const char* op) {
    if (img.rank() != 3)
        throw ShapeError(std::string(op) + ": expected [C,H,W] image, got " +
                         shape_str(img.shape()));
}

// Inverse-mapped affine about the image center: src = M * (dst - c) + c.
Tensor<float> affine(const Tensor<float>& img, double m00, double m01, double m10, double m11) {
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    Tensor<float> out(img.shape());
    float* o = out.mutable_data().data();
    const float* v = img.data().data();
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double dy = static_cast<double>(y) - cy;
            const double sx = m00 * dx + m01 * dy + cx;
            const double sy = m10 * dx + m11 * dy + cy;
            const auto x0 = static_cast<int64_t>(std::floor(sx));
            const auto y0 = static_cast<int64_t>(std::floor(sy));
            const double fx = sx - static_cast<double>(x0);
            const double fy = sy - static_cast<double>(y0);
            for (int64_t ci = 0; ci < c; ++ci) {
                const float* plane = v + ci * h * w;
                auto at = [&](int64_t yy, int64_t xx) -> double {
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
                    return plane[yy * w + xx];
                };
                const double val = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                                   fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                o[(ci * h + y) * w + x] = static_cast<float>(std::clamp(val, 0.0, 1.0));
            }
        }
    }
    return out;
}

}  // namespace

Tensor<float> deform(const Tensor<float>& img, const DeformSpec& spec) {
    check_image(img, "deform");
    switch (spec.kind) {
        case DeformSpec::Kind::Rotate: {
            const double a = spec.magnitude * M_PI / 180.0;
            // Inverse of a rotation by a is a rotation by -a.
            return affine(img, std::cos(a), std::sin(a), -std::sin(a), std::cos(a));
        }
        case DeformSpec::Kind::Shear: {
            const double t = std::tan(spec.magnitude * M_PI / 180.0);
            return affine(img, 1.0, -t, 0.0, 1.0);
        }
        default: {
            if (spec.magnitude <= 0.0) throw ConfigError("deform: zoom percent must be positive");
            const double s = spec.magnitude / 100.0;
            return affine(img, 1.0 / s, 0.0, 0.0, 1.0 / s);
        }
    }
}

Tensor<float> corrupt(const Tensor<float>& img, const CorruptionSpec& spec, Rng& rng) {
    check_image(img, "corrupt");
    if (spec.severity < 1 || spec.severity > 5)
        throw ConfigError("corrupt: severity " + std::to_string(spec.severity) + " outside 1..5");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> out(img.shape());
    float* o = out.mutable_data().data();
    const float* v = img.data().data();
    const int64_t n = img.numel();
    switch (spec.kind) {
        case CorruptionSpec::Kind::GaussianNoise: {
            const double sigma = noise_sigma(spec.severity);
            for (int64_t i = 0; i < n; ++i)
                o[i] = static_cast<float>(std::clamp(v[i] + sigma * rng.normal(), 0.0, 1.0));
            break;
        }
        case CorruptionSpec::Kind::GaussianBlur: {
            const double sigma = blur_sigma(spec.severity);
            const auto radius = static_cast<int64_t>(std::ceil(2.5 * sigma));
            std::vector<double> kern(static_cast<size_t>(2 * radius + 1));
            double ksum = 0.0;
            for (int64_t i = -radius; i <= radius; ++i) {
                kern[static_cast<size_t>(i + radius)] =
                    std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
                ksum += kern[static_cast<size_t>(i + radius)];
            }
            for (auto& k : kern) k /= ksum;
            // Separable convolution, edges clamped so constants stay constant.
            std::vector<double> tmp(static_cast<size_t>(n));
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        double acc = 0.0;
                        for (int64_t i = -radius; i <= radius; ++i) {
                            const int64_t xx = std::clamp<int64_t>(x + i, 0, w - 1);
                            acc += kern[static_cast<size_t>(i + radius)] * v[(ci * h + y) * w + xx];
                        }
                        tmp[static_cast<size_t>((ci * h + y) * w + x)] = acc;
                    }
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t x = 0; x < w; ++x) {
                        double acc = 0.0;
                        for (int64_t i = -radius; i <= radius; ++i) {
                            const int64_t yy = std::clamp<int64_t>(y + i, 0, h - 1);
                            acc += kern[static_cast<size_t>(i + radius)] *
                                   tmp[static_cast<size_t>((ci * h + yy) * w + x)];
                        }
                        o[(ci * h + y) * w + x] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
                    }
            break;
        }
        case CorruptionSpec::Kind::Brightness: {
            const double delta = brightness_delta(spec.severity);
            for (int64_t i = 0; i < n; ++i)
                o[i] = static_cast<float>(std::clamp(v[i] + delta, 0.0, 1.0));
            break;
        }
        default: {
            const double f = contrast_factor(spec.severity);
            for (int64_t i = 0; i < n; ++i)
                o[i] = static_cast<float>(std::clamp(0.5 + f * (v[i] - 0.5), 0.0, 1.0));
            break;
        }
    }
    return out;
}

Tensor<float> flip_horizontal(const Tensor<float>& img) {
    check_image(img, "flip_horizontal");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> out(img.shape());
    float* o = out.mutable_data().data();
    const float* v = img.data().data();
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) o[(ci * h + y) * w + x] = v[(ci * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor<float> pad_crop(const Tensor<float>& img, int64_t pad, int64_t dy, int64_t dx) {
    check_image(img, "pad_crop");
    if (dy < 0 || dy > 2 * pad || dx < 0 || dx > 2 * pad)
        throw ConfigError("pad_crop: offset outside [0, 2*pad]");
    const int64_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
    Tensor<float> out(img.shape());
    float* o = out.mutable_data().data();
    const float* v = img.data().data();
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const int64_t sy = y + dy - pad;
                const int64_t sx = x + dx - pad;
                o[(ci * h + y) * w + x] =
                    (sy < 0 || sy >= h || sx < 0 || sx >= w) ? 0.0f : v[(ci * h + sy) * w + sx];
            }
    return out;
}

Tensor<float> standard_augment(const Tensor<float>& img, Rng& rng) {
    const bool flip = rng.uniform() < 0.5;
    const auto dy = rng.uniform_int(9);
    const auto dx = rng.uniform_int(9);
    Tensor<float> out = flip ? flip_horizontal(img) : img;
    return pad_crop(out, 4, dy, dx);
}

}  // namespace cumix::data
