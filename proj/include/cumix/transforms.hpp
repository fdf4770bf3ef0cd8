#pragma once

#include <string>

#include "cumix/rng.hpp"
#include "cumix/tensor.hpp"

namespace cumix::data {

struct DeformSpec {
    enum class Kind { Rotate, Shear, Zoom };
    Kind kind = Kind::Rotate;
    // Rotate/shear: angle in degrees. Zoom: content scale in percent
    // (60 shrinks the content, 140 enlarges it).
    double magnitude = 0.0;
};

struct CorruptionSpec {
    enum class Kind { GaussianNoise, GaussianBlur, Brightness, Contrast };
    Kind kind = Kind::GaussianNoise;
    int severity = 1;  // 1..5
};

// Severity-to-parameter maps; each is strictly monotone in severity.
double noise_sigma(int severity);      // 0.04 * s
double blur_sigma(int severity);       // 0.4 * s
double brightness_delta(int severity); // 0.1 * s
double contrast_factor(int severity);  // 1 - 0.15 * s

std::string deform_label(const DeformSpec& spec);
std::string corruption_label(CorruptionSpec::Kind kind);

// Affine transform about the image center, bilinear interpolation, zero fill.
Tensor<float> deform(const Tensor<float>& img, const DeformSpec& spec);

// Severity-parameterized corruption; output clipped to [0,1].
Tensor<float> corrupt(const Tensor<float>& img, const CorruptionSpec& spec, Rng& rng);

// Deterministic pieces of the conventional training pipeline.
Tensor<float> flip_horizontal(const Tensor<float>& img);
// Zero-pads by `pad` on every side, then crops at offset (dy,dx) in
// [0, 2*pad]. (pad,pad) is the centered, identity crop.
Tensor<float> pad_crop(const Tensor<float>& img, int64_t pad, int64_t dy, int64_t dx);

// Random crop with padding 4 plus horizontal flip with p=0.5.
Tensor<float> standard_augment(const Tensor<float>& img, Rng& rng);

}  // namespace cumix::data
