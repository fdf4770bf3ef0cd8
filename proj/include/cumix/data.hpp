#pragma once

#include <span>
#include <string>
#include <vector>

#include "cumix/rng.hpp"
#include "cumix/tensor.hpp"

namespace cumix::data {

struct Sample {
    Tensor<float> image;  // [3,H,W], values in [0,1]
    int32_t label = 0;
};

// Packed image set. Pixels are stored contiguously as [N,3,H,W] so batches
// are plain row gathers.
class Dataset {
public:
    Dataset() = default;
    Dataset(int64_t height, int64_t width, int64_t num_classes, std::string split,
            std::string provenance)
        : h_(height), w_(width), num_classes_(num_classes), split_(std::move(split)),
          provenance_(std::move(provenance)) {}

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    int64_t height() const { return h_; }
    int64_t width() const { return w_; }
    int64_t num_classes() const { return num_classes_; }
    const std::string& split() const { return split_; }
    const std::string& provenance() const { return provenance_; }

    void push(const Tensor<float>& image, int32_t label);

    std::span<const float> image_data(int64_t i) const;
    Tensor<float> image(int64_t i) const;
    Sample sample(int64_t i) const { return {image(i), label(i)}; }
    int32_t label(int64_t i) const { return labels_.at(static_cast<size_t>(i)); }
    const std::vector<int32_t>& labels() const { return labels_; }

    // [n,3,H,W] batch of the given rows.
    Tensor<float> batch(std::span<const int64_t> rows) const;
    // [n,num_classes] one-hot rows.
    Tensor<float> onehot(std::span<const int64_t> rows) const;

    uint64_t digest() const;

    void validate() const;

private:
    int64_t h_ = 0, w_ = 0;
    int64_t num_classes_ = 0;
    std::string split_;
    std::string provenance_;
    std::vector<float> pixels_;
    std::vector<int32_t> labels_;
};

struct SynthSpec {
    int64_t classes = 8;
    int64_t per_class = 500;
    int64_t image_size = 32;
    uint64_t seed = 1;
    // Offsets the class->cue assignment tables; two styles give visually
    // disjoint corpora (used for out-of-distribution evaluation).
    int64_t style = 0;
    // Probability that any single cue (shape, palette, texture) of a sample
    // is replaced by a random class's cue. No single cue is fully reliable,
    // so models benefit from reading several of them.
    double scramble_prob = 0.15;
    std::string split = "train";
};

// Procedurally rendered images whose class is encoded redundantly by shape,
// color palette and stripe texture, with per-sample geometry jitter and pixel
// noise. Pixels are quantized to the 8-bit grid so PNG and packed storage
// round-trip exactly.
Dataset generate_synthetic(const SynthSpec& spec);

enum class StorageFormat { Packed, Png };

// Writes manifest.csv + PNG files, or images.cumten + labels.cumten.
void save_dataset(const std::string& dir, const Dataset& ds, StorageFormat format);

// Loads a dataset directory (packed pair or manifest.csv) or an explicit
// manifest path. expected_classes 0 means "infer from the labels".
Dataset load_dataset(const std::string& path, int64_t expected_classes = 0);

}  // namespace cumix::data
