#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "cumix/rng.hpp"
#include "cumix/tensor.hpp"

namespace cumix::mix {

enum class Strategy { None, Catchup, RandomChannel };
enum class InputMixKind { None, InputMixup, CutMix };

struct MixConfig {
    double alpha = 10.0;                          // Beta concentration
    std::vector<int64_t> layer_set = {0, 1, 2, 3, 4, 5};
    InputMixKind input_kind = InputMixKind::CutMix;  // applied when k = 0
    Strategy strategy = Strategy::Catchup;
    double prob = 1.0;                            // per-iteration mix probability

    void validate(int64_t num_boundaries) const;
};

// Per-channel activation-map l2 norms of one sample; all entries >= 0.
struct InfluenceVector {
    std::vector<double> values;
};

// Difference of sum-normalized influences; entries sum to ~0. A positive
// entry means the channel matters more to the source than to the target.
struct RelativeInfluence {
    std::vector<double> values;
};

// One iteration's mixing decision. masks holds one row per sample (B x C);
// a 1 keeps the source channel, a 0 substitutes the paired sample's.
struct MixPlan {
    double lambda = 1.0;
    int64_t k = 0;
    std::vector<int32_t> shuffled_index;
    int64_t n_mix = 0;
    int64_t channels = 0;
    std::vector<uint8_t> masks;

    std::string mask_hex(int64_t pair) const;
};

double sample_lambda(double alpha, Rng& rng);
int64_t sample_layer(const std::vector<int64_t>& layer_set, Rng& rng);

// FI over a single sample's [C,H,W] (or [C,HW]) activation block.
template <typename T>
InfluenceVector filter_influence(const Tensor<T>& h_sample);

// Empty when either influence sum is zero (degenerate activation block); the
// batch path then falls back to an all-zero RFI.
std::optional<RelativeInfluence> relative_filter_influence(const InfluenceVector& fi,
                                                           const InfluenceVector& fi_target);

// Retains the floor(lambda*C) channels with the lowest RFI; ties broken by
// the lower channel index. Returns the mask and N_mix.
std::pair<std::vector<uint8_t>, int64_t> build_mask(const RelativeInfluence& rfi, double lambda);

// One mask across the batch: out = M (*) h + (I-M) (*) h' channel-wise. The
// mask is a constant; gradients flow to both h and h'.
template <typename T>
Tensor<T> mix_features(const Tensor<T>& h, const Tensor<T>& hp, const std::vector<uint8_t>& mask);

template <typename T>
std::vector<T> mix_labels(const std::vector<T>& y, const std::vector<T>& yp, double lambda);

template <typename T>
struct MixResult {
    Tensor<T> features;  // tape intact when h was recorded
    Tensor<T> labels;    // interpolated soft labels, detached
    MixPlan plan;
};

// Batched procedure: draws one batch permutation, then per pair (i, perm(i))
// computes FI, RFI and the mask, and mixes. One lambda is shared by the batch.
template <typename T>
MixResult<T> catchup_mix_batch(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                               Rng& rng);

// Ablation baseline: identical pipeline but the retained channels are chosen
// uniformly at random per pair.
template <typename T>
MixResult<T> random_channel_mix(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                Rng& rng);

// Variants of the batched procedures with an externally chosen pairing, used
// by tests and by input-level mixing to share one permutation.
template <typename T>
MixResult<T> catchup_mix_batch_with(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                    std::vector<int32_t> perm);
template <typename T>
MixResult<T> random_channel_mix_with(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                     std::vector<int32_t> perm, Rng& rng);

template <typename T>
Tensor<T> input_mixup(const Tensor<T>& x, const Tensor<T>& xp, double lambda);

struct CutBox {
    int64_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    int64_t area() const { return (x2 - x1) * (y2 - y1); }
};

// Canonical box construction: side ratios sqrt(1-lambda), uniform center,
// clipped to the image.
CutBox cutmix_box(int64_t h, int64_t w, double lambda, int64_t cx, int64_t cy);

template <typename T>
struct CutMixResult {
    Tensor<T> images;
    double adjusted_lambda = 1.0;  // 1 - patch area / image area
};

template <typename T>
CutMixResult<T> apply_cutmix(const Tensor<T>& x, const Tensor<T>& xp, const CutBox& box);

template <typename T>
CutMixResult<T> cutmix(const Tensor<T>& x, const Tensor<T>& xp, double lambda, Rng& rng);

}  // namespace cumix::mix
