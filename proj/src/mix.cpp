#include "cumix/mix.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cumix/kernels.hpp"

namespace cumix::mix {

void MixConfig::validate(int64_t num_boundaries) const {
    if (alpha <= 0.0) throw ConfigError("mix: alpha must be positive");
    if (prob < 0.0 || prob > 1.0) throw ConfigError("mix: prob must be in [0,1]");
    if (strategy != Strategy::None) {
        if (layer_set.empty()) throw ConfigError("mix: layer set is empty");
        for (const auto k : layer_set)
            if (k < 0 || k >= num_boundaries)
                throw ConfigError("mix: layer " + std::to_string(k) + " outside boundaries 0.." +
                                  std::to_string(num_boundaries - 1));
    }
}

std::string MixPlan::mask_hex(int64_t pair) const {
    if (channels == 0) return "";
    std::string out;
    const uint8_t* row = masks.data() + pair * channels;
    for (int64_t c = 0; c < channels; c += 4) {
        int v = 0;
        for (int64_t j = 0; j < 4 && c + j < channels; ++j)
            if (row[c + j]) v |= 1 << (3 - j);
        out.push_back("0123456789abcdef"[v]);
    }
    return out;
}

double sample_lambda(double alpha, Rng& rng) {
    if (alpha <= 0.0) throw ConfigError("sample_lambda: alpha must be positive");
    return rng.beta(alpha, alpha);
}

int64_t sample_layer(const std::vector<int64_t>& layer_set, Rng& rng) {
    if (layer_set.empty()) throw ConfigError("sample_layer: empty layer set");
    return layer_set[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(layer_set.size())))];
}

namespace {

// FI rows for a [B,C,HW] block; accumulation order matches the single-sample
// path so the batched procedure is bit-compatible with the reference one.
template <typename T>
std::vector<double> influence_rows(const T* values, int64_t rows, int64_t hw) {
    std::vector<T> sq(static_cast<size_t>(rows));
    kern::row_sqnorms<T>(rows, hw, values, sq.data());
    std::vector<double> fi(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r)
        fi[static_cast<size_t>(r)] = std::sqrt(static_cast<double>(sq[static_cast<size_t>(r)]));
    return fi;
}

std::vector<uint8_t> lowest_rfi_mask(const std::vector<double>& rfi, int64_t n_mix) {
    const auto c = static_cast<int64_t>(rfi.size());
    std::vector<int32_t> order(static_cast<size_t>(c));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int32_t a, int32_t b) {
        const double va = rfi[static_cast<size_t>(a)], vb = rfi[static_cast<size_t>(b)];
        if (va != vb) return va < vb;
        return a < b;
    });
    std::vector<uint8_t> mask(static_cast<size_t>(c), 0);
    for (int64_t i = 0; i < n_mix; ++i) mask[static_cast<size_t>(order[static_cast<size_t>(i)])] = 1;
    return mask;
}

int64_t n_mix_of(double lambda, int64_t channels) {
    return static_cast<int64_t>(std::floor(lambda * static_cast<double>(channels)));
}

}  // namespace

template <typename T>
InfluenceVector filter_influence(const Tensor<T>& h_sample) {
    if (h_sample.rank() < 1) throw ShapeError("filter_influence: scalar input");
    const int64_t c = h_sample.dim(0);
    const int64_t hw = h_sample.numel() / c;
    for (const T v : h_sample.data())
        if (!std::isfinite(static_cast<double>(v)))
            throw std::invalid_argument("filter_influence: non-finite activation value");
    return {influence_rows(h_sample.data().data(), c, hw)};
}

std::optional<RelativeInfluence> relative_filter_influence(const InfluenceVector& fi,
                                                           const InfluenceVector& fi_target) {
    if (fi.values.size() != fi_target.values.size())
        throw std::invalid_argument("relative_filter_influence: length mismatch, " +
                                    std::to_string(fi.values.size()) + " vs " +
                                    std::to_string(fi_target.values.size()));
    const double sum_src = std::accumulate(fi.values.begin(), fi.values.end(), 0.0);
    const double sum_tgt = std::accumulate(fi_target.values.begin(), fi_target.values.end(), 0.0);
    if (sum_src == 0.0 || sum_tgt == 0.0) return std::nullopt;
    RelativeInfluence rfi;
    rfi.values.resize(fi.values.size());
    for (size_t i = 0; i < fi.values.size(); ++i)
        rfi.values[i] = fi.values[i] / sum_src - fi_target.values[i] / sum_tgt;
    return rfi;
}

std::pair<std::vector<uint8_t>, int64_t> build_mask(const RelativeInfluence& rfi, double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("build_mask: lambda " + std::to_string(lambda) +
                                    " outside [0,1]");
    const auto c = static_cast<int64_t>(rfi.values.size());
    const int64_t n_mix = n_mix_of(lambda, c);
    return {lowest_rfi_mask(rfi.values, n_mix), n_mix};
}

template <typename T>
Tensor<T> mix_features(const Tensor<T>& h, const Tensor<T>& hp, const std::vector<uint8_t>& mask) {
    if (h.shape() != hp.shape()) shape_fail("mix_features", h.shape(), hp.shape());
    if (h.rank() < 2) throw ShapeError("mix_features: expected [B,C,...], got " + shape_str(h.shape()));
    const int64_t b = h.dim(0), c = h.dim(1);
    if (static_cast<int64_t>(mask.size()) != c)
        throw std::invalid_argument("mix_features: mask has " + std::to_string(mask.size()) +
                                    " entries for " + std::to_string(c) + " channels");
    std::vector<uint8_t> tiled(static_cast<size_t>(b * c));
    for (int64_t i = 0; i < b; ++i)
        std::copy(mask.begin(), mask.end(), tiled.begin() + i * c);
    return channel_mix(h, hp, tiled);
}

template <typename T>
std::vector<T> mix_labels(const std::vector<T>& y, const std::vector<T>& yp, double lambda) {
    if (y.size() != yp.size())
        throw std::invalid_argument("mix_labels: length mismatch, " + std::to_string(y.size()) +
                                    " vs " + std::to_string(yp.size()));
    std::vector<T> out(y.size());
    kern::ew_axpby<T>(static_cast<int64_t>(y.size()), static_cast<T>(lambda), y.data(),
                      static_cast<T>(1.0 - lambda), yp.data(), out.data());
    return out;
}

namespace {

template <typename T>
MixResult<T> mix_batch_impl(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                            std::vector<int32_t> perm, Rng* random_mask_rng) {
    if (h.rank() < 2) throw ShapeError("mix: expected [B,C,...], got " + shape_str(h.shape()));
    const int64_t b = h.dim(0), c = h.dim(1);
    if (b < 2) throw std::invalid_argument("mix: batch of " + std::to_string(b) + ", need >= 2");
    if (labels.rank() != 2 || labels.dim(0) != b)
        throw ShapeError("mix: labels " + shape_str(labels.shape()) + " do not pair with batch of " +
                         std::to_string(b));
    const int64_t hw = h.numel() / (b * c);
    const int64_t n_mix = n_mix_of(lambda, c);

    MixPlan plan;
    plan.lambda = lambda;
    plan.shuffled_index = perm;
    plan.n_mix = n_mix;
    plan.channels = c;
    plan.masks.resize(static_cast<size_t>(b * c));

    if (random_mask_rng == nullptr) {
        const std::vector<double> fi = influence_rows(h.data().data(), b * c, hw);
        std::vector<double> rfi(static_cast<size_t>(c));
        for (int64_t i = 0; i < b; ++i) {
            const double* fi_src = fi.data() + i * c;
            const double* fi_tgt = fi.data() + static_cast<int64_t>(perm[static_cast<size_t>(i)]) * c;
            const double sum_src = std::accumulate(fi_src, fi_src + c, 0.0);
            const double sum_tgt = std::accumulate(fi_tgt, fi_tgt + c, 0.0);
            if (sum_src == 0.0 || sum_tgt == 0.0) {
                std::fill(rfi.begin(), rfi.end(), 0.0);
            } else {
                for (int64_t j = 0; j < c; ++j)
                    rfi[static_cast<size_t>(j)] = fi_src[j] / sum_src - fi_tgt[j] / sum_tgt;
            }
            const auto mask = lowest_rfi_mask(rfi, n_mix);
            std::copy(mask.begin(), mask.end(), plan.masks.begin() + i * c);
        }
    } else {
        for (int64_t i = 0; i < b; ++i) {
            const auto order = random_mask_rng->permutation(static_cast<int32_t>(c));
            for (int64_t j = 0; j < n_mix; ++j)
                plan.masks[static_cast<size_t>(i * c + order[static_cast<size_t>(j)])] = 1;
        }
    }

    Tensor<T> hp = index_select_batch(h, perm);
    Tensor<T> mixed = channel_mix(h, hp, plan.masks);

    const int64_t n_classes = labels.dim(1);
    Tensor<T> y_mix({b, n_classes});
    const T* yv = labels.data().data();
    T* ym = y_mix.mutable_data().data();
    for (int64_t i = 0; i < b; ++i) {
        const T* src = yv + i * n_classes;
        const T* tgt = yv + static_cast<int64_t>(perm[static_cast<size_t>(i)]) * n_classes;
        kern::ew_axpby<T>(n_classes, static_cast<T>(lambda), src, static_cast<T>(1.0 - lambda),
                          tgt, ym + i * n_classes);
    }
    return {std::move(mixed), std::move(y_mix), std::move(plan)};
}

}  // namespace

template <typename T>
MixResult<T> catchup_mix_batch_with(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                    std::vector<int32_t> perm) {
    return mix_batch_impl(h, labels, lambda, std::move(perm), nullptr);
}

template <typename T>
MixResult<T> catchup_mix_batch(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                               Rng& rng) {
    if (h.rank() < 1 || h.dim(0) < 2)
        throw std::invalid_argument("catchup_mix_batch: need a batch of >= 2");
    return mix_batch_impl(h, labels, lambda, rng.permutation(static_cast<int32_t>(h.dim(0))),
                          nullptr);
}

template <typename T>
MixResult<T> random_channel_mix_with(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                     std::vector<int32_t> perm, Rng& rng) {
    return mix_batch_impl(h, labels, lambda, std::move(perm), &rng);
}

template <typename T>
MixResult<T> random_channel_mix(const Tensor<T>& h, const Tensor<T>& labels, double lambda,
                                Rng& rng) {
    if (h.rank() < 1 || h.dim(0) < 2)
        throw std::invalid_argument("random_channel_mix: need a batch of >= 2");
    return mix_batch_impl(h, labels, lambda, rng.permutation(static_cast<int32_t>(h.dim(0))),
                          &rng);
}

template <typename T>
Tensor<T> input_mixup(const Tensor<T>& x, const Tensor<T>& xp, double lambda) {
    if (x.shape() != xp.shape()) shape_fail("input_mixup", x.shape(), xp.shape());
    Tensor<T> out(x.shape());
    kern::ew_axpby<T>(x.numel(), static_cast<T>(lambda), x.data().data(),
                      static_cast<T>(1.0 - lambda), xp.data().data(), out.mutable_data().data());
    return out;
}

CutBox cutmix_box(int64_t h, int64_t w, double lambda, int64_t cx, int64_t cy) {
    const double cut_rat = std::sqrt(1.0 - lambda);
    const auto cut_w = static_cast<int64_t>(static_cast<double>(w) * cut_rat);
    const auto cut_h = static_cast<int64_t>(static_cast<double>(h) * cut_rat);
    CutBox box;
    box.x1 = std::clamp<int64_t>(cx - cut_w / 2, 0, w);
    box.y1 = std::clamp<int64_t>(cy - cut_h / 2, 0, h);
    box.x2 = std::clamp<int64_t>(cx + (cut_w + 1) / 2, 0, w);
    box.y2 = std::clamp<int64_t>(cy + (cut_h + 1) / 2, 0, h);
    return box;
}

template <typename T>
CutMixResult<T> apply_cutmix(const Tensor<T>& x, const Tensor<T>& xp, const CutBox& box) {
    if (x.shape() != xp.shape()) shape_fail("cutmix", x.shape(), xp.shape());
    if (x.rank() != 4) throw ShapeError("cutmix: expected [B,C,H,W], got " + shape_str(x.shape()));
    const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> out(x.shape(), std::vector<T>(x.data().begin(), x.data().end()));
    T* ov = out.mutable_data().data();
    const T* pv = xp.data().data();
    for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t ci = 0; ci < c; ++ci)
            for (int64_t y = box.y1; y < box.y2; ++y) {
                const int64_t off = ((bi * c + ci) * h + y) * w;
                for (int64_t xx = box.x1; xx < box.x2; ++xx) ov[off + xx] = pv[off + xx];
            }
    CutMixResult<T> res;
    res.images = std::move(out);
    res.adjusted_lambda = 1.0 - static_cast<double>(box.area()) / static_cast<double>(h * w);
    return res;
}

template <typename T>
CutMixResult<T> cutmix(const Tensor<T>& x, const Tensor<T>& xp, double lambda, Rng& rng) {
    if (x.rank() != 4) throw ShapeError("cutmix: expected [B,C,H,W], got " + shape_str(x.shape()));
    const int64_t h = x.dim(2), w = x.dim(3);
    if (h < 1 || w < 1) throw ShapeError("cutmix: empty image");
    const auto cx = rng.uniform_int(w);
    const auto cy = rng.uniform_int(h);
    return apply_cutmix(x, xp, cutmix_box(h, w, lambda, cx, cy));
}

#define CUMIX_INSTANTIATE_MIX(T)                                                                  \
    template InfluenceVector filter_influence<T>(const Tensor<T>&);                               \
    template Tensor<T> mix_features<T>(const Tensor<T>&, const Tensor<T>&,                        \
                                       const std::vector<uint8_t>&);                              \
    template std::vector<T> mix_labels<T>(const std::vector<T>&, const std::vector<T>&, double);  \
    template MixResult<T> catchup_mix_batch<T>(const Tensor<T>&, const Tensor<T>&, double, Rng&); \
    template MixResult<T> catchup_mix_batch_with<T>(const Tensor<T>&, const Tensor<T>&, double,   \
                                                    std::vector<int32_t>);                        \
    template MixResult<T> random_channel_mix<T>(const Tensor<T>&, const Tensor<T>&, double,       \
                                                Rng&);                                            \
    template MixResult<T> random_channel_mix_with<T>(const Tensor<T>&, const Tensor<T>&, double,  \
                                                     std::vector<int32_t>, Rng&);                 \
    template Tensor<T> input_mixup<T>(const Tensor<T>&, const Tensor<T>&, double);                \
    template CutMixResult<T> apply_cutmix<T>(const Tensor<T>&, const Tensor<T>&, const CutBox&);  \
    template CutMixResult<T> cutmix<T>(const Tensor<T>&, const Tensor<T>&, double, Rng&);

CUMIX_INSTANTIATE_MIX(float)
CUMIX_INSTANTIATE_MIX(double)

#undef CUMIX_INSTANTIATE_MIX

}  // namespace cumix::mix
