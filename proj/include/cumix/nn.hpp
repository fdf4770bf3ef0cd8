#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cumix/rng.hpp"
#include "cumix/tensor.hpp"

namespace cumix::nn {

// One layer block: conv -> [norm] -> [+residual] -> [act] -> [pool].
// in_channels 0 means "inferred from the previous block".
struct BlockSpec {
    int64_t out_channels = 0;
    int64_t in_channels = 0;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t pad = 1;
    bool norm = true;
    bool act = true;
    bool residual = false;
    int64_t pool = 1;  // max-pool window and stride after the block, 1 = none
};

struct NetworkSpec {
    std::string name;  // informational
    int64_t in_channels = 3;
    int64_t num_classes = 0;
    std::vector<BlockSpec> blocks;

    void validate() const;
    std::string canonical() const;
    static NetworkSpec parse(const std::string& text);

    // Reference architecture: five layer blocks (stem plus four stages) with
    // widths 16/32/64/128/128, 3x3 kernels, stride-2 downsampling by pooling.
    // Boundaries k=0..5 are eligible mix points; k=0 is the input.
    static NetworkSpec tiny4(int64_t num_classes);
};

template <typename T>
struct ConvParams {
    Tensor<T> w;
    Tensor<T> b;
};

template <typename T>
struct BnParams {
    Tensor<T> gamma;
    Tensor<T> beta;
    BnState<T> state;
};

template <typename T>
struct Block {
    ConvParams<T> conv;
    std::optional<ConvParams<T>> proj;  // residual projection (1x1), when needed
    std::optional<BnParams<T>> bn;
};

// Activations at boundary k: k=0 is the input image batch, k=i the output of
// block i.
template <typename T>
struct FeatureMap {
    Tensor<T> values;
    int64_t k = 0;
};

template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
    // Filter-normalized landscape directions group conv/fc weights per output
    // filter; vectors (biases, norm affine) count as a single filter.
    int64_t filter_count = 1;
};

template <typename T>
class Network {
public:
    NetworkSpec spec;
    std::vector<Block<T>> blocks;
    Tensor<T> fc_w;  // [D, num_classes]
    Tensor<T> fc_b;  // [num_classes]

    int64_t num_blocks() const { return static_cast<int64_t>(blocks.size()); }
    int64_t num_boundaries() const { return num_blocks() + 1; }
    int64_t latent_dim() const { return spec.blocks.back().out_channels; }

    std::vector<ParamRef<T>> params();
    int64_t param_count() const;

    // Expected activation shape at boundary k for a given input geometry.
    Shape boundary_shape(int64_t k, int64_t batch, int64_t h, int64_t w) const;
};

template <typename T>
Network<T> build(const NetworkSpec& spec, uint64_t init_seed);

// One forward context: binds the network parameters to a tape (or none) with
// a fixed norm-layer mode. forward_to / forward_from share the same parameter
// leaves, so gradients thread through a mixed feature map to both sources.
template <typename T>
class Pass {
public:
    Pass(Network<T>& net, Tape<T>* tape, bool training, bool update_stats,
         bool params_require_grad);

    FeatureMap<T> forward_to(const Tensor<T>& x, int64_t k);
    Tensor<T> forward_from(const FeatureMap<T>& h);
    Tensor<T> forward(const Tensor<T>& x);
    // Pooled pre-classifier features, one row per sample.
    Tensor<T> latent(const Tensor<T>& x);
    Tensor<T> head(const Tensor<T>& latent);

    // Tape leaf for parameter i (ordering matches net.params()).
    const Tensor<T>& param_leaf(size_t i) const { return leaves_.at(i); }
    size_t param_leaf_count() const { return leaves_.size(); }

private:
    Tensor<T> run_block(const Tensor<T>& x, int64_t i);
    const Tensor<T>& leaf_for(const Tensor<T>* p) const;

    Network<T>& net_;
    Tape<T>* tape_;
    bool training_;
    bool update_stats_;
    std::vector<const Tensor<T>*> param_ptrs_;
    std::vector<Tensor<T>> leaves_;
};

// Eval-mode conveniences (no tape, frozen statistics).
template <typename T>
Tensor<T> eval_logits(Network<T>& net, const Tensor<T>& x);
template <typename T>
Tensor<T> eval_latent(Network<T>& net, const Tensor<T>& x);

// Checkpoint: text header with the canonical spec and its hash, then named
// CUMTEN1 tensors (parameters and running statistics).
template <typename T>
void save_checkpoint(const std::string& path, Network<T>& net);
template <typename T>
Network<T> load_checkpoint(const std::string& path);

uint64_t spec_hash(const NetworkSpec& spec);

}  // namespace cumix::nn
