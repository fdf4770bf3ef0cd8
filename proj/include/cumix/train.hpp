#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cumix/data.hpp"
#include "cumix/mix.hpp"
#include "cumix/nn.hpp"

namespace cumix::train {

struct OptimConfig {
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    enum class Schedule { Step, Cosine } schedule = Schedule::Cosine;
    std::vector<int64_t> milestones = {30, 45};
    double step_factor = 0.1;
    int64_t epochs = 60;
    int64_t batch = 64;
};

struct RunConfig {
    std::string network = "tiny-4";
    int64_t num_classes = 0;  // 0 = take from the dataset
    mix::MixConfig mixcfg;
    OptimConfig optim;
    uint64_t seed = 1;
    std::string data_dir;
    int64_t eval_cadence = 1;
    bool augment = true;
    bool audit_log = false;

    void validate() const;
};

// lr for a given epoch: step decay at the milestones or cosine from lr to 0.
double lr_at(const OptimConfig& optim, int64_t epoch);

struct EpochRow {
    int64_t epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_loss = 0.0;
    double val_acc = 0.0;
    double wall_seconds = 0.0;  // measurement; kept out of metrics.csv
    std::vector<int64_t> layer_counts;
};

struct MetricLog {
    std::vector<EpochRow> rows;
    int64_t num_boundaries = 0;

    // Deterministic columns only, so identical config+seed reruns are
    // byte-identical. Wall time goes to the separate timing CSV.
    void write_csv(std::ostream& os) const;
    void write_timing_csv(std::ostream& os) const;
    std::vector<int64_t> total_layer_counts() const;
};

// Momentum SGD with decoupled weight decay: v <- m*v + g and
// p <- p*(1 - lr*wd) - lr*v, so a zero-gradient step shrinks every parameter
// by exactly (1 - lr*wd).
struct TrainState {
    RunConfig cfg;
    nn::Network<float> net;
    std::vector<Tensor<float>> momentum;
    int64_t epoch = 0;
    int64_t iteration = 0;
    Rng data_rng;
    Rng mix_rng;

    TrainState(const RunConfig& config, int64_t num_classes);
};

struct IterationStats {
    double loss = 0.0;
    double acc = 0.0;    // against the un-mixed labels
    int64_t k = -1;      // sampled boundary, -1 when no mix decision was made
    bool mixed = false;
    double lambda = 1.0;
};

// One optimization step: sample lambda and k, mix per config, forward,
// soft-label cross entropy, backward, SGD update.
IterationStats train_iteration(TrainState& state, const Tensor<float>& images,
                               const Tensor<float>& labels, std::ostream* audit = nullptr);

struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
};

EvalResult evaluate(nn::Network<float>& net, const data::Dataset& ds, int64_t batch);

struct RunResult {
    nn::Network<float> best;
    double best_val_acc = 0.0;
    int64_t best_epoch = -1;
    MetricLog log;
    double mean_iter_seconds = 0.0;
};

RunResult run(const RunConfig& cfg, const data::Dataset& train_ds, const data::Dataset& val_ds,
              std::ostream* audit = nullptr);

}  // namespace cumix::train
