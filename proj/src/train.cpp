#include "cumix/train.hpp"

#include "cumix/transforms.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace cumix::train {

namespace {

using Clock = std::chrono::steady_clock;

nn::NetworkSpec spec_by_name(const std::string& name, int64_t classes) {
    if (name == "tiny-4") return nn::NetworkSpec::tiny4(classes);
    throw ConfigError("network: unknown spec name '" + name + "'");
}

double batch_accuracy(const Tensor<float>& logits, const Tensor<float>& onehot) {
    const int64_t b = logits.dim(0), n = logits.dim(1);
    const float* lv = logits.data().data();
    const float* yv = onehot.data().data();
    int64_t hits = 0;
    for (int64_t i = 0; i < b; ++i) {
        int64_t arg = 0, truth = 0;
        for (int64_t j = 1; j < n; ++j) {
            if (lv[i * n + j] > lv[i * n + arg]) arg = j;
            if (yv[i * n + j] > yv[i * n + truth]) truth = j;
        }
        hits += arg == truth;
    }
    return static_cast<double>(hits) / static_cast<double>(b);
}

void csv_num(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    os << buf;
}

}  // namespace

void RunConfig::validate() const {
    if (optim.epochs < 1) throw ConfigError("optim.epochs must be >= 1");
    if (optim.lr <= 0.0) throw ConfigError("optim.lr must be positive");
    if (optim.batch < 1) throw ConfigError("optim.batch must be >= 1");
    if (mixcfg.strategy != mix::Strategy::None && optim.batch < 2)
        throw ConfigError("optim.batch must be >= 2 when mixing is enabled");
    if (eval_cadence < 1) throw ConfigError("eval_cadence must be >= 1");
}

double lr_at(const OptimConfig& optim, int64_t epoch) {
    if (epoch < 0 || epoch >= optim.epochs)
        throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside 0.." +
                          std::to_string(optim.epochs - 1));
    if (optim.schedule == OptimConfig::Schedule::Step) {
        double lr = optim.lr;
        for (const auto m : optim.milestones)
            if (epoch >= m) lr *= optim.step_factor;
        return lr;
    }
    return optim.lr * 0.5 *
           (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(optim.epochs)));
}

void MetricLog::write_csv(std::ostream& os) const {
    os << "epoch,lr,train_loss,train_acc,val_loss,val_acc";
    for (int64_t k = 0; k < num_boundaries; ++k) os << ",mix_k" << k;
    os << "\n";
    for (const auto& r : rows) {
        os << r.epoch << ",";
        csv_num(os, r.lr);
        os << ",";
        csv_num(os, r.train_loss);
        os << ",";
        csv_num(os, r.train_acc);
        os << ",";
        csv_num(os, r.val_loss);
        os << ",";
        csv_num(os, r.val_acc);
        for (int64_t k = 0; k < num_boundaries; ++k)
            os << "," << (k < static_cast<int64_t>(r.layer_counts.size()) ? r.layer_counts[static_cast<size_t>(k)] : 0);
        os << "\n";
    }
}

void MetricLog::write_timing_csv(std::ostream& os) const {
    os << "epoch,wall_seconds\n";
    for (const auto& r : rows) {
        os << r.epoch << ",";
        csv_num(os, r.wall_seconds);
        os << "\n";
    }
}

std::vector<int64_t> MetricLog::total_layer_counts() const {
    std::vector<int64_t> total(static_cast<size_t>(num_boundaries), 0);
    for (const auto& r : rows)
        for (size_t k = 0; k < r.layer_counts.size() && k < total.size(); ++k)
            total[k] += r.layer_counts[k];
    return total;
}

TrainState::TrainState(const RunConfig& config, int64_t num_classes)
    : cfg(config),
      net(nn::build<float>(spec_by_name(config.network,
                                        config.num_classes > 0 ? config.num_classes : num_classes),
                           config.seed)),
      data_rng(Rng(config.seed).split(0x64617461)),
      mix_rng(Rng(config.seed).split(0x6d6978)) {
    cfg.validate();
    cfg.mixcfg.validate(net.num_boundaries());
    for (const auto& p : net.params()) momentum.push_back(Tensor<float>(p.tensor->shape()));
}

namespace {

void sgd_step(TrainState& state, nn::Pass<float>& pass, Tape<float>& tape, double lr) {
    auto params = state.net.params();
    const auto wd = static_cast<float>(state.cfg.optim.weight_decay);
    const auto mom = static_cast<float>(state.cfg.optim.momentum);
    const auto flr = static_cast<float>(lr);
    for (size_t i = 0; i < params.size(); ++i) {
        auto pdata = params[i].tensor->mutable_data();
        auto vdata = state.momentum[i].mutable_data();
        const float decay = 1.0f - flr * wd;
        if (tape.has_grad(pass.param_leaf(i))) {
            const auto g = tape.grad(pass.param_leaf(i));
            for (size_t j = 0; j < pdata.size(); ++j) {
                vdata[j] = mom * vdata[j] + g[j];
                pdata[j] = pdata[j] * decay - flr * vdata[j];
            }
        } else {
            for (size_t j = 0; j < pdata.size(); ++j) {
                vdata[j] = mom * vdata[j];
                pdata[j] = pdata[j] * decay - flr * vdata[j];
            }
        }
    }
}

void write_audit(std::ostream& audit, int64_t iteration, const mix::MixPlan& plan) {
    const int64_t pairs = plan.channels > 0
                              ? static_cast<int64_t>(plan.masks.size()) / plan.channels
                              : 0;
    for (int64_t p = 0; p < pairs; ++p) {
        char head[96];
        std::snprintf(head, sizeof(head), "%lld,%lld,%lld,%.9g,%lld,",
                      static_cast<long long>(iteration), static_cast<long long>(p),
                      static_cast<long long>(plan.k), plan.lambda,
                      static_cast<long long>(plan.n_mix));
        audit << head << plan.mask_hex(p) << "\n";
    }
}

}  // namespace

IterationStats train_iteration(TrainState& state, const Tensor<float>& images,
                               const Tensor<float>& labels, std::ostream* audit) {
    const int64_t b = images.dim(0);
    const auto& mc = state.cfg.mixcfg;
    if (mc.strategy != mix::Strategy::None && b < 2)
        throw std::invalid_argument("train_iteration: batch of 1 with mixing enabled");
    const double lr = lr_at(state.cfg.optim, state.epoch);

    IterationStats stats;
    Tape<float> tape;
    nn::Pass<float> pass(state.net, &tape, /*training=*/true, /*update_stats=*/true,
                         /*params_require_grad=*/true);

    Tensor<float> logits;
    Tensor<float> targets = labels;

    const bool do_mix =
        mc.strategy != mix::Strategy::None && state.mix_rng.uniform() < mc.prob;
    if (do_mix) {
        const double lambda = mix::sample_lambda(mc.alpha, state.mix_rng);
        const int64_t k = mix::sample_layer(mc.layer_set, state.mix_rng);
        stats.k = k;
        stats.lambda = lambda;
        stats.mixed = true;
        if (k == 0) {
            const auto perm = state.mix_rng.permutation(static_cast<int32_t>(b));
            if (mc.input_kind == mix::InputMixKind::None) {
                logits = pass.forward(images);
                stats.mixed = false;
            } else {
                Tensor<float> xp = index_select_batch(images, perm);
                double label_lambda = lambda;
                Tensor<float> mixed;
                if (mc.input_kind == mix::InputMixKind::CutMix) {
                    auto cm = mix::cutmix(images, xp, lambda, state.mix_rng);
                    mixed = std::move(cm.images);
                    label_lambda = cm.adjusted_lambda;
                } else {
                    mixed = mix::input_mixup(images, xp, lambda);
                }
                Tensor<float> yp = index_select_batch(labels, perm);
                Tensor<float> ymix(labels.shape());
                kern::ew_axpby<float>(labels.numel(), static_cast<float>(label_lambda),
                                      labels.data().data(), static_cast<float>(1.0 - label_lambda),
                                      yp.data().data(), ymix.mutable_data().data());
                targets = std::move(ymix);
                logits = pass.forward(mixed);
                if (audit) {
                    mix::MixPlan plan;
                    plan.lambda = label_lambda;
                    plan.k = 0;
                    plan.shuffled_index.assign(perm.begin(), perm.end());
                    write_audit(*audit, state.iteration, plan);
                }
            }
        } else {
            auto fm = pass.forward_to(images, k);
            auto mixed = mc.strategy == mix::Strategy::Catchup
                             ? mix::catchup_mix_batch(fm.values, labels, lambda, state.mix_rng)
                             : mix::random_channel_mix(fm.values, labels, lambda, state.mix_rng);
            mixed.plan.k = k;
            targets = std::move(mixed.labels);
            logits = pass.forward_from({std::move(mixed.features), k});
            if (audit) write_audit(*audit, state.iteration, mixed.plan);
        }
    } else {
        logits = pass.forward(images);
    }

    Tensor<float> loss = softmax_cross_entropy(logits, targets);
    tape.backward(loss);
    sgd_step(state, pass, tape, lr);

    stats.loss = loss.item();
    stats.acc = batch_accuracy(logits, labels);
    state.iteration++;
    return stats;
}

EvalResult evaluate(nn::Network<float>& net, const data::Dataset& ds, int64_t batch) {
    if (ds.size() == 0) throw ConfigError("evaluate: empty dataset");
    EvalResult res;
    int64_t done = 0;
    while (done < ds.size()) {
        const int64_t take = std::min<int64_t>(batch, ds.size() - done);
        std::vector<int64_t> rows(static_cast<size_t>(take));
        std::iota(rows.begin(), rows.end(), done);
        Tensor<float> x = ds.batch(rows);
        Tensor<float> y = ds.onehot(rows);
        Tensor<float> logits = nn::eval_logits(net, x);
        Tensor<float> loss = softmax_cross_entropy(logits, y);
        res.loss += loss.item() * static_cast<double>(take);
        res.acc += batch_accuracy(logits, y) * static_cast<double>(take);
        done += take;
    }
    res.loss /= static_cast<double>(ds.size());
    res.acc /= static_cast<double>(ds.size());
    return res;
}

RunResult run(const RunConfig& cfg, const data::Dataset& train_ds, const data::Dataset& val_ds,
              std::ostream* audit) {
    cfg.validate();
    if (train_ds.size() == 0) throw ConfigError("run: empty train split");
    TrainState state(cfg, train_ds.num_classes());
    if (state.net.spec.in_channels != 3)
        throw ConfigError("run: dataset channel count does not match the network");
    if (state.net.spec.num_classes != train_ds.num_classes())
        throw ConfigError("run: network has " + std::to_string(state.net.spec.num_classes) +
                          " classes, dataset has " + std::to_string(train_ds.num_classes()));

    RunResult result;
    result.log.num_boundaries = state.net.num_boundaries();
    Rng aug_rng = Rng(cfg.seed).split(0x617567);

    int64_t total_iters = 0;
    double total_iter_seconds = 0.0;

    for (int64_t epoch = 0; epoch < cfg.optim.epochs; ++epoch) {
        state.epoch = epoch;
        EpochRow row;
        row.epoch = epoch;
        row.lr = lr_at(cfg.optim, epoch);
        row.layer_counts.assign(static_cast<size_t>(state.net.num_boundaries()), 0);

        const auto order32 = state.data_rng.permutation(static_cast<int32_t>(train_ds.size()));
        double loss_sum = 0.0, acc_sum = 0.0;
        int64_t iters = 0;
        const auto t0 = Clock::now();
        for (int64_t start = 0; start + cfg.optim.batch <= train_ds.size();
             start += cfg.optim.batch) {
            Tensor<float> x({cfg.optim.batch, 3, train_ds.height(), train_ds.width()});
            float* xv = x.mutable_data().data();
            const int64_t stride = 3 * train_ds.height() * train_ds.width();
            std::vector<int64_t> rows(static_cast<size_t>(cfg.optim.batch));
            for (int64_t i = 0; i < cfg.optim.batch; ++i)
                rows[static_cast<size_t>(i)] = order32[static_cast<size_t>(start + i)];
            for (int64_t i = 0; i < cfg.optim.batch; ++i) {
                Tensor<float> img = train_ds.image(rows[static_cast<size_t>(i)]);
                if (cfg.augment) img = data::standard_augment(img, aug_rng);
                std::copy(img.data().begin(), img.data().end(), xv + i * stride);
            }
            Tensor<float> y = train_ds.onehot(rows);
            const auto stats = train_iteration(state, x, y, audit);
            loss_sum += stats.loss;
            acc_sum += stats.acc;
            if (stats.k >= 0) row.layer_counts[static_cast<size_t>(stats.k)]++;
            ++iters;
        }
        const auto t1 = Clock::now();
        row.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        total_iter_seconds += row.wall_seconds;
        total_iters += iters;

        row.train_loss = iters ? loss_sum / static_cast<double>(iters) : 0.0;
        row.train_acc = iters ? acc_sum / static_cast<double>(iters) : 0.0;

        if ((epoch + 1) % cfg.eval_cadence == 0 || epoch + 1 == cfg.optim.epochs) {
            const auto ev = evaluate(state.net, val_ds, cfg.optim.batch);
            row.val_loss = ev.loss;
            row.val_acc = ev.acc;
            // Best-validation checkpoint; ties go to the latest epoch.
            if (result.best_epoch < 0 || ev.acc >= result.best_val_acc) {
                result.best_val_acc = ev.acc;
                result.best_epoch = epoch;
                result.best = state.net;
                for (auto& p : result.best.params()) {
                    Tensor<float> copy(p.tensor->shape(),
                                       std::vector<float>(p.tensor->data().begin(),
                                                          p.tensor->data().end()));
                    *p.tensor = std::move(copy);
                }
            }
        }
        result.log.rows.push_back(std::move(row));
    }
    result.mean_iter_seconds = total_iters ? total_iter_seconds / static_cast<double>(total_iters) : 0.0;
    return result;
}

}  // namespace cumix::train
