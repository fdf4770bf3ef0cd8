#include "cumix/eval.hpp"

#include <array>
#include <functional>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace cumix::eval {

namespace {

std::vector<int64_t> iota_rows(int64_t from, int64_t count) {
    std::vector<int64_t> rows(static_cast<size_t>(count));
    std::iota(rows.begin(), rows.end(), from);
    return rows;
}

int64_t argmax_row(const float* row, int64_t n) {
    int64_t arg = 0;
    for (int64_t j = 1; j < n; ++j)
        if (row[j] > row[arg]) arg = j;
    return arg;
}

double accuracy_of_logits(const Tensor<float>& logits, const data::Dataset& ds,
                          const std::vector<int64_t>& rows) {
    const int64_t n = logits.dim(1);
    const float* lv = logits.data().data();
    int64_t hits = 0;
    for (size_t i = 0; i < rows.size(); ++i)
        hits += argmax_row(lv + static_cast<int64_t>(i) * n, n) == ds.label(rows[i]);
    return static_cast<double>(hits);
}

using ImageFn = std::function<Tensor<float>(const Tensor<float>&, int64_t)>;

double accuracy_with(nn::Network<float>& net, const data::Dataset& ds, int64_t batch,
                     const ImageFn& transform) {
    if (ds.size() == 0) throw ConfigError("accuracy: empty dataset");
    double hits = 0.0;
    for (int64_t start = 0; start < ds.size(); start += batch) {
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        const auto rows = iota_rows(start, take);
        Tensor<float> x({take, 3, ds.height(), ds.width()});
        float* xv = x.mutable_data().data();
        const int64_t stride = 3 * ds.height() * ds.width();
        for (int64_t i = 0; i < take; ++i) {
            Tensor<float> img = ds.image(rows[static_cast<size_t>(i)]);
            if (transform) img = transform(img, rows[static_cast<size_t>(i)]);
            std::copy(img.data().begin(), img.data().end(), xv + i * stride);
        }
        Tensor<float> logits = nn::eval_logits(net, x);
        hits += accuracy_of_logits(logits, ds, rows);
    }
    return hits / static_cast<double>(ds.size());
}

}  // namespace

Tensor<float> fgsm(nn::Network<float>& net, const Tensor<float>& x, const Tensor<float>& y_onehot,
                   double epsilon) {
    if (epsilon < 0.0) throw ConfigError("fgsm: epsilon must be >= 0");
    Tape<float> tape;
    nn::Pass<float> pass(net, &tape, /*training=*/false, /*update_stats=*/false,
                         /*params_require_grad=*/false);
    Tensor<float> xleaf = tape.leaf(x, /*requires_grad=*/true);
    Tensor<float> loss = softmax_cross_entropy(pass.forward(xleaf), y_onehot);
    tape.backward(loss);
    const auto g = tape.grad(xleaf);
    Tensor<float> adv(x.shape());
    float* av = adv.mutable_data().data();
    const float* xv = x.data().data();
    const auto eps = static_cast<float>(epsilon);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const float s = g[static_cast<size_t>(i)] > 0.0f ? 1.0f
                        : g[static_cast<size_t>(i)] < 0.0f ? -1.0f
                                                           : 0.0f;
        av[i] = std::clamp(xv[i] + eps * s, 0.0f, 1.0f);
    }
    return adv;
}

double accuracy(nn::Network<float>& net, const data::Dataset& ds, int64_t batch) {
    return accuracy_with(net, ds, batch, nullptr);
}

double accuracy_fgsm(nn::Network<float>& net, const data::Dataset& ds, double epsilon,
                     int64_t batch) {
    if (ds.size() == 0) throw ConfigError("accuracy_fgsm: empty dataset");
    double hits = 0.0;
    for (int64_t start = 0; start < ds.size(); start += batch) {
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        const auto rows = iota_rows(start, take);
        Tensor<float> x = ds.batch(rows);
        Tensor<float> y = ds.onehot(rows);
        Tensor<float> adv = fgsm(net, x, y, epsilon);
        Tensor<float> logits = nn::eval_logits(net, adv);
        hits += accuracy_of_logits(logits, ds, rows);
    }
    return hits / static_cast<double>(ds.size());
}

double accuracy_deformed(nn::Network<float>& net, const data::Dataset& ds,
                         const data::DeformSpec& spec, uint64_t eval_seed, int64_t batch) {
    Rng rng = Rng(eval_seed).split(fnv1a(data::deform_label(spec)));
    // One transform parameter per image, drawn in index order so the result
    // does not depend on the batch size.
    std::vector<double> magnitude(static_cast<size_t>(ds.size()), spec.magnitude);
    if (spec.kind != data::DeformSpec::Kind::Zoom)
        for (auto& m : magnitude) m = rng.uniform(-spec.magnitude, spec.magnitude);
    return accuracy_with(net, ds, batch, [&](const Tensor<float>& img, int64_t row) {
        data::DeformSpec per{spec.kind, magnitude[static_cast<size_t>(row)]};
        return data::deform(img, per);
    });
}

double accuracy_corrupted(nn::Network<float>& net, const data::Dataset& ds,
                          const data::CorruptionSpec& spec, uint64_t eval_seed, int64_t batch) {
    Rng base = Rng(eval_seed).split(fnv1a(data::corruption_label(spec.kind)) ^
                                    static_cast<uint64_t>(spec.severity));
    return accuracy_with(net, ds, batch, [&](const Tensor<float>& img, int64_t row) {
        Rng rng = base.split(static_cast<uint64_t>(row));
        return data::corrupt(img, spec, rng);
    });
}

std::vector<data::DeformSpec> deformation_grid() {
    using K = data::DeformSpec::Kind;
    return {{K::Rotate, 20.0}, {K::Rotate, 40.0}, {K::Shear, 28.6}, {K::Shear, 57.2},
            {K::Zoom, 60.0},   {K::Zoom, 80.0},   {K::Zoom, 120.0}, {K::Zoom, 140.0}};
}

std::vector<data::CorruptionSpec::Kind> corruption_kinds() {
    using K = data::CorruptionSpec::Kind;
    return {K::GaussianNoise, K::GaussianBlur, K::Brightness, K::Contrast};
}

double mean_corruption_error(const std::vector<std::vector<double>>& error_matrix) {
    double sum = 0.0;
    int64_t cells = 0;
    for (const auto& row : error_matrix) {
        for (const auto e : row) {
            sum += e;
            ++cells;
        }
    }
    if (cells == 0) throw ConfigError("mean_corruption_error: empty matrix");
    return sum / static_cast<double>(cells);
}

void RobustnessReport::write_csv(std::ostream& os) const {
    auto num = [&](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.9g", v);
        os << buf;
    };
    os << "metric,value\n";
    os << "clean_acc,";
    num(clean_acc);
    os << "\n";
    if (fgsm_acc >= 0.0) {
        os << "fgsm_epsilon,";
        num(fgsm_epsilon);
        os << "\nfgsm_acc,";
        num(fgsm_acc);
        os << "\n";
    }
    for (const auto& [name, acc] : deform_accs) {
        os << "deform_" << name << ",";
        num(acc);
        os << "\n";
    }
    for (size_t k = 0; k < corruption_names.size(); ++k)
        for (size_t s = 0; s < corruption_err[k].size(); ++s) {
            os << "corrupt_" << corruption_names[k] << "_s" << s + 1 << "_err,";
            num(corruption_err[k][s]);
            os << "\n";
        }
    if (mce >= 0.0) {
        os << "mce,";
        num(mce);
        os << "\n";
    }
}

// ---------------------------------------------------------------------------
// Feature reliance
// ---------------------------------------------------------------------------

std::vector<double> default_fractions() {
    std::vector<double> f;
    for (int i = 0; i < 20; ++i) f.push_back(0.05 * i);
    return f;
}

namespace {

struct Latents {
    std::vector<float> values;  // [N, D]
    int64_t n = 0, d = 0;
};

Latents collect_latents(nn::Network<float>& net, const data::Dataset& ds, int64_t batch) {
    Latents out;
    out.n = ds.size();
    out.d = net.latent_dim();
    out.values.resize(static_cast<size_t>(out.n * out.d));
    for (int64_t start = 0; start < ds.size(); start += batch) {
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        Tensor<float> z = nn::eval_latent(net, ds.batch(iota_rows(start, take)));
        std::copy(z.data().begin(), z.data().end(), out.values.begin() + start * out.d);
    }
    return out;
}

RelianceCurve reliance_from_latents(const Latents& lat, nn::Network<float>& net,
                                    const data::Dataset& ds, Direction dir,
                                    const std::vector<double>& fractions) {
    for (const auto f : fractions)
        if (f < 0.0 || f > 1.0)
            throw ConfigError("feature_reliance: fraction " + std::to_string(f) +
                              " outside [0,1]");
    const int64_t n = lat.n, d = lat.d;
    // Per-sample value ordering; drop-from-top removes the largest values.
    std::vector<int32_t> order(static_cast<size_t>(n * d));
    for (int64_t i = 0; i < n; ++i) {
        int32_t* row = order.data() + i * d;
        std::iota(row, row + d, 0);
        const float* zv = lat.values.data() + i * d;
        std::sort(row, row + d, [&](int32_t a, int32_t b) {
            if (zv[a] != zv[b])
                return dir == Direction::DropFromTop ? zv[a] > zv[b] : zv[a] < zv[b];
            return a < b;
        });
    }
    RelianceCurve curve;
    curve.direction = dir;
    std::vector<float> masked(lat.values.size());
    for (const auto f : fractions) {
        const auto drop = static_cast<int64_t>(std::floor(f * static_cast<double>(d)));
        masked = lat.values;
        for (int64_t i = 0; i < n; ++i) {
            const int32_t* row = order.data() + i * d;
            for (int64_t j = 0; j < drop; ++j) masked[static_cast<size_t>(i * d + row[j])] = 0.0f;
        }
        Tensor<float> z({n, d}, masked);
        Tensor<float> logits = linear(z, net.fc_w, net.fc_b);
        const float* lv = logits.data().data();
        int64_t hits = 0;
        const int64_t classes = net.spec.num_classes;
        for (int64_t i = 0; i < n; ++i) hits += argmax_row(lv + i * classes, classes) == ds.label(i);
        curve.points.emplace_back(f, static_cast<double>(hits) / static_cast<double>(n));
    }
    return curve;
}

}  // namespace

RelianceCurve feature_reliance(nn::Network<float>& net, const data::Dataset& ds, Direction dir,
                               const std::vector<double>& fractions, int64_t batch) {
    const Latents lat = collect_latents(net, ds, batch);
    return reliance_from_latents(lat, net, ds, dir, fractions);
}

std::pair<RelianceCurve, RelianceCurve> feature_reliance_both(nn::Network<float>& net,
                                                              const data::Dataset& ds,
                                                              const std::vector<double>& fractions,
                                                              int64_t batch) {
    const Latents lat = collect_latents(net, ds, batch);
    return {reliance_from_latents(lat, net, ds, Direction::DropFromTop, fractions),
            reliance_from_latents(lat, net, ds, Direction::DropFromBottom, fractions)};
}

double reliance_area(const RelianceCurve& curve) {
    double area = 0.0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const auto& [x0, y0] = curve.points[i - 1];
        const auto& [x1, y1] = curve.points[i];
        area += 0.5 * (y0 + y1) * (x1 - x0);
    }
    return area;
}

// ---------------------------------------------------------------------------
// Activation / gradient histogram
// ---------------------------------------------------------------------------

NormHistogram2D activation_gradient_histogram(nn::Network<float>& net, const data::Dataset& ds,
                                              int64_t k, int64_t bins, int64_t batch,
                                              int64_t max_batches) {
    if (k < 1 || k > net.num_blocks())
        throw ConfigError("activation_gradient_histogram: k=" + std::to_string(k) +
                          " outside 1.." + std::to_string(net.num_blocks()));
    if (bins < 2) throw ConfigError("activation_gradient_histogram: need at least 2 bins");
    NormHistogram2D hist;
    hist.k = k;
    auto log_edges = [&](double lo, double hi) {
        std::vector<double> e;
        for (int64_t i = 0; i <= bins; ++i)
            e.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
        return e;
    };
    hist.act_edges = log_edges(-8.0, 2.0);
    hist.grad_edges = log_edges(-8.0, 2.0);
    hist.counts.assign(static_cast<size_t>(bins), std::vector<int64_t>(static_cast<size_t>(bins), 0));

    // Locate block k's conv weight in the parameter ordering.
    size_t w_index = 0;
    {
        auto params = net.params();
        const std::string want = "block" + std::to_string(k - 1) + ".conv.w";
        bool found = false;
        for (size_t i = 0; i < params.size(); ++i)
            if (params[i].name == want) {
                w_index = i;
                found = true;
            }
        if (!found) throw ConfigError("activation_gradient_histogram: no conv at block " +
                                      std::to_string(k - 1));
    }

    auto bin_of = [&](const std::vector<double>& edges, double v) {
        const double lv = std::log10(std::max(v, 1e-300));
        auto idx = static_cast<int64_t>(std::floor((lv - edges.front()) /
                                                   (edges[1] - edges[0])));
        return std::clamp<int64_t>(idx, 0, bins - 1);
    };

    const int64_t n_batches = std::min<int64_t>(max_batches, (ds.size() + batch - 1) / batch);
    for (int64_t bi = 0; bi < n_batches; ++bi) {
        const int64_t start = bi * batch;
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        if (take <= 0) break;
        const auto rows = iota_rows(start, take);
        Tensor<float> x = ds.batch(rows);
        Tensor<float> y = ds.onehot(rows);
        // Batch statistics, no running-stat pollution, no parameter update.
        Tape<float> tape;
        nn::Pass<float> pass(net, &tape, /*training=*/true, /*update_stats=*/false,
                             /*params_require_grad=*/true);
        auto fm = pass.forward_to(x, k);
        Tensor<float> loss = softmax_cross_entropy(pass.forward_from(fm), y);
        tape.backward(loss);

        const int64_t c = fm.values.dim(1);
        const int64_t hw = fm.values.numel() / (take * c);
        const float* av = fm.values.data().data();
        const auto gw = tape.grad(pass.param_leaf(w_index));
        const int64_t filter_elems = static_cast<int64_t>(gw.size()) / c;
        for (int64_t f = 0; f < c; ++f) {
            double act_norm = 0.0;
            for (int64_t s = 0; s < take; ++s) {
                double sq = 0.0;
                const float* plane = av + (s * c + f) * hw;
                for (int64_t i = 0; i < hw; ++i)
                    sq += static_cast<double>(plane[i]) * static_cast<double>(plane[i]);
                act_norm += std::sqrt(sq);
            }
            act_norm /= static_cast<double>(take);
            double gsq = 0.0;
            for (int64_t i = 0; i < filter_elems; ++i) {
                const double v = gw[static_cast<size_t>(f * filter_elems + i)];
                gsq += v * v;
            }
            const double grad_norm = std::sqrt(gsq);
            hist.counts[static_cast<size_t>(bin_of(hist.act_edges, act_norm))]
                       [static_cast<size_t>(bin_of(hist.grad_edges, grad_norm))]++;
            hist.samples.emplace_back(act_norm, grad_norm);
            hist.total++;
        }
    }
    return hist;
}

// ---------------------------------------------------------------------------
// Loss landscape
// ---------------------------------------------------------------------------

LandscapeGrid loss_landscape(nn::Network<float>& net, const data::Dataset& ds, int64_t grid_n,
                             uint64_t seed, double span, int64_t batches, int64_t batch) {
    if (grid_n < 3 || grid_n % 2 == 0)
        throw ConfigError("loss_landscape: grid_n must be odd and >= 3, got " +
                          std::to_string(grid_n));
    auto params = net.params();

    // Two Gaussian directions shaped like the parameters, each filter-
    // normalized so its per-filter norm matches the model's.
    auto draw_direction = [&](uint64_t stream) {
        Rng rng = Rng(seed).split(stream);
        std::vector<std::vector<float>> dir;
        for (const auto& p : params) {
            std::vector<float> d(static_cast<size_t>(p.tensor->numel()));
            for (auto& v : d) v = static_cast<float>(rng.normal());
            const int64_t filters = p.filter_count;
            const int64_t stride = p.tensor->numel() / filters;
            const float* theta = p.tensor->data().data();
            for (int64_t f = 0; f < filters; ++f) {
                double tn = 0.0, dn = 0.0;
                for (int64_t i = 0; i < stride; ++i) {
                    tn += static_cast<double>(theta[f * stride + i]) * theta[f * stride + i];
                    dn += static_cast<double>(d[static_cast<size_t>(f * stride + i)]) *
                          d[static_cast<size_t>(f * stride + i)];
                }
                const double scale = dn > 0.0 ? std::sqrt(tn) / std::sqrt(dn) : 0.0;
                for (int64_t i = 0; i < stride; ++i)
                    d[static_cast<size_t>(f * stride + i)] =
                        static_cast<float>(d[static_cast<size_t>(f * stride + i)] * scale);
            }
            dir.push_back(std::move(d));
        }
        return dir;
    };
    const auto d1 = draw_direction(0xd1);
    const auto d2 = draw_direction(0xd2);

    // Fixed batch set, index order.
    std::vector<Tensor<float>> xs, ys;
    for (int64_t bi = 0; bi < batches; ++bi) {
        const int64_t start = bi * batch;
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        if (take <= 0) break;
        const auto rows = iota_rows(start, take);
        xs.push_back(ds.batch(rows));
        ys.push_back(ds.onehot(rows));
    }
    if (xs.empty()) throw ConfigError("loss_landscape: empty dataset");

    std::vector<std::vector<float>> theta0;
    for (const auto& p : params)
        theta0.emplace_back(p.tensor->data().begin(), p.tensor->data().end());

    LandscapeGrid grid;
    grid.seed = seed;
    grid.grid_n = grid_n;
    grid.span = span;
    for (int64_t i = 0; i < grid_n; ++i)
        grid.coords.push_back(-span + 2.0 * span * static_cast<double>(i) /
                                          static_cast<double>(grid_n - 1));
    grid.loss.assign(static_cast<size_t>(grid_n), std::vector<double>(static_cast<size_t>(grid_n), 0.0));

    for (int64_t ai = 0; ai < grid_n; ++ai) {
        for (int64_t bi2 = 0; bi2 < grid_n; ++bi2) {
            const auto a = static_cast<float>(grid.coords[static_cast<size_t>(ai)]);
            const auto b = static_cast<float>(grid.coords[static_cast<size_t>(bi2)]);
            for (size_t pi = 0; pi < params.size(); ++pi) {
                auto pd = params[pi].tensor->mutable_data();
                const auto& t0 = theta0[pi];
                const auto& u = d1[pi];
                const auto& v = d2[pi];
                for (size_t j = 0; j < pd.size(); ++j) pd[j] = t0[j] + a * u[j] + b * v[j];
            }
            double loss_sum = 0.0;
            for (size_t bj = 0; bj < xs.size(); ++bj) {
                Tensor<float> logits = nn::eval_logits(net, xs[bj]);
                loss_sum += softmax_cross_entropy(logits, ys[bj]).item();
            }
            grid.loss[static_cast<size_t>(ai)][static_cast<size_t>(bi2)] =
                loss_sum / static_cast<double>(xs.size());
        }
    }
    // Restore the unperturbed parameters.
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto pd = params[pi].tensor->mutable_data();
        std::copy(theta0[pi].begin(), theta0[pi].end(), pd.begin());
    }
    return grid;
}

// ---------------------------------------------------------------------------
// OOD metrics
// ---------------------------------------------------------------------------

OODReport ood_metrics(const std::vector<double>& scores_in, const std::vector<double>& scores_out) {
    if (scores_in.empty() || scores_out.empty())
        throw ConfigError("ood_metrics: both score lists must be non-empty");
    const auto n_in = static_cast<double>(scores_in.size());
    const auto n_out = static_cast<double>(scores_out.size());

    // Tie-corrected rank AUROC.
    struct Entry {
        double score;
        bool is_in;
    };
    std::vector<Entry> all;
    all.reserve(scores_in.size() + scores_out.size());
    for (const auto s : scores_in) all.push_back({s, true});
    for (const auto s : scores_out) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });
    double rank_sum_in = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t t = i; t < j; ++t)
            if (all[t].is_in) rank_sum_in += avg_rank;
        i = j;
    }
    OODReport rep;
    rep.auroc = (rank_sum_in - n_in * (n_in + 1.0) / 2.0) / (n_in * n_out);

    // Threshold sweep over distinct scores, descending: cumulative staircase.
    std::vector<Entry> desc = all;
    std::reverse(desc.begin(), desc.end());
    double tp = 0.0, fp = 0.0;
    std::vector<std::array<double, 2>> roc;    // (tpr, fpr)
    std::vector<std::array<double, 2>> pr;     // (recall, precision)
    i = 0;
    while (i < desc.size()) {
        size_t j = i;
        while (j < desc.size() && desc[j].score == desc[i].score) ++j;
        for (size_t t = i; t < j; ++t) (desc[t].is_in ? tp : fp) += 1.0;
        roc.push_back({tp / n_in, fp / n_out});
        pr.push_back({tp / n_in, tp / (tp + fp)});
        i = j;
    }

    // FPR at 95% TPR with linear interpolation between achievable points.
    rep.fpr95 = 1.0;
    double prev_tpr = 0.0, prev_fpr = 0.0;
    for (const auto& [tpr, fpr] : roc) {
        if (tpr >= 0.95) {
            if (tpr == prev_tpr) {
                rep.fpr95 = fpr;
            } else {
                rep.fpr95 = prev_fpr + (0.95 - prev_tpr) * (fpr - prev_fpr) / (tpr - prev_tpr);
            }
            break;
        }
        prev_tpr = tpr;
        prev_fpr = fpr;
    }

    // Average precision over recall steps (in-distribution positive).
    double ap = 0.0;
    double prev_recall = 0.0;
    for (const auto& [recall, precision] : pr) {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    rep.aupr = ap;
    return rep;
}

std::vector<double> msp_scores(nn::Network<float>& net, const data::Dataset& ds, int64_t batch) {
    std::vector<double> scores;
    scores.reserve(static_cast<size_t>(ds.size()));
    for (int64_t start = 0; start < ds.size(); start += batch) {
        const int64_t take = std::min<int64_t>(batch, ds.size() - start);
        Tensor<float> logits = nn::eval_logits(net, ds.batch(iota_rows(start, take)));
        const auto sm = softmax_rows(logits);
        const int64_t n = logits.dim(1);
        for (int64_t r = 0; r < take; ++r) {
            float best = sm[static_cast<size_t>(r * n)];
            for (int64_t j = 1; j < n; ++j)
                best = std::max(best, sm[static_cast<size_t>(r * n + j)]);
            scores.push_back(best);
        }
    }
    return scores;
}

}  // namespace cumix::eval
