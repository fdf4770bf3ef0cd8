#include "cumix/cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cumix/config.hpp"
#include "cumix/eval.hpp"
#include "cumix/serialize.hpp"
#include "cumix/svg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cumix::cli {

namespace {

std::string iso_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Owns the output directory: creates it, writes the manifest up front, and
// rewrites it with the artifact list when the command finishes.
class RunDir {
public:
    RunDir(const std::string& out, const std::string& command, const Config& cfg) : dir_(out) {
        if (out.empty()) throw ConfigError("--out directory is required");
        fs::create_directories(dir_);
        if (fs::exists(dir_ / "manifest.json"))
            throw ConfigError("output directory " + out + " already holds a run manifest");
        manifest_["command"] = command;
        manifest_["tool_version"] = kToolVersion;
        manifest_["seed"] = cfg.get_int("seed", 1);
        json snapshot;
        for (const auto& [k, v] : cfg.entries()) snapshot[k] = v;
        manifest_["config"] = snapshot;
        manifest_["started"] = iso_now();
        manifest_["artifacts"] = json::array();
        write();
    }

    const fs::path& dir() const { return dir_; }
    std::string path(const std::string& rel) {
        artifacts_.push_back(rel);
        return (dir_ / rel).string();
    }

    void finish() {
        manifest_["finished"] = iso_now();
        manifest_["artifacts"] = artifacts_;
        write();
    }

private:
    void write() const {
        std::ofstream os(dir_ / "manifest.json");
        if (!os) throw IoError("cannot write manifest in " + dir_.string());
        os << manifest_.dump(2) << "\n";
    }

    fs::path dir_;
    json manifest_;
    std::vector<std::string> artifacts_;
};

Config load_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    Config cfg = config_path.empty() ? Config() : Config::from_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    if (cfg.has("threads")) set_num_threads(static_cast<int>(cfg.get_int("threads", 0)));
    return cfg;
}

data::Dataset load_split(const Config& cfg, const std::string& split) {
    const std::string dir = cfg.get_str("data.dir", "");
    if (dir.empty()) throw ConfigError("config key data.dir is required");
    const fs::path p = fs::path(dir) / split;
    if (!fs::exists(p))
        throw ConfigError("config key data.dir: missing split directory " + p.string());
    return data::load_dataset(p.string(), cfg.get_int("data.classes", 0));
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << text;
}

void csv_num(std::ostream& os, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    os << buf;
}

// --------------------------------------------------------------------------
// Commands
// --------------------------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::string& out) {
    RunDir run(out, "gen-data", cfg);
    const auto format = cfg.get_str("data.format", "packed") == "png" ? data::StorageFormat::Png
                                                                      : data::StorageFormat::Packed;
    const struct {
        const char* split;
        const char* key;
        int64_t dflt;
    } splits[] = {{"train", "data.per_class_train", 500},
                  {"val", "data.per_class_val", 100},
                  {"test", "data.per_class_test", 100}};
    for (const auto& s : splits) {
        const int64_t per_class = cfg.get_int(s.key, s.dflt);
        if (per_class <= 0) continue;
        data::Dataset ds = data::generate_synthetic(to_synth_spec(cfg, s.split, per_class));
        data::save_dataset((run.dir() / s.split).string(), ds, format);
        if (format == data::StorageFormat::Packed) {
            run.path(std::string(s.split) + "/images.cumten");
            run.path(std::string(s.split) + "/labels.cumten");
        } else {
            run.path(std::string(s.split) + "/manifest.csv");
            for (int64_t i = 0; i < ds.size(); ++i) {
                char name[64];
                std::snprintf(name, sizeof(name), "%s/img_%06lld.png", s.split,
                              static_cast<long long>(i));
                run.path(name);
            }
        }
        std::printf("gen-data: %s split, %lld samples, digest %016llx\n", s.split,
                    static_cast<long long>(ds.size()),
                    static_cast<unsigned long long>(ds.digest()));
    }
    run.finish();
    return 0;
}

int cmd_train(const Config& cfg, const std::string& out) {
    train::RunConfig rc = to_run_config(cfg);
    data::Dataset train_ds, val_ds;
    try {
        train_ds = load_split(cfg, "train");
        val_ds = load_split(cfg, "val");
    } catch (const IoError& e) {
        throw ConfigError(std::string("config key data.dir: ") + e.what());
    }
    RunDir run(out, "train", cfg);

    std::ofstream audit;
    if (rc.audit_log) {
        audit.open(run.path("audit.csv"));
        audit << "iteration,pair,k,lambda,n_mix,mask\n";
    }
    const auto result = train::run(rc, train_ds, val_ds, rc.audit_log ? &audit : nullptr);

    {
        std::ofstream os(run.path("metrics.csv"), std::ios::binary);
        result.log.write_csv(os);
    }
    {
        std::ofstream os(run.path("timing.csv"), std::ios::binary);
        result.log.write_timing_csv(os);
    }
    auto best = result.best;
    nn::save_checkpoint(run.path("checkpoint.cumix"), best);
    run.finish();
    std::printf("train: best val acc %.4f (epoch %lld), mean iter %.4f s\n", result.best_val_acc,
                static_cast<long long>(result.best_epoch), result.mean_iter_seconds);
    return 0;
}

int cmd_eval(const Config& cfg, const std::string& out, const std::string& checkpoint,
             bool do_fgsm, double fgsm_eps, bool do_deform, bool do_corrupt) {
    nn::Network<float> net = nn::load_checkpoint<float>(checkpoint);
    data::Dataset test_ds = load_split(cfg, "test");
    RunDir run(out, "eval", cfg);

    const auto eval_seed = static_cast<uint64_t>(cfg.get_int("eval.seed", 1234));
    const int64_t batch = cfg.get_int("eval.batch", 128);

    eval::RobustnessReport report;
    report.clean_acc = 100.0 * eval::accuracy(net, test_ds, batch);
    if (do_fgsm) {
        report.fgsm_epsilon = fgsm_eps;
        report.fgsm_acc = 100.0 * eval::accuracy_fgsm(net, test_ds, fgsm_eps, batch);
    }
    if (do_deform) {
        for (const auto& spec : eval::deformation_grid())
            report.deform_accs.emplace_back(
                data::deform_label(spec),
                100.0 * eval::accuracy_deformed(net, test_ds, spec, eval_seed, batch));
    }
    if (do_corrupt) {
        for (const auto kind : eval::corruption_kinds()) {
            report.corruption_names.push_back(data::corruption_label(kind));
            std::vector<double> row;
            for (int severity = 1; severity <= 5; ++severity) {
                data::CorruptionSpec spec{kind, severity};
                row.push_back(100.0 *
                              (1.0 - eval::accuracy_corrupted(net, test_ds, spec, eval_seed, batch)));
            }
            report.corruption_err.push_back(std::move(row));
        }
        report.mce = eval::mean_corruption_error(report.corruption_err);
    }
    {
        std::ofstream os(run.path("robustness.csv"), std::ios::binary);
        report.write_csv(os);
    }
    run.finish();
    std::printf("eval: clean acc %.2f%%\n", report.clean_acc);
    return 0;
}

int cmd_analyze(const Config& cfg, const std::string& out, const std::string& checkpoint,
                bool do_reliance, int64_t hist_k, const std::string& ood_dir) {
    nn::Network<float> net = nn::load_checkpoint<float>(checkpoint);
    data::Dataset test_ds = load_split(cfg, "test");
    RunDir run(out, "analyze", cfg);

    const int64_t batch = cfg.get_int("eval.batch", 128);

    if (do_reliance) {
        const auto [top, bottom] = eval::feature_reliance_both(net, test_ds);
        std::ofstream os(run.path("reliance.csv"), std::ios::binary);
        os << "direction,fraction,accuracy\n";
        for (const auto& [f, a] : top.points) {
            os << "drop_from_top,";
            csv_num(os, f);
            os << ",";
            csv_num(os, a);
            os << "\n";
        }
        for (const auto& [f, a] : bottom.points) {
            os << "drop_from_bottom,";
            csv_num(os, f);
            os << ",";
            csv_num(os, a);
            os << "\n";
        }
        write_text(run.path("reliance.svg"),
                   svg::line_chart("Feature reliance", "fraction of latent dims dropped",
                                   "top-1 accuracy",
                                   {{"drop_from_top", top.points},
                                    {"drop_from_bottom", bottom.points}}));
    }
    if (hist_k >= 0) {
        const int64_t bins = cfg.get_int("analyze.bins", 24);
        const auto hist = eval::activation_gradient_histogram(net, test_ds, hist_k, bins, batch);
        std::ofstream os(run.path("hist.csv"), std::ios::binary);
        os << "act_bin,grad_bin,act_log10_lo,act_log10_hi,grad_log10_lo,grad_log10_hi,count\n";
        for (size_t i = 0; i < hist.counts.size(); ++i)
            for (size_t j = 0; j < hist.counts[i].size(); ++j) {
                os << i << "," << j << ",";
                csv_num(os, hist.act_edges[i]);
                os << ",";
                csv_num(os, hist.act_edges[i + 1]);
                os << ",";
                csv_num(os, hist.grad_edges[j]);
                os << ",";
                csv_num(os, hist.grad_edges[j + 1]);
                os << "," << hist.counts[i][j] << "\n";
            }
        std::vector<std::vector<double>> vals;
        for (const auto& row : hist.counts)
            vals.emplace_back(row.begin(), row.end());
        write_text(run.path("hist.svg"),
                   svg::heatmap("Activation vs gradient norms, layer " + std::to_string(hist_k),
                                "gradient norm bin (log10)", "activation norm bin (log10)", vals,
                                true));
    }
    if (!ood_dir.empty()) {
        data::Dataset ood_ds = data::load_dataset(ood_dir, 0);
        const auto scores_in = eval::msp_scores(net, test_ds, batch);
        const auto scores_out = eval::msp_scores(net, ood_ds, batch);
        const auto rep = eval::ood_metrics(scores_in, scores_out);
        std::ofstream os(run.path("ood.csv"), std::ios::binary);
        os << "metric,value\n";
        os << "fpr95,";
        csv_num(os, rep.fpr95);
        os << "\nauroc,";
        csv_num(os, rep.auroc);
        os << "\naupr,";
        csv_num(os, rep.aupr);
        os << "\n";
        std::printf("analyze: ood fpr95 %.4f auroc %.4f aupr %.4f\n", rep.fpr95, rep.auroc,
                    rep.aupr);
    }
    run.finish();
    return 0;
}

int cmd_landscape(const Config& cfg, const std::string& out, const std::string& checkpoint) {
    nn::Network<float> net = nn::load_checkpoint<float>(checkpoint);
    data::Dataset test_ds = load_split(cfg, "test");
    RunDir run(out, "landscape", cfg);

    const int64_t grid_n = cfg.get_int("landscape.grid", 21);
    const double span = cfg.get_double("landscape.span", 1.0);
    const int64_t batches = cfg.get_int("landscape.batches", 2);
    const auto seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    const auto grid =
        eval::loss_landscape(net, test_ds, grid_n, seed, span, batches, cfg.get_int("eval.batch", 64));

    std::ofstream os(run.path("landscape.csv"), std::ios::binary);
    os << "a,b,loss\n";
    for (size_t i = 0; i < grid.loss.size(); ++i)
        for (size_t j = 0; j < grid.loss[i].size(); ++j) {
            csv_num(os, grid.coords[i]);
            os << ",";
            csv_num(os, grid.coords[j]);
            os << ",";
            csv_num(os, grid.loss[i][j]);
            os << "\n";
        }
    write_text(run.path("landscape.svg"), svg::contour("Loss landscape", grid.coords, grid.loss, 9));
    run.finish();
    return 0;
}

}  // namespace

int run_cli(std::vector<std::string> args) {
    CLI::App app{"Catch-up Mix training and robustness toolkit"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint, ood_dir;
    std::vector<std::string> overrides;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* c = sub->add_option("--config", config_path, "key=value config file");
        if (needs_config) c->check(CLI::ExistingFile);
        sub->add_option("--set", overrides, "override, key=value (repeatable)");
        sub->add_option("--out", out_dir, "output directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, false);

    auto* tr = app.add_subcommand("train", "train per the run config");
    add_common(tr, false);

    auto* ev = app.add_subcommand("eval", "robustness report for a checkpoint");
    add_common(ev, false);
    ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    double fgsm_eps = 4.0 / 255.0;
    auto* fgsm_opt = ev->add_option("--fgsm", fgsm_eps,
                                    "FGSM suite; optional epsilon (default 4/255)");
    fgsm_opt->expected(0, 1);
    const bool* dummy = nullptr;
    (void)dummy;
    bool do_deform = false, do_corrupt = false;
    ev->add_flag("--deform", do_deform, "deformation suite");
    ev->add_flag("--corrupt", do_corrupt, "corruption suite");

    auto* an = app.add_subcommand("analyze", "feature and influence diagnostics");
    add_common(an, false);
    an->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    bool do_reliance = false;
    int64_t hist_k = -1;
    an->add_flag("--reliance", do_reliance, "feature-reliance curves");
    an->add_option("--hist", hist_k, "activation/gradient histogram at layer k");
    an->add_option("--ood", ood_dir, "dataset directory scored as out-of-distribution");

    auto* la = app.add_subcommand("landscape", "loss landscape grid");
    add_common(la, false);
    la->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

    auto* oo = app.add_subcommand("ood", "out-of-distribution metrics");
    add_common(oo, false);
    oo->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    oo->add_option("--other", ood_dir, "dataset directory scored as out-of-distribution")
        ->required();

    std::vector<const char*> argv;
    argv.push_back("cumix");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const Config cfg = load_config(config_path, overrides);
        if (gen->parsed()) return cmd_gen_data(cfg, out_dir);
        if (tr->parsed()) return cmd_train(cfg, out_dir);
        if (ev->parsed())
            return cmd_eval(cfg, out_dir, checkpoint, fgsm_opt->count() > 0, fgsm_eps, do_deform,
                            do_corrupt);
        if (an->parsed()) return cmd_analyze(cfg, out_dir, checkpoint, do_reliance, hist_k, ood_dir);
        if (la->parsed()) return cmd_landscape(cfg, out_dir, checkpoint);
        if (oo->parsed()) return cmd_analyze(cfg, out_dir, checkpoint, false, -1, ood_dir);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "artifact error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace cumix::cli
