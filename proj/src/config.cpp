#include "cumix/config.hpp"

#include <fstream>
#include <sstream>

namespace cumix::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    Config cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " of " + path +
                              " is not 'key = value': " + line);
        cfg.entries_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
}

void Config::apply_override(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + kv + "' is not key=value");
    entries_[trim(kv.substr(0, eq))] = trim(kv.substr(eq + 1));
}

std::string Config::get_str(const std::string& key, const std::string& dflt) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? dflt : it->second;
}

double Config::get_double(const std::string& key, double dflt) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return dflt;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": '" + it->second + "' is not a number");
    }
}

int64_t Config::get_int(const std::string& key, int64_t dflt) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return dflt;
    try {
        size_t pos = 0;
        const long long v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": '" + it->second + "' is not an integer");
    }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key " + key + ": '" + it->second + "' is not a boolean");
}

std::vector<int64_t> Config::get_int_list(const std::string& key,
                                          const std::vector<int64_t>& dflt) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return dflt;
    std::vector<int64_t> out;
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError("config key " + key + ": '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw ConfigError("config key " + key + ": empty list");
    return out;
}

train::RunConfig to_run_config(const Config& cfg) {
    train::RunConfig rc;
    rc.network = cfg.get_str("network.name", "tiny-4");
    rc.num_classes = cfg.get_int("network.classes", 0);
    rc.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    rc.data_dir = cfg.get_str("data.dir", "");
    rc.eval_cadence = cfg.get_int("train.eval_cadence", 1);
    rc.augment = cfg.get_bool("train.augment", true);
    rc.audit_log = cfg.get_bool("mix.audit", false);

    const std::string strategy = cfg.get_str("mix.strategy", "catchup");
    if (strategy == "none") rc.mixcfg.strategy = mix::Strategy::None;
    else if (strategy == "catchup") rc.mixcfg.strategy = mix::Strategy::Catchup;
    else if (strategy == "random_channel") rc.mixcfg.strategy = mix::Strategy::RandomChannel;
    else throw ConfigError("config key mix.strategy: unknown value '" + strategy + "'");
    rc.mixcfg.alpha = cfg.get_double("mix.alpha", 10.0);
    rc.mixcfg.layer_set = cfg.get_int_list("mix.layers", {0, 1, 2, 3, 4, 5});
    const std::string input_kind = cfg.get_str("mix.input_kind", "cutmix");
    if (input_kind == "none") rc.mixcfg.input_kind = mix::InputMixKind::None;
    else if (input_kind == "input_mixup") rc.mixcfg.input_kind = mix::InputMixKind::InputMixup;
    else if (input_kind == "cutmix") rc.mixcfg.input_kind = mix::InputMixKind::CutMix;
    else throw ConfigError("config key mix.input_kind: unknown value '" + input_kind + "'");
    rc.mixcfg.prob = cfg.get_double("mix.prob", 1.0);

    rc.optim.lr = cfg.get_double("optim.lr", 0.1);
    rc.optim.momentum = cfg.get_double("optim.momentum", 0.9);
    rc.optim.weight_decay = cfg.get_double("optim.weight_decay", 5e-4);
    const std::string sched = cfg.get_str("optim.schedule", "cosine");
    if (sched == "cosine") rc.optim.schedule = train::OptimConfig::Schedule::Cosine;
    else if (sched == "step") rc.optim.schedule = train::OptimConfig::Schedule::Step;
    else throw ConfigError("config key optim.schedule: unknown value '" + sched + "'");
    rc.optim.milestones = cfg.get_int_list("optim.milestones", {30, 45});
    rc.optim.step_factor = cfg.get_double("optim.step_factor", 0.1);
    rc.optim.epochs = cfg.get_int("optim.epochs", 60);
    rc.optim.batch = cfg.get_int("optim.batch", 64);
    try {
        rc.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return rc;
}

data::SynthSpec to_synth_spec(const Config& cfg, const std::string& split, int64_t per_class) {
    data::SynthSpec spec;
    spec.classes = cfg.get_int("data.classes", 8);
    spec.per_class = per_class;
    spec.image_size = cfg.get_int("data.image_size", 32);
    spec.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
    spec.style = cfg.get_int("data.style", 0);
    spec.scramble_prob = cfg.get_double("data.scramble", 0.15);
    spec.split = split;
    return spec;
}

}  // namespace cumix::cli
