#pragma once

#include <map>
#include <string>
#include <vector>

#include "cumix/data.hpp"
#include "cumix/train.hpp"

namespace cumix::cli {

// Plain-text key=value configuration with dotted keys ('#' comments allowed).
// CLI overrides are applied on top and reflected in the manifest snapshot.
class Config {
public:
    Config() = default;
    static Config from_file(const std::string& path);

    void apply_override(const std::string& kv);  // "key=value"

    bool has(const std::string& key) const { return entries_.count(key) > 0; }
    std::string get_str(const std::string& key, const std::string& dflt) const;
    double get_double(const std::string& key, double dflt) const;
    int64_t get_int(const std::string& key, int64_t dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;
    std::vector<int64_t> get_int_list(const std::string& key,
                                      const std::vector<int64_t>& dflt) const;

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

// Builds training and generation settings from the dotted keys; errors name
// the offending key.
train::RunConfig to_run_config(const Config& cfg);
data::SynthSpec to_synth_spec(const Config& cfg, const std::string& split, int64_t per_class);

}  // namespace cumix::cli
