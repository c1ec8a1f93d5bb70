#pragma once

#include <map>
#include <string>
#include <vector>

#include "rotpretext/synth.hpp"
#include "rotpretext/train.hpp"

namespace rotpretext {

// Subcommand bits for scoping config keys.
enum SubcommandFlags : unsigned {
    kSubGenData = 1u << 0,
    kSubPretrain = 1u << 1,
    kSubFinetune = 1u << 2,
    kSubEval = 1u << 3,
    kSubAblate = 1u << 4,
    kSubAttention = 1u << 5,
    kSubKernels = 1u << 6,
    kSubAll = (1u << 7) - 1,
};

unsigned subcommand_flag(const std::string& name);

enum class ValueKind { kInt, kUint64, kDouble, kBool, kString };

struct KeySpec {
    const char* name;
    ValueKind kind;
    const char* default_value;
    unsigned subcommands;
    const char* help;
};

/// The single source of truth for every config key: defaults, typing,
/// per-subcommand availability and help text all come from here.
const std::vector<KeySpec>& config_keys();

/// Lines "key (default) — help" for every key a subcommand consumes.
std::string config_help(unsigned subcommand_mask);

/// Flat key=value map: defaults, overlaid by an optional UTF-8 config file
/// ("key=value" lines, '#' comments), overlaid by command-line overrides.
/// Unknown keys, malformed lines and out-of-range values are rejected with
/// the offending location.
class Config {
public:
    static Config load(const std::string& file_path, const std::vector<std::string>& overrides,
                       unsigned subcommand_mask);

    bool has(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

TrainConfig train_config_from(const Config& c);
SynthSpec synth_spec_from(const Config& c);

/// data_dir resolution: explicit key, else $ROTPRETEXT_DATA_DIR, else ".".
std::string resolve_data_dir(const Config& c);

}  // namespace rotpretext
