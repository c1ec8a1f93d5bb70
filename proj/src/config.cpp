#include "rotpretext/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rotpretext {

unsigned subcommand_flag(const std::string& name) {
    if (name == "gen-data") return kSubGenData;
    if (name == "pretrain") return kSubPretrain;
    if (name == "finetune") return kSubFinetune;
    if (name == "eval") return kSubEval;
    if (name == "ablate") return kSubAblate;
    if (name == "attention") return kSubAttention;
    if (name == "kernels") return kSubKernels;
    throw ConfigError("unknown subcommand: " + name);
}

const std::vector<KeySpec>& config_keys() {
    static const std::vector<KeySpec> keys = {
        {"seed", ValueKind::kUint64, "1", kSubAll, "run seed; identical seeds reproduce runs"},
        {"threads", ValueKind::kInt, "1", kSubAll,
         "worker cap for intra-op parallelism; 1 is fully sequential"},
        {"data_dir", ValueKind::kString, "", kSubAll,
         "dataset root (default: $ROTPRETEXT_DATA_DIR, else '.')"},
        {"out_dir", ValueKind::kString, "out", kSubAll, "output directory for artifacts"},
        {"run_id", ValueKind::kString, "run",
         kSubPretrain | kSubFinetune | kSubAblate, "prefix for checkpoints and logs"},
        // dataset generation
        {"clips_per_class", ValueKind::kInt, "120", kSubGenData,
         "training clips per motion class"},
        {"test_clips_per_class", ValueKind::kInt, "25", kSubGenData,
         "held-out clips per motion class"},
        {"frames", ValueKind::kInt, "14", kSubGenData, "stored frames per clip"},
        {"height", ValueKind::kInt, "36", kSubGenData, "stored frame height"},
        {"width", ValueKind::kInt, "36", kSubGenData, "stored frame width"},
        {"channels", ValueKind::kInt, "1", kSubGenData, "clip channels (1 or 3)"},
        {"cue_strength", ValueKind::kDouble, "1.0", kSubGenData,
         "orientation cue strength in (0,1]"},
        // training
        {"task", ValueKind::kString, "pretext_classify", kSubPretrain | kSubAblate,
         "pretext_classify | pretext_regress"},
        {"modality", ValueKind::kString, "rgb",
         kSubPretrain | kSubFinetune | kSubEval | kSubAblate, "rgb | dif"},
        {"rotations", ValueKind::kString, "0,90,180,270",
         kSubPretrain | kSubEval | kSubAblate, "comma-separated degree list, e.g. 0,90,180,270"},
        {"regression_norm", ValueKind::kString, "l2", kSubPretrain | kSubAblate,
         "l1 | l2 (pretext_regress)"},
        {"batch_size", ValueKind::kInt, "6", kSubPretrain | kSubFinetune | kSubAblate,
         "clips per step before rotation expansion"},
        {"iterations", ValueKind::kInt, "300", kSubPretrain | kSubFinetune | kSubAblate,
         "iteration budget; 0 derives it from epochs"},
        {"epochs", ValueKind::kInt, "0", kSubPretrain | kSubFinetune | kSubAblate,
         "epoch budget, used when iterations=0"},
        {"lr_initial", ValueKind::kDouble, "0.1", kSubPretrain | kSubAblate,
         "initial learning rate"},
        {"lr_initial", ValueKind::kDouble, "0.008", kSubFinetune,
         "initial learning rate (fine-tune schedule)"},
        {"lr_decay_factor", ValueKind::kDouble, "0.1",
         kSubPretrain | kSubFinetune | kSubAblate, "multiplicative step decay in (0,1]"},
        {"lr_decay_every", ValueKind::kInt, "24000", kSubPretrain | kSubAblate,
         "iterations between decays"},
        {"lr_decay_every", ValueKind::kInt, "4000", kSubFinetune,
         "iterations between decays (fine-tune schedule)"},
        {"momentum", ValueKind::kDouble, "0.9", kSubPretrain | kSubFinetune | kSubAblate,
         "SGD momentum (0 disables)"},
        {"weight_decay", ValueKind::kDouble, "1e-4", kSubPretrain | kSubFinetune | kSubAblate,
         "L2 weight decay (0 disables)"},
        {"clip_length", ValueKind::kInt, "8",
         kSubPretrain | kSubFinetune | kSubEval | kSubAblate,
         "sampled frames per clip (difference clips feed length-1 to the net)"},
        {"resize_to", ValueKind::kInt, "0",
         kSubPretrain | kSubFinetune | kSubEval | kSubAblate,
         "square resize before cropping; 0 keeps the stored size"},
        {"crop_size", ValueKind::kInt, "32",
         kSubPretrain | kSubFinetune | kSubEval | kSubAblate,
         "square crop fed to the network (random in training, center in eval)"},
        {"flip_prob", ValueKind::kDouble, "0.5", kSubPretrain | kSubFinetune | kSubAblate,
         "per-clip horizontal flip probability"},
        {"freeze_prefix", ValueKind::kInt, "0", kSubFinetune,
         "freeze convolution blocks below this index (0..5)"},
        {"checkpoint_every", ValueKind::kInt, "0",
         kSubPretrain | kSubFinetune | kSubAblate, "intermediate checkpoint cadence; 0 disables"},
        {"log_every", ValueKind::kInt, "25", kSubPretrain | kSubFinetune | kSubAblate,
         "run-log row cadence in iterations"},
        {"eval_max_clips", ValueKind::kInt, "32",
         kSubPretrain | kSubFinetune | kSubAblate, "eval-set cap for in-training accuracy"},
        {"model_scale", ValueKind::kString, "desk",
         kSubPretrain | kSubFinetune | kSubAblate, "desk | paper"},
        {"shots_per_class", ValueKind::kInt, "0", kSubFinetune | kSubAblate,
         "few-shot subset size per class; 0 uses the full training split"},
        {"matrix", ValueKind::kString, "rotations", kSubAblate, "rotations | cliplen"},
        {"init", ValueKind::kString, "",
         kSubFinetune | kSubEval | kSubAttention | kSubKernels, "checkpoint to start from"},
        {"init2", ValueKind::kString, "", kSubEval,
         "second checkpoint; when set, eval reports the fused score"},
        {"modality2", ValueKind::kString, "dif", kSubEval, "modality of the second checkpoint"},
        {"resume", ValueKind::kString, "", kSubPretrain | kSubFinetune,
         "checkpoint to continue training from"},
        {"clip_path", ValueKind::kString, "", kSubAttention,
         "clip file for attention maps; empty picks from the test split"},
        {"clip_index", ValueKind::kInt, "0", kSubAttention,
         "test-split clip index when clip_path is empty"},
    };
    return keys;
}

std::string config_help(unsigned subcommand_mask) {
    std::ostringstream os;
    os << "Config keys (file 'key=value' lines or positional overrides):\n";
    for (const auto& k : config_keys()) {
        if (!(k.subcommands & subcommand_mask)) continue;
        os << "  " << k.name;
        if (k.default_value[0] != '\0') os << " (default " << k.default_value << ")";
        os << ": " << k.help << "\n";
    }
    return os.str();
}

namespace {

const KeySpec* find_key(const std::string& name) {
    for (const auto& k : config_keys())
        if (name == k.name) return &k;
    return nullptr;
}

void check_value(const KeySpec& spec, const std::string& value, const std::string& where) {
    try {
        switch (spec.kind) {
            case ValueKind::kInt: (void)std::stoi(value); break;
            case ValueKind::kUint64: (void)std::stoull(value); break;
            case ValueKind::kDouble: (void)std::stod(value); break;
            case ValueKind::kBool:
                if (value != "0" && value != "1" && value != "true" && value != "false")
                    throw std::invalid_argument(value);
                break;
            case ValueKind::kString: break;
        }
    } catch (const std::exception&) {
        throw ConfigError(where + ": malformed value for key '" + std::string(spec.name) +
                          "': '" + value + "'");
    }
}

// Keys are validated against the whole registry (typo safety); keys that a
// subcommand does not consume are carried but ignored, so one preset file
// can serve the full pipeline.
void apply_line(std::map<std::string, std::string>& values, const std::string& line,
                const std::string& where) {
    const auto eq = line.find('=');
    if (eq == std::string::npos)
        throw ConfigError(where + ": expected key=value, got '" + line + "'");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto trim = [](std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        const auto e = s.find_last_not_of(" \t");
        s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
    };
    trim(key);
    trim(value);
    const KeySpec* spec = find_key(key);
    if (!spec) throw ConfigError(where + ": unknown key '" + key + "'");
    check_value(*spec, value, where);
    values[key] = value;
}

void check_ranges(const Config& c, unsigned mask) {
    auto positive = [&c](const char* key) {
        if (c.has(key) && !(c.get_double(key) > 0))
            throw ConfigError(std::string("config key '") + key + "' must be > 0");
    };
    auto non_negative = [&c](const char* key) {
        if (c.has(key) && c.get_double(key) < 0)
            throw ConfigError(std::string("config key '") + key + "' must be >= 0");
    };
    if (mask & (kSubPretrain | kSubFinetune | kSubAblate)) {
        positive("lr_initial");
        positive("lr_decay_every");
        positive("batch_size");
        positive("clip_length");
        positive("crop_size");
        non_negative("momentum");
        non_negative("weight_decay");
        non_negative("iterations");
        non_negative("epochs");
        const double f = c.get_double("lr_decay_factor");
        if (!(f > 0) || f > 1) throw ConfigError("config key 'lr_decay_factor' must be in (0,1]");
        const double p = c.get_double("flip_prob");
        if (p < 0 || p > 1) throw ConfigError("config key 'flip_prob' must be in [0,1]");
        const auto& scale = c.get_string("model_scale");
        if (scale != "desk" && scale != "paper")
            throw ConfigError("config key 'model_scale' must be desk or paper");
    }
    if (mask & kSubFinetune) {
        const int n = c.get_int("freeze_prefix");
        if (n < 0 || n > 5) throw ConfigError("config key 'freeze_prefix' must be in [0,5]");
        if (c.get_int("shots_per_class") < 0)
            throw ConfigError("config key 'shots_per_class' must be >= 0");
    }
    if (mask & kSubGenData) {
        positive("clips_per_class");
        positive("test_clips_per_class");
        positive("frames");
        positive("height");
        positive("width");
        const double s = c.get_double("cue_strength");
        if (!(s > 0) || s > 1) throw ConfigError("config key 'cue_strength' must be in (0,1]");
        const int ch = c.get_int("channels");
        if (ch != 1 && ch != 3) throw ConfigError("config key 'channels' must be 1 or 3");
    }
    if (mask & kSubAblate) {
        const auto& m = c.get_string("matrix");
        if (m != "rotations" && m != "cliplen")
            throw ConfigError("config key 'matrix' must be rotations or cliplen");
    }
    if (c.has("threads") && c.get_int("threads") < 1)
        throw ConfigError("config key 'threads' must be >= 1");
}

}  // namespace

Config Config::load(const std::string& file_path, const std::vector<std::string>& overrides,
                    unsigned subcommand_mask) {
    Config c;
    for (const auto& k : config_keys())
        if (k.subcommands & subcommand_mask) c.values_[k.name] = k.default_value;

    if (!file_path.empty()) {
        std::ifstream is(file_path);
        if (!is) throw ConfigError("cannot open config file: " + file_path);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto b = line.find_first_not_of(" \t\r");
            if (b == std::string::npos) continue;
            const auto e = line.find_last_not_of(" \t\r");
            apply_line(c.values_, line.substr(b, e - b + 1),
                       file_path + ":" + std::to_string(lineno));
        }
    }
    for (std::size_t i = 0; i < overrides.size(); ++i)
        apply_line(c.values_, overrides[i], "override " + std::to_string(i + 1));

    check_ranges(c, subcommand_mask);
    return c;
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

namespace {
const std::string& require(const std::map<std::string, std::string>& values,
                           const std::string& key) {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("config key '" + key + "' not available here");
    return it->second;
}
}  // namespace

int Config::get_int(const std::string& key) const { return std::stoi(require(values_, key)); }
std::uint64_t Config::get_u64(const std::string& key) const {
    return std::stoull(require(values_, key));
}
double Config::get_double(const std::string& key) const {
    return std::stod(require(values_, key));
}
bool Config::get_bool(const std::string& key) const {
    const auto& v = require(values_, key);
    return v == "1" || v == "true";
}
const std::string& Config::get_string(const std::string& key) const {
    return require(values_, key);
}

TrainConfig train_config_from(const Config& c) {
    TrainConfig t;
    t.seed = c.get_u64("seed");
    if (c.has("batch_size")) t.batch_size = c.get_int("batch_size");
    if (c.has("iterations")) t.iterations = c.get_int("iterations");
    if (c.has("epochs")) t.epochs = c.get_int("epochs");
    if (c.has("lr_initial")) t.lr_initial = c.get_double("lr_initial");
    if (c.has("lr_decay_factor")) t.lr_decay_factor = c.get_double("lr_decay_factor");
    if (c.has("lr_decay_every")) t.lr_decay_every = c.get_int("lr_decay_every");
    if (c.has("momentum")) t.momentum = c.get_double("momentum");
    if (c.has("weight_decay")) t.weight_decay = c.get_double("weight_decay");
    if (c.has("modality")) {
        const auto& m = c.get_string("modality");
        if (m != "rgb" && m != "dif") throw ConfigError("modality must be rgb or dif");
        t.modality = m == "rgb" ? Modality::kRgb : Modality::kDif;
    }
    if (c.has("task")) {
        const auto& task = c.get_string("task");
        if (task == "pretext_classify") t.task = TaskKind::kPretextClassify;
        else if (task == "pretext_regress") t.task = TaskKind::kPretextRegress;
        else throw ConfigError("task must be pretext_classify or pretext_regress");
    }
    if (c.has("rotations")) t.rotations = RotationSet::parse(c.get_string("rotations"));
    if (c.has("regression_norm")) {
        const auto& n = c.get_string("regression_norm");
        if (n != "l1" && n != "l2") throw ConfigError("regression_norm must be l1 or l2");
        t.regression_norm = n == "l1" ? RegressionNorm::kL1 : RegressionNorm::kL2;
    }
    if (c.has("clip_length")) t.clip_length = c.get_int("clip_length");
    if (c.has("resize_to")) t.resize_to = c.get_int("resize_to");
    if (c.has("crop_size")) t.crop_size = c.get_int("crop_size");
    if (c.has("flip_prob")) t.flip_prob = c.get_double("flip_prob");
    if (c.has("freeze_prefix")) t.freeze_prefix = c.get_int("freeze_prefix");
    if (c.has("checkpoint_every")) t.checkpoint_every = c.get_int("checkpoint_every");
    if (c.has("log_every")) t.log_every = c.get_int("log_every");
    if (c.has("eval_max_clips")) t.eval_max_clips = c.get_int("eval_max_clips");
    if (c.has("model_scale"))
        t.model = c.get_string("model_scale") == "paper" ? ModelSpec::paper() : ModelSpec::desk();
    if (c.has("out_dir")) t.out_dir = c.get_string("out_dir");
    if (c.has("run_id")) t.run_id = c.get_string("run_id");
    return t;
}

SynthSpec synth_spec_from(const Config& c) {
    SynthSpec s;
    s.seed = c.get_u64("seed");
    s.clips_per_class = c.get_int("clips_per_class");
    s.frames = c.get_int("frames");
    s.height = c.get_int("height");
    s.width = c.get_int("width");
    s.channels = c.get_int("channels");
    s.cue_strength = c.get_double("cue_strength");
    return s;
}

std::string resolve_data_dir(const Config& c) {
    if (c.has("data_dir") && !c.get_string("data_dir").empty()) return c.get_string("data_dir");
    if (const char* env = std::getenv("ROTPRETEXT_DATA_DIR"); env && env[0] != '\0') return env;
    return ".";
}

}  // namespace rotpretext
