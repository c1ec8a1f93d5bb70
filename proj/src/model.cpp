#include "rotpretext/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rotpretext {

ModelSpec ModelSpec::desk() { return ModelSpec{}; }

ModelSpec ModelSpec::paper() {
    ModelSpec s;
    s.input_channels = 3;
    s.input_frames = 16;
    s.input_size = 112;
    s.block_widths = {64, 64, 128, 256, 512};
    s.stem_kernel = {7, 7, 7};
    s.stem_stride = {1, 2, 2};
    s.stem_padding = {3, 3, 3};
    s.stem_pool = true;
    s.downsample_stride = {2, 2, 2};
    s.units_per_block = 2;
    return s;
}

void ModelSpec::validate() const {
    if (input_channels < 1 || input_frames < 1 || input_size < 1)
        throw ConfigError("model input extents must be positive");
    for (int w : block_widths)
        if (w < 1) throw ConfigError("block widths must be positive");
    if (units_per_block < 1) throw ConfigError("units_per_block must be >= 1");
    if (head_classes < 1) throw ConfigError("head class count must be >= 1");
    if (head == HeadKind::kPretext && head_hidden < 1)
        throw ConfigError("pretext head hidden width must be >= 1");
}

namespace {

std::string dims_to_string(const Dims3& d) {
    std::ostringstream os;
    os << d[0] << "," << d[1] << "," << d[2];
    return os.str();
}

Dims3 dims_from_string(const std::string& s) {
    Dims3 d{};
    if (std::sscanf(s.c_str(), "%d,%d,%d", &d[0], &d[1], &d[2]) != 3)
        throw ConfigError("bad dims triple: " + s);
    return d;
}

}  // namespace

std::string ModelSpec::serialize() const {
    std::ostringstream os;
    os << "input_channels=" << input_channels << "\n";
    os << "input_frames=" << input_frames << "\n";
    os << "input_size=" << input_size << "\n";
    os << "block_widths=" << block_widths[0] << "," << block_widths[1] << "," << block_widths[2]
       << "," << block_widths[3] << "," << block_widths[4] << "\n";
    os << "stem_kernel=" << dims_to_string(stem_kernel) << "\n";
    os << "stem_stride=" << dims_to_string(stem_stride) << "\n";
    os << "stem_padding=" << dims_to_string(stem_padding) << "\n";
    os << "stem_pool=" << (stem_pool ? 1 : 0) << "\n";
    os << "pool_kernel=" << dims_to_string(pool_kernel) << "\n";
    os << "pool_stride=" << dims_to_string(pool_stride) << "\n";
    os << "pool_padding=" << dims_to_string(pool_padding) << "\n";
    os << "residual_kernel=" << dims_to_string(residual_kernel) << "\n";
    os << "downsample_stride=" << dims_to_string(downsample_stride) << "\n";
    os << "units_per_block=" << units_per_block << "\n";
    os << "head=" << (head == HeadKind::kPretext ? "pretext" : "transfer") << "\n";
    os << "head_classes=" << head_classes << "\n";
    os << "head_hidden=" << head_hidden << "\n";
    return os.str();
}

ModelSpec ModelSpec::deserialize(const std::string& text) {
    ModelSpec s;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("bad model spec line: " + line);
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "input_channels") s.input_channels = std::stoi(val);
        else if (key == "input_frames") s.input_frames = std::stoi(val);
        else if (key == "input_size") s.input_size = std::stoi(val);
        else if (key == "block_widths") {
            if (std::sscanf(val.c_str(), "%d,%d,%d,%d,%d", &s.block_widths[0], &s.block_widths[1],
                            &s.block_widths[2], &s.block_widths[3], &s.block_widths[4]) != 5)
                throw ConfigError("bad block_widths: " + val);
        } else if (key == "stem_kernel") s.stem_kernel = dims_from_string(val);
        else if (key == "stem_stride") s.stem_stride = dims_from_string(val);
        else if (key == "stem_padding") s.stem_padding = dims_from_string(val);
        else if (key == "stem_pool") s.stem_pool = val == "1";
        else if (key == "pool_kernel") s.pool_kernel = dims_from_string(val);
        else if (key == "pool_stride") s.pool_stride = dims_from_string(val);
        else if (key == "pool_padding") s.pool_padding = dims_from_string(val);
        else if (key == "residual_kernel") s.residual_kernel = dims_from_string(val);
        else if (key == "downsample_stride") s.downsample_stride = dims_from_string(val);
        else if (key == "units_per_block") s.units_per_block = std::stoi(val);
        else if (key == "head") s.head = val == "pretext" ? HeadKind::kPretext : HeadKind::kTransfer;
        else if (key == "head_classes") s.head_classes = std::stoi(val);
        else if (key == "head_hidden") s.head_hidden = std::stoi(val);
        else throw ConfigError("unknown model spec key: " + key);
    }
    s.validate();
    return s;
}

namespace {

Dims3 half_padding(const Dims3& kernel) {
    return {kernel[0] / 2, kernel[1] / 2, kernel[2] / 2};
}

Conv3dLayer make_conv(int c_out, int c_in, const Dims3& kernel, const Dims3& stride,
                      const Dims3& padding, Rng& rng) {
    Conv3dLayer layer;
    const int fan_in = c_in * kernel[0] * kernel[1] * kernel[2];
    const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
    layer.weight = Tensor::uniform({c_out, c_in, kernel[0], kernel[1], kernel[2]}, -bound, bound,
                                   rng, true);
    layer.bias = Tensor::zeros({c_out}, true);
    layer.geom.stride = stride;
    layer.geom.padding = padding;
    return layer;
}

BatchNormLayer make_bn(int channels) {
    BatchNormLayer bn;
    bn.gamma = Tensor::full({channels}, 1.0f, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running = BatchNormStats<float>::init(channels);
    return bn;
}

LinearLayer make_linear(int d_out, int d_in, Rng& rng) {
    LinearLayer l;
    const float bound = 1.0f / std::sqrt(static_cast<float>(d_in));
    l.weight = Tensor::uniform({d_out, d_in}, -bound, bound, rng, true);
    l.bias = Tensor::zeros({d_out}, true);
    return l;
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    Model m;
    m.spec = spec;
    Rng rng(seed);

    m.stem = make_conv(spec.block_widths[0], spec.input_channels, spec.stem_kernel,
                       spec.stem_stride, spec.stem_padding, rng);
    m.stem_bn = make_bn(spec.block_widths[0]);

    const Dims3 ones{1, 1, 1};
    m.blocks.resize(4);
    for (int b = 0; b < 4; ++b) {
        const int c_in_block = spec.block_widths[b];
        const int c_out = spec.block_widths[b + 1];
        const Dims3 block_stride = b == 0 ? ones : spec.downsample_stride;
        for (int u = 0; u < spec.units_per_block; ++u) {
            const int c_in = u == 0 ? c_in_block : c_out;
            const Dims3 stride = u == 0 ? block_stride : ones;
            ResidualUnit unit;
            unit.conv1 = make_conv(c_out, c_in, spec.residual_kernel, stride,
                                   half_padding(spec.residual_kernel), rng);
            unit.bn1 = make_bn(c_out);
            unit.conv2 = make_conv(c_out, c_out, spec.residual_kernel, ones,
                                   half_padding(spec.residual_kernel), rng);
            unit.bn2 = make_bn(c_out);
            unit.has_proj = c_in != c_out || stride != ones;
            if (unit.has_proj) {
                unit.proj = make_conv(c_out, c_in, ones, stride, {0, 0, 0}, rng);
                unit.proj_bn = make_bn(c_out);
            }
            m.blocks[static_cast<std::size_t>(b)].push_back(std::move(unit));
        }
    }

    if (spec.head == HeadKind::kPretext) {
        m.head_fc1 = make_linear(spec.head_hidden, spec.feature_dim(), rng);
        m.head_out = make_linear(spec.head_classes, spec.head_hidden, rng);
    } else {
        m.head_out = make_linear(spec.head_classes, spec.feature_dim(), rng);
    }
    return m;
}

namespace {

Tensor bn_forward(Model& m, BatchNormLayer& bn, const Tensor& x, bool training, bool frozen,
                  Tape* tape) {
    // Frozen layers run on their running statistics and never update them.
    const bool train_mode = training && !frozen;
    return batchnorm3d(tape, x, bn.gamma, bn.beta, bn.running, train_mode,
                       static_cast<float>(m.bn_momentum), m.bn_epsilon,
                       /*update_running=*/train_mode);
}

Tensor unit_forward(Model& m, ResidualUnit& unit, const Tensor& x, bool training, bool frozen,
                    Tape* tape) {
    Tensor h = conv3d(tape, x, unit.conv1.weight, unit.conv1.bias, unit.conv1.geom);
    h = relu(tape, bn_forward(m, unit.bn1, h, training, frozen, tape));
    h = conv3d(tape, h, unit.conv2.weight, unit.conv2.bias, unit.conv2.geom);
    h = bn_forward(m, unit.bn2, h, training, frozen, tape);
    Tensor skip = x;
    if (unit.has_proj) {
        skip = conv3d(tape, x, unit.proj.weight, unit.proj.bias, unit.proj.geom);
        skip = bn_forward(m, unit.proj_bn, skip, training, frozen, tape);
    }
    return relu(tape, add(tape, h, skip));
}

void check_batch_shape(const Model& m, const Tensor& batch) {
    const auto& s = batch.shape();
    if (s.size() != 5)
        throw ShapeError("forward expects a [N,C,T,H,W] batch, got " + shape_to_string(s));
    if (s[1] != m.spec.input_channels || s[2] != m.spec.input_frames ||
        s[3] != m.spec.input_size || s[4] != m.spec.input_size)
        throw ShapeError("batch " + shape_to_string(s) + " does not match model input [" +
                         std::to_string(m.spec.input_channels) + "," +
                         std::to_string(m.spec.input_frames) + "," +
                         std::to_string(m.spec.input_size) + "," +
                         std::to_string(m.spec.input_size) + "]");
}

}  // namespace

Tensor forward(Model& m, const Tensor& batch, bool training, Tape* tape,
               std::vector<Tensor>* taps) {
    check_batch_shape(m, batch);
    if (!training) tape = nullptr;  // eval mode records nothing

    const int n_frozen = m.trainable_from_block;
    Tensor x = conv3d(tape, batch, m.stem.weight, m.stem.bias, m.stem.geom);
    x = relu(tape, bn_forward(m, m.stem_bn, x, training, n_frozen > 0, tape));
    if (m.spec.stem_pool)
        x = maxpool3d(tape, x, m.spec.pool_kernel, m.spec.pool_stride, m.spec.pool_padding);
    if (taps) taps->push_back(x);

    for (int b = 0; b < 4; ++b) {
        const bool frozen = (b + 1) < n_frozen;
        for (auto& unit : m.blocks[static_cast<std::size_t>(b)])
            x = unit_forward(m, unit, x, training, frozen, tape);
        if (taps) taps->push_back(x);
    }

    Tensor feat = global_avg_pool(tape, x);
    if (m.spec.head == HeadKind::kPretext) {
        feat = relu(tape, linear(tape, feat, m.head_fc1.weight, m.head_fc1.bias));
    }
    return linear(tape, feat, m.head_out.weight, m.head_out.bias);
}

void set_trainable_prefix(Model& m, int n) {
    if (n < 0 || n > 5) throw ConfigError("trainable prefix must be in [0,5]");
    m.trainable_from_block = n;
    for (auto& p : named_parameters(m)) {
        const bool trainable = p.block < 0 || p.block >= n;
        p.tensor.set_requires_grad(trainable);
    }
}

Tensor first_block_activations(Model& m, const Tensor& batch) {
    check_batch_shape(m, batch);
    Tensor x = conv3d<float>(nullptr, batch, m.stem.weight, m.stem.bias, m.stem.geom);
    x = batchnorm3d<float>(nullptr, x, m.stem_bn.gamma, m.stem_bn.beta, m.stem_bn.running,
                           /*training=*/false, static_cast<float>(m.bn_momentum), m.bn_epsilon,
                           /*update_running=*/false);
    return relu<float>(nullptr, x);
}

namespace {

void collect_params(const Model& m, std::vector<NamedParam>& out) {
    out.push_back({"stem.conv.weight", m.stem.weight, 0});
    out.push_back({"stem.conv.bias", m.stem.bias, 0});
    out.push_back({"stem.bn.gamma", m.stem_bn.gamma, 0});
    out.push_back({"stem.bn.beta", m.stem_bn.beta, 0});
    for (int b = 0; b < 4; ++b) {
        for (std::size_t u = 0; u < m.blocks[static_cast<std::size_t>(b)].size(); ++u) {
            const auto& unit = m.blocks[static_cast<std::size_t>(b)][u];
            const std::string prefix =
                "block" + std::to_string(b + 1) + ".unit" + std::to_string(u) + ".";
            const int blk = b + 1;
            out.push_back({prefix + "conv1.weight", unit.conv1.weight, blk});
            out.push_back({prefix + "conv1.bias", unit.conv1.bias, blk});
            out.push_back({prefix + "bn1.gamma", unit.bn1.gamma, blk});
            out.push_back({prefix + "bn1.beta", unit.bn1.beta, blk});
            out.push_back({prefix + "conv2.weight", unit.conv2.weight, blk});
            out.push_back({prefix + "conv2.bias", unit.conv2.bias, blk});
            out.push_back({prefix + "bn2.gamma", unit.bn2.gamma, blk});
            out.push_back({prefix + "bn2.beta", unit.bn2.beta, blk});
            if (unit.has_proj) {
                out.push_back({prefix + "proj.weight", unit.proj.weight, blk});
                out.push_back({prefix + "proj.bias", unit.proj.bias, blk});
                out.push_back({prefix + "proj_bn.gamma", unit.proj_bn.gamma, blk});
                out.push_back({prefix + "proj_bn.beta", unit.proj_bn.beta, blk});
            }
        }
    }
    if (m.spec.head == HeadKind::kPretext) {
        out.push_back({"head.fc1.weight", m.head_fc1.weight, -1});
        out.push_back({"head.fc1.bias", m.head_fc1.bias, -1});
    }
    out.push_back({"head.out.weight", m.head_out.weight, -1});
    out.push_back({"head.out.bias", m.head_out.bias, -1});
}

void collect_running(const Model& m, std::vector<NamedTensor>& out) {
    auto push_bn = [&out](const std::string& prefix, const BatchNormLayer& bn) {
        const int c = bn.gamma.extent(0);
        out.push_back({prefix + "running_mean",
                       Tensor::from_values({c}, std::vector<float>(bn.running.mean))});
        out.push_back({prefix + "running_var",
                       Tensor::from_values({c}, std::vector<float>(bn.running.var))});
    };
    push_bn("stem.bn.", m.stem_bn);
    for (int b = 0; b < 4; ++b)
        for (std::size_t u = 0; u < m.blocks[static_cast<std::size_t>(b)].size(); ++u) {
            const auto& unit = m.blocks[static_cast<std::size_t>(b)][u];
            const std::string prefix =
                "block" + std::to_string(b + 1) + ".unit" + std::to_string(u) + ".";
            push_bn(prefix + "bn1.", unit.bn1);
            push_bn(prefix + "bn2.", unit.bn2);
            if (unit.has_proj) push_bn(prefix + "proj_bn.", unit.proj_bn);
        }
}

}  // namespace

std::vector<NamedParam> named_parameters(const Model& m) {
    std::vector<NamedParam> out;
    collect_params(m, out);
    return out;
}

std::vector<NamedParam> trainable_parameters(const Model& m) {
    std::vector<NamedParam> out;
    collect_params(m, out);
    std::erase_if(out, [](const NamedParam& p) { return !p.tensor.requires_grad(); });
    return out;
}

std::size_t parameter_count(const Model& m) {
    std::size_t n = 0;
    for (const auto& p : named_parameters(m)) n += p.tensor.size();
    return n;
}

std::vector<NamedTensor> model_state(const Model& m) {
    std::vector<NamedTensor> out;
    for (const auto& p : named_parameters(m)) out.push_back({p.name, p.tensor});
    collect_running(m, out);
    return out;
}

void save_model(const std::string& path, const Model& m,
                const std::map<std::string, std::string>& metadata,
                const std::vector<NamedTensor>& extra_records) {
    std::ostringstream meta;
    meta << m.spec.serialize();
    for (const auto& [k, v] : metadata) meta << k << "=" << v << "\n";
    std::vector<NamedTensor> records;
    records.push_back({"__meta__", pack_text(meta.str())});
    for (auto& rec : model_state(m)) records.push_back(std::move(rec));
    for (const auto& rec : extra_records) records.push_back(rec);
    save_checkpoint(path, records);
}

LoadedModel load_model(const std::string& path) {
    auto records = load_checkpoint(path);
    std::string meta_text;
    std::map<std::string, Tensor> by_name;
    std::vector<NamedTensor> ordered;
    for (auto& rec : records) {
        if (rec.name == "__meta__") {
            meta_text = unpack_text(rec.tensor);
        } else {
            by_name.emplace(rec.name, rec.tensor);
            ordered.push_back(rec);
        }
    }
    if (meta_text.empty())
        throw FormatError(FormatError::Kind::BadValue, "checkpoint has no metadata: " + path);

    // Split metadata into spec keys and the rest.
    std::map<std::string, std::string> metadata;
    std::ostringstream spec_text;
    {
        static const char* spec_keys[] = {
            "input_channels", "input_frames", "input_size", "block_widths", "stem_kernel",
            "stem_stride", "stem_padding", "stem_pool", "pool_kernel", "pool_stride",
            "pool_padding", "residual_kernel", "downsample_stride", "units_per_block", "head",
            "head_classes", "head_hidden"};
        std::istringstream is(meta_text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            const bool is_spec = std::find_if(std::begin(spec_keys), std::end(spec_keys),
                                              [&key](const char* k) { return key == k; }) !=
                                 std::end(spec_keys);
            if (is_spec)
                spec_text << line << "\n";
            else
                metadata[key] = line.substr(eq + 1);
        }
    }

    LoadedModel out{build_model(ModelSpec::deserialize(spec_text.str()), 0), metadata, {}};
    std::vector<std::string> consumed;
    for (auto& p : named_parameters(out.model)) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw FormatError(FormatError::Kind::BadValue,
                              "checkpoint missing parameter " + p.name + ": " + path);
        if (it->second.shape() != p.tensor.shape())
            throw FormatError(FormatError::Kind::BadValue,
                              "checkpoint shape mismatch for " + p.name + ": " + path);
        std::copy(it->second.values().begin(), it->second.values().end(),
                  p.tensor.values().begin());
        consumed.push_back(p.name);
    }
    auto load_bn = [&by_name, &path](const std::string& prefix, BatchNormLayer& bn,
                                     std::vector<std::string>& used) {
        for (const char* stat : {"running_mean", "running_var"}) {
            auto it = by_name.find(prefix + stat);
            if (it == by_name.end())
                throw FormatError(FormatError::Kind::BadValue,
                                  "checkpoint missing " + prefix + stat + ": " + path);
            auto& dst = std::string(stat) == "running_mean" ? bn.running.mean : bn.running.var;
            if (it->second.size() != dst.size())
                throw FormatError(FormatError::Kind::BadValue,
                                  "checkpoint stat size mismatch for " + prefix + stat);
            std::copy(it->second.values().begin(), it->second.values().end(), dst.begin());
            used.push_back(prefix + stat);
        }
    };
    load_bn("stem.bn.", out.model.stem_bn, consumed);
    for (int b = 0; b < 4; ++b)
        for (std::size_t u = 0; u < out.model.blocks[static_cast<std::size_t>(b)].size(); ++u) {
            auto& unit = out.model.blocks[static_cast<std::size_t>(b)][u];
            const std::string prefix =
                "block" + std::to_string(b + 1) + ".unit" + std::to_string(u) + ".";
            load_bn(prefix + "bn1.", unit.bn1, consumed);
            load_bn(prefix + "bn2.", unit.bn2, consumed);
            if (unit.has_proj) load_bn(prefix + "proj_bn.", unit.proj_bn, consumed);
        }

    for (auto& rec : ordered) {
        if (std::find(consumed.begin(), consumed.end(), rec.name) == consumed.end())
            out.extra_records.push_back(std::move(rec));
    }
    return out;
}

}  // namespace rotpretext
