#include "rotpretext/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace rotpretext {

namespace {

// Batched eval forward over preprocessed clips; returns logits rows.
std::vector<std::vector<float>> eval_logits(Model& model, const std::vector<VideoClip>& clips,
                                            int batch = 16) {
    std::vector<std::vector<float>> rows;
    rows.reserve(clips.size());
    for (std::size_t i = 0; i < clips.size(); i += static_cast<std::size_t>(batch)) {
        const std::size_t hi = std::min(clips.size(), i + static_cast<std::size_t>(batch));
        std::vector<VideoClip> chunk(clips.begin() + static_cast<std::ptrdiff_t>(i),
                                     clips.begin() + static_cast<std::ptrdiff_t>(hi));
        Tensor logits = forward(model, stack_clips(chunk), /*training=*/false, nullptr);
        const int k = logits.extent(1);
        for (int r = 0; r < logits.extent(0); ++r) {
            const float* v = logits.values().data() + static_cast<std::size_t>(r) * k;
            rows.emplace_back(v, v + k);
        }
    }
    return rows;
}

int argmax_row(const std::vector<float>& row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

double rotation_accuracy(Model& model, const UnlabeledDataset& data, const RotationSet& set,
                         const TrainConfig& pipeline, int max_clips) {
    if (model.spec.head != HeadKind::kPretext || model.spec.head_classes != set.k())
        throw ConfigError("model pretext head does not match the rotation set (K=" +
                          std::to_string(set.k()) + ")");
    std::size_t n = data.items.size();
    if (max_clips > 0) n = std::min(n, static_cast<std::size_t>(max_clips));
    if (n == 0) throw ConfigError("rotation_accuracy needs a non-empty dataset");

    int correct = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const VideoClip clip = eval_preprocess(load_clip(data.items[i].path), pipeline);
        auto expanded = expand_with_rotations({clip}, set);
        std::vector<VideoClip> nets;
        std::vector<int> labels;
        for (auto& [rc, label] : expanded) {
            nets.push_back(pipeline.modality == Modality::kDif ? compute_dif(rc) : std::move(rc));
            labels.push_back(label);
        }
        const auto rows = eval_logits(model, nets);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (argmax_row(rows[r]) == labels[r]) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / total;
}

PredictionSet predict(Model& model, const LabeledDataset& data, const TrainConfig& pipeline) {
    if (model.spec.head != HeadKind::kTransfer)
        throw ConfigError("predict needs a transfer-head model");
    if (model.spec.head_classes != data.class_count)
        throw ConfigError("model head has " + std::to_string(model.spec.head_classes) +
                          " classes but the dataset has " + std::to_string(data.class_count));
    PredictionSet out;
    out.class_count = data.class_count;
    std::vector<VideoClip> nets;
    for (std::size_t i = 0; i < data.items.size(); ++i) {
        VideoClip clip = eval_preprocess(load_clip(data.items[i].path), pipeline);
        nets.push_back(pipeline.modality == Modality::kDif ? compute_dif(clip) : std::move(clip));
        out.ids.push_back(static_cast<int>(i));
        out.labels.push_back(data.items[i].label);
    }
    const auto rows = eval_logits(model, nets);
    for (const auto& row : rows) {
        Tensor logits = Tensor::from_values({1, static_cast<int>(row.size())},
                                            std::vector<float>(row));
        out.probs.push_back(softmax_rows(logits));
    }
    return out;
}

double prediction_top1(const PredictionSet& p) {
    if (p.probs.empty()) throw ConfigError("empty prediction set");
    int correct = 0;
    for (std::size_t i = 0; i < p.probs.size(); ++i)
        if (argmax_row(p.probs[i]) == p.labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(p.probs.size());
}

double top1_accuracy(Model& model, const LabeledDataset& data, const TrainConfig& pipeline,
                     int max_clips) {
    LabeledDataset view = data;
    if (max_clips > 0 && view.items.size() > static_cast<std::size_t>(max_clips))
        view.items.resize(static_cast<std::size_t>(max_clips));
    return prediction_top1(predict(model, view, pipeline));
}

PredictionSet fuse_predictions(const PredictionSet& a, const PredictionSet& b) {
    if (a.ids != b.ids) throw ConfigError("fused prediction sets must cover the same samples");
    if (a.class_count != b.class_count)
        throw ConfigError("fused prediction sets must share the class count");
    constexpr double kEps = 1e-8;
    PredictionSet out;
    out.ids = a.ids;
    out.labels = a.labels;
    out.class_count = a.class_count;
    out.probs.reserve(a.probs.size());
    for (std::size_t i = 0; i < a.probs.size(); ++i) {
        std::vector<float> fused(a.probs[i].size());
        double sum = 0;
        for (std::size_t k = 0; k < fused.size(); ++k) {
            const double v = std::sqrt(static_cast<double>(a.probs[i][k]) * b.probs[i][k] +
                                       kEps * kEps);
            fused[k] = static_cast<float>(v);
            sum += v;
        }
        for (auto& v : fused) v = static_cast<float>(v / sum);
        out.probs.push_back(std::move(fused));
    }
    return out;
}

LabeledDataset few_shot_subset(const LabeledDataset& data, int shots_per_class,
                               std::uint64_t seed) {
    if (shots_per_class < 1) throw ConfigError("shots_per_class must be >= 1");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < data.items.size(); ++i)
        by_class[data.items[i].label].push_back(i);
    LabeledDataset out;
    out.class_count = data.class_count;
    out.split = data.split;
    for (auto& [label, indices] : by_class) {
        if (static_cast<int>(indices.size()) < shots_per_class)
            throw ConfigError("class " + std::to_string(label) + " has only " +
                              std::to_string(indices.size()) + " samples, needs " +
                              std::to_string(shots_per_class));
        Rng rng = Rng(seed).fork(0xF5000000ULL + static_cast<std::uint64_t>(label));
        rng.shuffle(indices.begin(), indices.end());
        for (int s = 0; s < shots_per_class; ++s) out.items.push_back(data.items[indices[s]]);
    }
    return out;
}

LabeledDataset subsample_dataset(const LabeledDataset& data, std::size_t count,
                                 std::uint64_t seed) {
    if (count == 0 || count > data.items.size())
        throw ConfigError("subsample count must be in [1, dataset size]");
    std::vector<std::size_t> indices(data.items.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    Rng rng = Rng(seed).fork(0xF6000000ULL);
    rng.shuffle(indices.begin(), indices.end());
    LabeledDataset out;
    out.class_count = data.class_count;
    out.split = data.split;
    for (std::size_t i = 0; i < count; ++i) out.items.push_back(data.items[indices[i]]);
    return out;
}

LabeledDataset subsample_dataset(const LabeledDataset& data, double fraction,
                                 std::uint64_t seed) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw ConfigError("subsample fraction must be in (0,1]");
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(fraction * data.items.size())));
    return subsample_dataset(data, count, seed);
}

std::vector<AttentionMap> attention_map(Model& model, const VideoClip& clip) {
    Tensor acts = first_block_activations(model, stack_clips({clip}));
    const int C = acts.extent(1), T = acts.extent(2), H = acts.extent(3), W = acts.extent(4);
    const int out_h = clip.height(), out_w = clip.width();

    std::vector<AttentionMap> maps;
    maps.reserve(static_cast<std::size_t>(T));
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (int t = 0; t < T; ++t) {
        VideoClip mean = VideoClip::zeros(1, 1, H, W);
        for (int c = 0; c < C; ++c) {
            const float* src = acts.values().data() +
                               ((static_cast<std::size_t>(c) * T + t) * H) * W;
            for (int i = 0; i < H * W; ++i) mean.tensor.values()[i] += src[i];
        }
        for (auto& v : mean.tensor.values()) v /= static_cast<float>(C);
        const VideoClip up = resize_bilinear(mean, out_h, out_w);
        AttentionMap m;
        m.height = out_h;
        m.width = out_w;
        m.values.assign(up.tensor.values().begin(), up.tensor.values().end());
        for (float v : m.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        maps.push_back(std::move(m));
    }
    // Min-max normalization is global across frames so relative intensity
    // between frames survives; constant clips normalize to all-zero.
    const float range = hi - lo;
    for (auto& m : maps)
        for (auto& v : m.values) v = range > 0 ? (v - lo) / range : 0.0f;
    return maps;
}

void write_pgm(const std::string& path, int height, int width, std::span<const float> values01) {
    if (static_cast<std::size_t>(height) * width != values01.size())
        throw ShapeError("pgm extents do not match value count");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open pgm for writing: " + path);
    os << "P5\n" << width << " " << height << "\n255\n";
    for (float v : values01) {
        const float clamped = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
    }
    if (!os) throw IoError("failed writing pgm: " + path);
}

void export_attention_pgm(const std::vector<AttentionMap>& maps, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    for (std::size_t t = 0; t < maps.size(); ++t) {
        char name[64];
        std::snprintf(name, sizeof(name), "attn_%03zu.pgm", t);
        write_pgm((std::filesystem::path(out_dir) / name).string(), maps[t].height,
                  maps[t].width, maps[t].values);
    }
}

void export_kernels_pgm(const Model& model, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    const Tensor& w = model.stem.weight;
    const int F = w.extent(0), C = w.extent(1), kT = w.extent(2), kH = w.extent(3),
              kW = w.extent(4);
    const std::size_t slice = static_cast<std::size_t>(kH) * kW;
    for (int f = 0; f < F; ++f) {
        // Collapse input channels, then normalize across the filter's slices.
        std::vector<float> collapsed(static_cast<std::size_t>(kT) * slice, 0.f);
        for (int c = 0; c < C; ++c) {
            const float* src = w.values().data() +
                               ((static_cast<std::size_t>(f) * C + c) * kT) * slice;
            for (std::size_t i = 0; i < collapsed.size(); ++i) collapsed[i] += src[i];
        }
        for (auto& v : collapsed) v /= static_cast<float>(C);
        const auto [lo_it, hi_it] = std::minmax_element(collapsed.begin(), collapsed.end());
        const float lo = *lo_it, range = *hi_it - *lo_it;
        for (auto& v : collapsed) v = range > 0 ? (v - lo) / range : 0.0f;
        for (int t = 0; t < kT; ++t) {
            char name[64];
            std::snprintf(name, sizeof(name), "kernel_%d_%d.pgm", f, t);
            write_pgm((std::filesystem::path(out_dir) / name).string(), kH, kW,
                      std::span<const float>(collapsed.data() + t * slice, slice));
        }
    }
}

namespace {

std::set<std::string> csv_existing_runs(const std::string& csv_path) {
    std::set<std::string> runs;
    std::ifstream is(csv_path);
    if (!is) return runs;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (first) {
            first = false;
            continue;
        }
        const auto comma = line.find(',');
        if (comma != std::string::npos) runs.insert(line.substr(0, comma));
    }
    return runs;
}

void csv_append_row(const std::string& csv_path, const AblateRow& row, bool write_header) {
    std::ofstream os(csv_path, std::ios::app);
    if (!os) throw IoError("cannot open results csv: " + csv_path);
    if (write_header)
        os << "run_id,task,rotations,clip_len,modality,pretext_acc,transfer_acc,seed\n";
    os << row.run_id << "," << row.task << "," << row.rotations << "," << row.clip_len << ","
       << row.modality << "," << row.pretext_acc << "," << row.transfer_acc << "," << row.seed
       << "\n";
}

}  // namespace

std::vector<AblateRow> ablate(const std::vector<AblateRun>& runs, const AblateData& data,
                              const std::string& csv_path) {
    auto existing = csv_existing_runs(csv_path);
    bool need_header = existing.empty() && !std::filesystem::exists(csv_path);
    std::vector<AblateRow> rows;
    for (const auto& run : runs) {
        if (existing.count(run.run_id)) continue;
        AblateRow row;
        row.run_id = run.run_id;
        row.task = task_name(run.pretext.task);
        row.rotations = run.pretext.rotations.to_string();
        row.clip_len = run.pretext.clip_length;
        row.modality = modality_name(run.pretext.modality);
        row.seed = run.pretext.seed;
        try {
            auto pre = pretrain(run.pretext, data.pretext_train, &data.pretext_eval);
            row.pretext_acc =
                run.pretext.task == TaskKind::kPretextClassify
                    ? rotation_accuracy(pre.model, data.pretext_eval, run.pretext.rotations,
                                        run.pretext)
                    : std::nan("");
            auto fine = finetune(run.transfer, &pre.model, data.transfer_train,
                                 &data.transfer_test);
            row.transfer_acc = top1_accuracy(fine.model, data.transfer_test, run.transfer);
        } catch (const std::exception&) {
            row.failed = true;
            row.pretext_acc = std::nan("");
            row.transfer_acc = std::nan("");
        }
        csv_append_row(csv_path, row, need_header);
        need_header = false;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<AblateRun> rotation_set_matrix(const TrainConfig& pretext_base,
                                           const TrainConfig& transfer_base) {
    const std::vector<std::vector<double>> sets = {
        {0, 90}, {0, 90, 180}, {0, 90, 180, 270}, {90, 180, 270}};
    std::vector<AblateRun> runs;
    for (const auto& degrees : sets) {
        AblateRun run;
        run.pretext = pretext_base;
        run.pretext.rotations = RotationSet(degrees);
        run.transfer = transfer_base;
        std::string id = "rot";
        for (double d : degrees) id += "_" + std::to_string(static_cast<int>(d));
        run.run_id = id;
        runs.push_back(std::move(run));
    }
    return runs;
}

std::vector<AblateRun> clip_length_matrix(const TrainConfig& pretext_base,
                                          const TrainConfig& transfer_base) {
    std::vector<AblateRun> runs;
    for (int len : {8, 16}) {
        for (Modality m : {Modality::kRgb, Modality::kDif}) {
            AblateRun run;
            run.pretext = pretext_base;
            run.pretext.clip_length = len;
            run.pretext.modality = m;
            run.transfer = transfer_base;
            run.transfer.clip_length = len;
            run.transfer.modality = m;
            run.run_id = "len" + std::to_string(len) + "_" + modality_name(m);
            runs.push_back(std::move(run));
        }
    }
    return runs;
}

}  // namespace rotpretext
