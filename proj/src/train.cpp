#include "rotpretext/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "rotpretext/eval.hpp"

namespace rotpretext {

const char* task_name(TaskKind t) {
    switch (t) {
        case TaskKind::kPretextClassify: return "pretext_classify";
        case TaskKind::kPretextRegress: return "pretext_regress";
        case TaskKind::kTransfer: return "transfer";
    }
    return "unknown";
}

const char* modality_name(Modality m) {
    return m == Modality::kRgb ? "rgb" : "dif";
}

void TrainConfig::validate() const {
    if (!(lr_initial > 0)) throw ConfigError("lr_initial must be > 0");
    if (!(lr_decay_factor > 0) || lr_decay_factor > 1)
        throw ConfigError("lr_decay_factor must be in (0,1]");
    if (lr_decay_every < 1) throw ConfigError("lr_decay_every must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (iterations < 0 || epochs < 0) throw ConfigError("iteration budget must be >= 0");
    if (clip_length < 1) throw ConfigError("clip_length must be >= 1");
    if (task != TaskKind::kTransfer && modality == Modality::kDif && clip_length < 2)
        throw ConfigError("difference clips need clip_length >= 2");
    if (crop_size < 1) throw ConfigError("crop_size must be >= 1");
    if (flip_prob < 0 || flip_prob > 1) throw ConfigError("flip_prob must be in [0,1]");
    if (freeze_prefix < 0 || freeze_prefix > 5) throw ConfigError("freeze_prefix must be in [0,5]");
    if (task == TaskKind::kPretextClassify && rotations.k() < 2)
        throw ConfigError("classification needs at least 2 rotations");
}

double lr_at_iteration(const TrainConfig& c, int t) {
    if (t < 0) throw ConfigError("iteration must be >= 0");
    return c.lr_initial * std::pow(c.lr_decay_factor, static_cast<double>(t / c.lr_decay_every));
}

void RunLog::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open run log for writing: " + path);
    os << "iter,loss,lr,train_acc,eval_acc,seconds\n";
    for (const auto& r : rows)
        os << r.iter << "," << r.loss << "," << r.lr << "," << r.train_acc << "," << r.eval_acc
           << "," << r.seconds << "\n";
    if (!os) throw IoError("failed writing run log: " + path);
}

ModelSpec resolve_model_spec(const TrainConfig& c, int data_channels) {
    ModelSpec spec = c.model;
    spec.input_channels = data_channels;
    spec.input_frames = c.modality == Modality::kDif ? c.clip_length - 1 : c.clip_length;
    if (c.task == TaskKind::kTransfer) {
        spec.input_size = c.crop_size;
        spec.head = HeadKind::kTransfer;
    } else {
        spec.input_size = c.rotations.expanded_extent(c.crop_size);
        spec.head = HeadKind::kPretext;
        spec.head_classes = c.task == TaskKind::kPretextClassify ? c.rotations.k() : 1;
    }
    spec.validate();
    return spec;
}

VideoClip augment_clip(const VideoClip& stored, const TrainConfig& c, Rng& rng) {
    VideoClip clip = sample_subclip(stored, std::min(c.clip_length, stored.frames()), rng);
    if (c.resize_to > 0) clip = resize_bilinear(clip, c.resize_to, c.resize_to);
    clip = spatial_crop(clip, c.crop_size, CropMode::kRandom, &rng);
    return horizontal_flip(clip, c.flip_prob, rng);
}

VideoClip eval_preprocess(const VideoClip& stored, const TrainConfig& c) {
    const int len = std::min(c.clip_length, stored.frames());
    const int start = (stored.frames() - len) / 2;
    VideoClip clip = stored;
    if (start > 0 || len != stored.frames()) {
        VideoClip window = VideoClip::zeros(clip.channels(), len, clip.height(), clip.width());
        for (int ch = 0; ch < clip.channels(); ++ch)
            for (int t = 0; t < len; ++t)
                for (int y = 0; y < clip.height(); ++y)
                    for (int x = 0; x < clip.width(); ++x)
                        window.at(ch, t, y, x) = clip.at(ch, start + t, y, x);
        clip = window;
    }
    if (c.resize_to > 0) clip = resize_bilinear(clip, c.resize_to, c.resize_to);
    return spatial_crop(clip, c.crop_size, CropMode::kCenter, nullptr);
}

namespace {

struct AssembledBatch {
    Tensor inputs;
    std::vector<int> labels;       // classification
    std::vector<float> targets;    // regression
};

AssembledBatch assemble_pretext_batch(const std::vector<VideoClip>& clips, const RotationSet& set,
                                      const TrainConfig& c) {
    auto expanded = expand_with_rotations(clips, set);
    std::vector<VideoClip> nets;
    nets.reserve(expanded.size());
    AssembledBatch out;
    for (auto& [clip, label] : expanded) {
        nets.push_back(c.modality == Modality::kDif ? compute_dif(clip) : std::move(clip));
        out.labels.push_back(label);
        out.targets.push_back(static_cast<float>(set.regression_target(label)));
    }
    out.inputs = stack_clips(nets);
    return out;
}

double batch_accuracy_classify(const Tensor& logits, std::span<const int> labels) {
    const int n = logits.extent(0), k = logits.extent(1);
    int correct = 0;
    const float* v = logits.values().data();
    for (int i = 0; i < n; ++i) {
        const float* row = v + static_cast<std::size_t>(i) * k;
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (row[j] > row[arg]) arg = j;
        if (arg == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

double batch_accuracy_regress(const Tensor& pred, std::span<const float> targets) {
    const int n = pred.extent(0);
    int close = 0;
    const float* v = pred.values().data();
    for (int i = 0; i < n; ++i) {
        double d = std::abs(static_cast<double>(v[i]) - targets[i]);
        d = std::min(d, 1.0 - d);  // wraparound distance on the angle circle
        if (d < 0.125) ++close;
    }
    return static_cast<double>(close) / n;
}

struct OptimizerBinding {
    std::vector<NamedParam> params;
    std::vector<Tensor> tensors;
};

OptimizerBinding bind_trainable(Model& model, SgdState& opt) {
    OptimizerBinding b;
    b.params = trainable_parameters(model);
    for (const auto& p : b.params) b.tensors.push_back(p.tensor);
    if (opt.names.empty()) {
        for (const auto& p : b.params) opt.names.push_back(p.name);
        opt.velocity.assign(b.params.size(), {});
    } else if (opt.names.size() != b.params.size()) {
        throw ConfigError("optimizer state does not match trainable parameter set");
    }
    return b;
}

double run_step(Model& model, const Tensor& inputs, std::span<const int> labels,
                std::span<const float> targets, const TrainConfig& c, double lr, SgdState& opt,
                double* train_acc) {
    Tape tape;
    Tensor logits = forward(model, inputs, /*training=*/true, &tape);
    Tensor loss;
    if (c.task == TaskKind::kPretextRegress) {
        loss = regression_loss(&tape, logits, targets, c.regression_norm);
        if (train_acc) *train_acc = batch_accuracy_regress(logits, targets);
    } else {
        loss = softmax_cross_entropy(&tape, logits, labels);
        if (train_acc) *train_acc = batch_accuracy_classify(logits, labels);
    }
    backward(loss, tape);
    auto binding = bind_trainable(model, opt);
    sgd_step<float>(binding.tensors, static_cast<float>(lr), static_cast<float>(c.momentum),
                    static_cast<float>(c.weight_decay), opt.velocity);
    return loss.item();
}

int total_iterations(const TrainConfig& c, std::size_t dataset_size) {
    if (c.iterations > 0) return c.iterations;
    const int steps_per_epoch =
        static_cast<int>((dataset_size + c.batch_size - 1) / c.batch_size);
    return c.epochs * steps_per_epoch;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = Rng(seed).fork(0xE0000000ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(order.begin(), order.end());
    return order;
}

std::vector<NamedTensor> velocity_records(const SgdState& opt) {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < opt.names.size(); ++i) {
        if (opt.velocity[i].empty()) continue;
        out.push_back({"opt.velocity." + opt.names[i],
                       Tensor::from_values({static_cast<int>(opt.velocity[i].size())},
                                           std::vector<float>(opt.velocity[i]))});
    }
    return out;
}

void restore_velocity(SgdState& opt, const OptimizerBinding& binding,
                      const std::vector<NamedTensor>& extra) {
    for (std::size_t i = 0; i < binding.params.size(); ++i) {
        const std::string key = "opt.velocity." + binding.params[i].name;
        for (const auto& rec : extra) {
            if (rec.name == key) {
                opt.velocity[i].assign(rec.tensor.values().begin(), rec.tensor.values().end());
                break;
            }
        }
    }
}

void save_run_checkpoint(const TrainConfig& c, const Model& model, const SgdState& opt, int iter,
                         const std::string& path) {
    std::map<std::string, std::string> meta;
    meta["iter"] = std::to_string(iter);
    meta["task"] = task_name(c.task);
    meta["modality"] = modality_name(c.modality);
    meta["rotations"] = c.rotations.to_string();
    meta["clip_length"] = std::to_string(c.clip_length);
    meta["crop_size"] = std::to_string(c.crop_size);
    meta["resize_to"] = std::to_string(c.resize_to);
    save_model(path, model, meta, velocity_records(opt));
}

// Shared driver; `labels` is empty for the self-supervised path.
TrainResult train_loop(const TrainConfig& c, Model model, const std::vector<std::string>& paths,
                       const std::vector<int>& labels, const LabeledDataset* eval_labeled,
                       const UnlabeledDataset* eval_unlabeled, int start_iter, SgdState opt) {
    const std::size_t n = paths.size();
    if (n == 0) throw ConfigError("training dataset is empty");
    ClipCache cache{paths};
    const int iters = total_iterations(c, n);
    const int steps_per_epoch = static_cast<int>((n + c.batch_size - 1) / c.batch_size);

    RunLog log;
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };

    if (!c.out_dir.empty()) std::filesystem::create_directories(c.out_dir);
    const std::string ckpt_base =
        c.out_dir.empty() ? "" : (std::filesystem::path(c.out_dir) / c.run_id).string();

    double eval_acc = std::nan("");
    auto evaluate = [&](Model& m) {
        if (c.task == TaskKind::kTransfer) {
            if (eval_labeled) eval_acc = top1_accuracy(m, *eval_labeled, c, c.eval_max_clips);
        } else if (c.task == TaskKind::kPretextClassify) {
            if (eval_unlabeled)
                eval_acc = rotation_accuracy(m, *eval_unlabeled, c.rotations, c, c.eval_max_clips);
        }
    };

    for (int iter = start_iter; iter < iters; ++iter) {
        const int epoch = iter / steps_per_epoch;
        const int pos = iter % steps_per_epoch;
        const auto order = epoch_order(c.seed, epoch, n);

        std::vector<VideoClip> clips;
        std::vector<int> batch_labels;
        clips.reserve(static_cast<std::size_t>(c.batch_size));
        for (int j = 0; j < c.batch_size; ++j) {
            const std::size_t idx =
                order[(static_cast<std::size_t>(pos) * c.batch_size + j) % n];
            Rng rng = Rng(c.seed).fork(0xA0000000ULL + static_cast<std::uint64_t>(iter) * 4096 +
                                       static_cast<std::uint64_t>(j));
            clips.push_back(augment_clip(cache.get(idx), c, rng));
            if (!labels.empty()) batch_labels.push_back(labels[idx]);
        }

        const double lr = lr_at_iteration(c, iter);
        double train_acc = 0;
        double loss;
        if (c.task == TaskKind::kTransfer) {
            std::vector<VideoClip> nets;
            nets.reserve(clips.size());
            for (auto& clip : clips)
                nets.push_back(c.modality == Modality::kDif ? compute_dif(clip) : std::move(clip));
            loss = run_step(model, stack_clips(nets), batch_labels, {}, c, lr, opt, &train_acc);
        } else {
            auto batch = assemble_pretext_batch(clips, c.rotations, c);
            loss = run_step(model, batch.inputs, batch.labels, batch.targets, c, lr, opt,
                            &train_acc);
        }
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss");

        const bool last = iter + 1 == iters;
        if ((c.log_every > 0 && (iter + 1) % c.log_every == 0) || last) {
            evaluate(model);
            log.rows.push_back({iter + 1, loss, lr, train_acc, eval_acc, elapsed()});
        }
        if (!ckpt_base.empty() && c.checkpoint_every > 0 && (iter + 1) % c.checkpoint_every == 0 &&
            !last) {
            save_run_checkpoint(c, model, opt, iter + 1,
                                ckpt_base + "_" + std::to_string(iter + 1) + ".rpck");
        }
    }

    if (iters <= start_iter) {
        // Zero-length run: still emit a final row so the log is well formed.
        evaluate(model);
        log.rows.push_back({start_iter, 0.0, lr_at_iteration(c, start_iter), 0.0, eval_acc,
                            elapsed()});
    }

    if (!ckpt_base.empty()) {
        save_run_checkpoint(c, model, opt, iters, ckpt_base + "_final.rpck");
        log.write_csv(ckpt_base + "_log.csv");
    }
    return {std::move(model), std::move(log)};
}

}  // namespace

double pretrain_step(Model& model, const std::vector<VideoClip>& clips, const RotationSet& set,
                     const TrainConfig& c, double lr, SgdState& opt, double* train_acc) {
    auto batch = assemble_pretext_batch(clips, set, c);
    return run_step(model, batch.inputs, batch.labels, batch.targets, c, lr, opt, train_acc);
}

TrainResult pretrain(const TrainConfig& c, const UnlabeledDataset& train,
                     const UnlabeledDataset* eval_set, const std::string& resume_checkpoint) {
    c.validate();
    if (c.task == TaskKind::kTransfer)
        throw ConfigError("pretrain handles pretext tasks only");
    if (train.items.empty()) throw ConfigError("pretraining dataset is empty");

    std::vector<std::string> paths;
    for (const auto& item : train.items) paths.push_back(item.path);

    Model model;
    SgdState opt;
    int start_iter = 0;
    if (!resume_checkpoint.empty()) {
        auto loaded = load_model(resume_checkpoint);
        model = std::move(loaded.model);
        start_iter = std::stoi(loaded.metadata.at("iter"));
        set_trainable_prefix(model, c.freeze_prefix);
        auto binding = bind_trainable(model, opt);
        restore_velocity(opt, binding, loaded.extra_records);
    } else {
        const int channels = load_clip(paths.front()).channels();
        model = build_model(resolve_model_spec(c, channels), c.seed);
        set_trainable_prefix(model, c.freeze_prefix);
    }
    return train_loop(c, std::move(model), paths, {}, nullptr, eval_set, start_iter,
                      std::move(opt));
}

TrainResult finetune(const TrainConfig& c, const Model* pretrained, const LabeledDataset& train,
                     const LabeledDataset* eval_set, const std::string& resume_checkpoint) {
    c.validate();
    if (train.items.empty()) throw ConfigError("fine-tuning dataset is empty");

    TrainConfig cfg = c;
    cfg.task = TaskKind::kTransfer;

    std::vector<std::string> paths;
    std::vector<int> labels;
    for (const auto& item : train.items) {
        paths.push_back(item.path);
        labels.push_back(item.label);
    }

    Model model;
    SgdState opt;
    int start_iter = 0;
    if (!resume_checkpoint.empty()) {
        auto loaded = load_model(resume_checkpoint);
        model = std::move(loaded.model);
        if (model.spec.head != HeadKind::kTransfer ||
            model.spec.head_classes != train.class_count)
            throw ConfigError("resume checkpoint head does not match the dataset class count");
        start_iter = std::stoi(loaded.metadata.at("iter"));
        set_trainable_prefix(model, cfg.freeze_prefix);
        auto binding = bind_trainable(model, opt);
        restore_velocity(opt, binding, loaded.extra_records);
    } else {
        const int channels = load_clip(paths.front()).channels();
        ModelSpec spec = resolve_model_spec(cfg, channels);
        spec.head_classes = train.class_count;
        if (pretrained) {
            // The backbone geometry must carry over; only the head is new.
            ModelSpec base = pretrained->spec;
            base.head = HeadKind::kTransfer;
            base.head_classes = train.class_count;
            base.input_frames = spec.input_frames;
            base.input_size = spec.input_size;
            base.input_channels = spec.input_channels;
            model = build_model(base, cfg.seed);
            auto src = named_parameters(*pretrained);
            for (auto& dst : named_parameters(model)) {
                if (dst.block < 0) continue;  // fresh head
                for (const auto& s : src) {
                    if (s.name == dst.name) {
                        if (s.tensor.shape() != dst.tensor.shape())
                            throw ConfigError("pretrained backbone does not match: " + s.name);
                        std::copy(s.tensor.values().begin(), s.tensor.values().end(),
                                  dst.tensor.values().begin());
                        break;
                    }
                }
            }
            auto copy_bn = [](const BatchNormLayer& s, BatchNormLayer& d) {
                d.running = s.running;
            };
            copy_bn(pretrained->stem_bn, model.stem_bn);
            for (int b = 0; b < 4; ++b)
                for (std::size_t u = 0; u < model.blocks[static_cast<std::size_t>(b)].size(); ++u) {
                    copy_bn(pretrained->blocks[static_cast<std::size_t>(b)][u].bn1,
                            model.blocks[static_cast<std::size_t>(b)][u].bn1);
                    copy_bn(pretrained->blocks[static_cast<std::size_t>(b)][u].bn2,
                            model.blocks[static_cast<std::size_t>(b)][u].bn2);
                    if (model.blocks[static_cast<std::size_t>(b)][u].has_proj)
                        copy_bn(pretrained->blocks[static_cast<std::size_t>(b)][u].proj_bn,
                                model.blocks[static_cast<std::size_t>(b)][u].proj_bn);
                }
        } else {
            model = build_model(spec, cfg.seed);
        }
        set_trainable_prefix(model, cfg.freeze_prefix);
    }

    return train_loop(cfg, std::move(model), paths, labels, eval_set, nullptr, start_iter,
                      std::move(opt));
}

}  // namespace rotpretext
