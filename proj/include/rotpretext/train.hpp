#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rotpretext/dataset.hpp"
#include "rotpretext/model.hpp"
#include "rotpretext/rotation.hpp"

namespace rotpretext {

enum class TaskKind { kPretextClassify, kPretextRegress, kTransfer };
enum class Modality { kRgb, kDif };

const char* task_name(TaskKind t);
const char* modality_name(Modality m);

struct TrainConfig {
    std::uint64_t seed = 1;
    int batch_size = 6;  // clips per step, before rotation expansion
    int iterations = 300;  // 0: derive from epochs
    int epochs = 0;
    double lr_initial = 0.1;
    double lr_decay_factor = 0.1;
    int lr_decay_every = 24000;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    Modality modality = Modality::kRgb;
    TaskKind task = TaskKind::kPretextClassify;
    RotationSet rotations = RotationSet({0, 90, 180, 270});
    RegressionNorm regression_norm = RegressionNorm::kL2;
    int clip_length = 8;
    int resize_to = 0;  // 0: keep stored frame size
    int crop_size = 32;
    double flip_prob = 0.5;
    int freeze_prefix = 0;
    int checkpoint_every = 0;  // 0: final checkpoint only
    int log_every = 25;
    int eval_max_clips = 32;  // eval-set cap for in-training accuracy rows
    ModelSpec model;  // input extents and head are resolved from data/config
    std::string out_dir;  // checkpoints and logs; empty writes nothing
    std::string run_id = "run";

    void validate() const;
};

/// Step schedule: lr_initial * decay_factor^floor(t / decay_every).
double lr_at_iteration(const TrainConfig& config, int t);

/// Per-interval training record; written as CSV with header
/// "iter,loss,lr,train_acc,eval_acc,seconds".
struct RunLogRow {
    int iter = 0;
    double loss = 0;
    double lr = 0;
    double train_acc = 0;
    double eval_acc = 0;
    double seconds = 0;
};

struct RunLog {
    std::vector<RunLogRow> rows;
    void write_csv(const std::string& path) const;
};

struct SgdState {
    std::vector<std::string> names;  // parallel to velocity
    std::vector<std::vector<float>> velocity;
};

/// Model input geometry implied by the config: channels from the data,
/// frames = clip_length (minus one for difference clips), spatial extent =
/// crop size shrunk to the shared valid crop when the rotation set needs
/// arbitrary-angle rotations.
ModelSpec resolve_model_spec(const TrainConfig& config, int data_channels);

/// Training-time augmentation chain: temporal sample, resize, random crop,
/// per-clip flip. rng is consumed in that order.
VideoClip augment_clip(const VideoClip& stored, const TrainConfig& config, Rng& rng);

/// Deterministic eval-time chain: centered temporal window, resize, center
/// crop, no flip.
VideoClip eval_preprocess(const VideoClip& stored, const TrainConfig& config);

/// One pretext optimization step on already-augmented clips: rotation
/// expansion, forward, loss (cross entropy or angle regression), backward,
/// SGD update. Returns the loss; train_acc (if non-null) receives the batch
/// rotation accuracy (or the within-45-degrees fraction for regression).
double pretrain_step(Model& model, const std::vector<VideoClip>& clips, const RotationSet& set,
                     const TrainConfig& config, double lr, SgdState& opt,
                     double* train_acc = nullptr);

struct TrainResult {
    Model model;
    RunLog log;
};

/// Self-supervised pretraining. Takes the unlabeled view only: action
/// labels are not reachable from this code path. eval_set (optional, also
/// unlabeled) feeds the in-training rotation-accuracy column. A non-empty
/// resume_checkpoint continues a previous run bit-exactly.
TrainResult pretrain(const TrainConfig& config, const UnlabeledDataset& train,
                     const UnlabeledDataset* eval_set = nullptr,
                     const std::string& resume_checkpoint = "");

/// Supervised fine-tuning for action classification. Starts from
/// `pretrained` (backbone copied, fresh transfer head) or from scratch when
/// null; freezes config.freeze_prefix blocks.
TrainResult finetune(const TrainConfig& config, const Model* pretrained,
                     const LabeledDataset& train, const LabeledDataset* eval_set = nullptr,
                     const std::string& resume_checkpoint = "");

}  // namespace rotpretext
