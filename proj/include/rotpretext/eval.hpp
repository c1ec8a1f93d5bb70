#pragma once

#include <span>
#include <string>
#include <vector>

#include "rotpretext/train.hpp"

namespace rotpretext {

/// Softmax outputs for a labeled evaluation set.
struct PredictionSet {
    std::vector<int> ids;
    std::vector<int> labels;
    int class_count = 0;
    std::vector<std::vector<float>> probs;  // one distribution per sample
};

/// Mean accuracy over every (clip, rotation) pair: each rotation in the set
/// is applied to every clip after deterministic eval preprocessing, and the
/// prediction counts as correct when argmax equals the rotation index.
double rotation_accuracy(Model& model, const UnlabeledDataset& data, const RotationSet& set,
                         const TrainConfig& pipeline, int max_clips = 0);

/// Fraction of argmax-correct predictions under center-crop evaluation.
double top1_accuracy(Model& model, const LabeledDataset& data, const TrainConfig& pipeline,
                     int max_clips = 0);

PredictionSet predict(Model& model, const LabeledDataset& data, const TrainConfig& pipeline);
double prediction_top1(const PredictionSet& p);

/// Per-sample elementwise sqrt(pa*pb + eps^2), renormalized. Sample ids
/// must match pairwise.
PredictionSet fuse_predictions(const PredictionSet& a, const PredictionSet& b);

/// Exactly `shots` uniformly drawn items per class.
LabeledDataset few_shot_subset(const LabeledDataset& data, int shots_per_class,
                               std::uint64_t seed);

/// Uniform sample without replacement.
LabeledDataset subsample_dataset(const LabeledDataset& data, std::size_t count,
                                 std::uint64_t seed);
LabeledDataset subsample_dataset(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// One per activation frame; values min-max normalized to [0,1] across the
/// whole clip (constant maps normalize to all-zero), upsampled to the input
/// spatial size.
struct AttentionMap {
    int height = 0, width = 0;
    std::vector<float> values;
};

/// Channel-mean of the post-ReLU stem activations per time step.
/// `clip` must already match the model input extents.
std::vector<AttentionMap> attention_map(Model& model, const VideoClip& clip);

void write_pgm(const std::string& path, int height, int width, std::span<const float> values01);
void export_attention_pgm(const std::vector<AttentionMap>& maps, const std::string& out_dir);

/// One PGM per stem filter per temporal slice, "kernel_<filter>_<t>.pgm",
/// min-max normalized per filter (input channels averaged).
void export_kernels_pgm(const Model& model, const std::string& out_dir);

struct AblateRun {
    std::string run_id;
    TrainConfig pretext;
    TrainConfig transfer;
};

struct AblateRow {
    std::string run_id;
    std::string task;
    std::string rotations;
    int clip_len = 0;
    std::string modality;
    double pretext_acc = 0;
    double transfer_acc = 0;
    std::uint64_t seed = 0;
    bool failed = false;
};

struct AblateData {
    UnlabeledDataset pretext_train;
    UnlabeledDataset pretext_eval;
    LabeledDataset transfer_train;
    LabeledDataset transfer_test;
};

/// Runs the config matrix sequentially, appending one CSV row per run as it
/// completes ("run_id,task,rotations,clip_len,modality,pretext_acc,
/// transfer_acc,seed"). Runs already present in the CSV are skipped, so an
/// interrupted matrix resumes; per-run failures are recorded as nan rows
/// and the matrix continues.
std::vector<AblateRow> ablate(const std::vector<AblateRun>& runs, const AblateData& data,
                              const std::string& csv_path);

/// The rotation-set matrix: {0,90}, {0,90,180}, {0,90,180,270}, {90,180,270}.
std::vector<AblateRun> rotation_set_matrix(const TrainConfig& pretext_base,
                                           const TrainConfig& transfer_base);
/// The clip-length matrix: {8,16} x {rgb,dif}.
std::vector<AblateRun> clip_length_matrix(const TrainConfig& pretext_base,
                                          const TrainConfig& transfer_base);

}  // namespace rotpretext
