#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rotpretext/checkpoint.hpp"
#include "rotpretext/nn_ops.hpp"

namespace rotpretext {

enum class HeadKind { kPretext, kTransfer };

/// Architecture description: a convolutional stem plus four residual
/// blocks (five convolution blocks in total), global average pooling and a
/// swappable head. Two built-in scales: the full-size network and a small
/// one for CPU-budget runs.
struct ModelSpec {
    int input_channels = 1;
    int input_frames = 8;
    int input_size = 32;  // square spatial extent
    std::array<int, 5> block_widths{8, 8, 16, 32, 64};
    Dims3 stem_kernel{3, 3, 3};
    Dims3 stem_stride{1, 2, 2};
    Dims3 stem_padding{1, 1, 1};
    bool stem_pool = false;
    Dims3 pool_kernel{3, 3, 3};
    Dims3 pool_stride{2, 2, 2};
    Dims3 pool_padding{1, 1, 1};
    Dims3 residual_kernel{3, 3, 3};
    Dims3 downsample_stride{1, 2, 2};  // first conv of blocks 2..4
    int units_per_block = 1;
    HeadKind head = HeadKind::kPretext;
    int head_classes = 4;  // K for pretext, action classes for transfer
    int head_hidden = 64;  // pretext head only

    static ModelSpec desk();
    static ModelSpec paper();

    int feature_dim() const { return block_widths[4]; }
    std::string serialize() const;
    static ModelSpec deserialize(const std::string& text);
    void validate() const;
};

struct Conv3dLayer {
    Tensor weight, bias;
    Conv3dGeom geom;
};

struct BatchNormLayer {
    Tensor gamma, beta;
    BatchNormStats<float> running;
};

struct LinearLayer {
    Tensor weight, bias;
};

struct ResidualUnit {
    Conv3dLayer conv1;
    BatchNormLayer bn1;
    Conv3dLayer conv2;
    BatchNormLayer bn2;
    bool has_proj = false;
    Conv3dLayer proj;
    BatchNormLayer proj_bn;
};

/// Instantiated network. Convolution blocks are indexed 0 (the stem)
/// through 4; parameters of blocks below trainable_from_block are frozen:
/// they receive no gradient and their batchnorm layers run on (and never
/// update) their running statistics.
struct Model {
    ModelSpec spec;
    Conv3dLayer stem;
    BatchNormLayer stem_bn;
    std::vector<std::vector<ResidualUnit>> blocks;  // [4][units_per_block]
    LinearLayer head_fc1;  // pretext head only
    LinearLayer head_out;
    int trainable_from_block = 0;
    double bn_momentum = 0.1;
    float bn_epsilon = 1e-5f;
};

Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Head logits for a [N,C,T,H,W] batch. Training mode records onto the
/// tape and uses batch statistics in unfrozen batchnorm layers; eval mode
/// uses running statistics and records nothing. When taps is non-null the
/// stem output and each block output are appended to it.
Tensor forward(Model& model, const Tensor& batch, bool training, Tape* tape,
               std::vector<Tensor>* taps = nullptr);

/// Freezes blocks with index < n (n in [0,5]); the head stays trainable.
void set_trainable_prefix(Model& model, int n);

/// Post-ReLU stem activations (before any pooling), eval mode.
Tensor first_block_activations(Model& model, const Tensor& batch);

struct NamedParam {
    std::string name;
    Tensor tensor;
    int block = -1;  // -1: head
};

/// Every learnable parameter with its stable name, deterministic order.
std::vector<NamedParam> named_parameters(const Model& model);
/// Parameters that currently require gradients.
std::vector<NamedParam> trainable_parameters(const Model& model);
/// Learnable parameter element count.
std::size_t parameter_count(const Model& model);

/// Full state for checkpointing: parameters plus batchnorm running stats.
std::vector<NamedTensor> model_state(const Model& model);

void save_model(const std::string& path, const Model& model,
                const std::map<std::string, std::string>& metadata,
                const std::vector<NamedTensor>& extra_records = {});

struct LoadedModel {
    Model model;
    std::map<std::string, std::string> metadata;
    std::vector<NamedTensor> extra_records;  // records outside the model state
};

LoadedModel load_model(const std::string& path);

}  // namespace rotpretext
