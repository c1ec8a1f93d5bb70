#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rotpretext/tensor.hpp"

namespace rotpretext {

struct Conv3dGeom {
    Dims3 stride{1, 1, 1};
    Dims3 padding{0, 0, 0};
};

// The im2col engine is the default; the direct engine is the plain
// seven-loop form kept selectable so the two can be cross-checked.
enum class ConvEngine { kIm2col, kDirect };

enum class RegressionNorm { kL1, kL2 };

/// Output extent law shared by convolution and pooling:
/// floor((in + 2p - k) / s) + 1 per axis.
int conv_output_extent(int in, int kernel, int stride, int padding);

/// 3D convolution over [C,T,H,W] or batched [N,C,T,H,W] input.
/// weight is [C_out, C_in, kT, kH, kW], bias is [C_out].
template <class T>
TensorT<T> conv3d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias, const Conv3dGeom& geom,
                  ConvEngine engine = ConvEngine::kIm2col);

template <class T>
struct BatchNormStats {
    std::vector<T> mean;  // per channel
    std::vector<T> var;
    static BatchNormStats init(int channels) {
        return {std::vector<T>(static_cast<std::size_t>(channels), T(0)),
                std::vector<T>(static_cast<std::size_t>(channels), T(1))};
    }
};

/// Per-channel normalization of [N,C,T,H,W] over (N,T,H,W). Training mode
/// normalizes with batch statistics and, unless update_running is false
/// (frozen layers), folds them into the running stats. Eval mode uses the
/// running stats.
template <class T>
TensorT<T> batchnorm3d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& gamma,
                       const TensorT<T>& beta, BatchNormStats<T>& running, bool training,
                       T momentum, T epsilon, bool update_running = true);

template <class T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& input);

/// Windowed max over [N,C,T,H,W]; backward routes the gradient to the first
/// maximal element of each window in scan order.
template <class T>
TensorT<T> maxpool3d(TapeT<T>* tape, const TensorT<T>& input, Dims3 kernel, Dims3 stride,
                     Dims3 padding = {0, 0, 0});

/// Mean over (T,H,W) per channel: [N,C,T,H,W] -> [N,C].
template <class T>
TensorT<T> global_avg_pool(TapeT<T>* tape, const TensorT<T>& input);

/// Affine map: input [N,D_in], weight [D_out,D_in], bias [D_out] -> [N,D_out].
template <class T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias);

/// Elementwise sum of two same-shape tensors (residual connections).
template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b);

/// Mean over the batch of -log softmax(logits)[label], computed with
/// per-row max subtraction. Gradient is (softmax - onehot) / N.
template <class T>
TensorT<T> softmax_cross_entropy(TapeT<T>* tape, const TensorT<T>& logits,
                                 std::span<const int> labels);

/// Row-wise softmax of [N,K] logits, max-subtracted. Forward only.
template <class T>
std::vector<T> softmax_rows(const TensorT<T>& logits);

/// Mean |p - y| or mean (p - y)^2 over predictions [N] or [N,1].
template <class T>
TensorT<T> regression_loss(TapeT<T>* tape, const TensorT<T>& prediction,
                           std::span<const T> targets, RegressionNorm norm);

/// v <- momentum * v + grad + weight_decay * param; param <- param - lr * v;
/// grads are zeroed afterwards. velocity is resized to match on first use.
template <class T>
void sgd_step(std::span<TensorT<T>> params, T lr, T momentum, T weight_decay,
              std::vector<std::vector<T>>& velocity);

/// Central-difference gradient oracle: (f(x+h*e_i) - f(x-h*e_i)) / 2h per
/// element. x is restored before returning. Test harness companion to
/// backward(); meant to be used with T = double.
template <class T>
std::vector<T> finite_diff_grad(const std::function<T(const TensorT<T>&)>& f,
                                const TensorT<T>& x, T h);

}  // namespace rotpretext
