#pragma once

// Test-only reference implementations, written as plain loops and kept
// independent of the library's execution paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "rotpretext/nn_ops.hpp"

namespace oracles {

using rotpretext::Dims3;
using rotpretext::TensorT;

// Plain seven-loop convolution over one sample [C,T,H,W].
template <class T>
std::vector<T> conv3d_reference(const std::vector<T>& x, int C, int Ti, int H, int W,
                                const std::vector<T>& w, int F, int kT, int kH, int kW,
                                const std::vector<T>& bias, Dims3 stride, Dims3 pad) {
    const int oT = (Ti + 2 * pad[0] - kT) / stride[0] + 1;
    const int oH = (H + 2 * pad[1] - kH) / stride[1] + 1;
    const int oW = (W + 2 * pad[2] - kW) / stride[2] + 1;
    std::vector<T> y(static_cast<std::size_t>(F) * oT * oH * oW, T(0));
    for (int f = 0; f < F; ++f)
        for (int ot = 0; ot < oT; ++ot)
            for (int oh = 0; oh < oH; ++oh)
                for (int ow = 0; ow < oW; ++ow) {
                    T acc = bias[static_cast<std::size_t>(f)];
                    for (int c = 0; c < C; ++c)
                        for (int dt = 0; dt < kT; ++dt)
                            for (int dh = 0; dh < kH; ++dh)
                                for (int dw = 0; dw < kW; ++dw) {
                                    const int it = ot * stride[0] + dt - pad[0];
                                    const int ih = oh * stride[1] + dh - pad[1];
                                    const int iw = ow * stride[2] + dw - pad[2];
                                    if (it < 0 || it >= Ti || ih < 0 || ih >= H || iw < 0 ||
                                        iw >= W)
                                        continue;
                                    acc += w[(((static_cast<std::size_t>(f) * C + c) * kT + dt) *
                                                  kH +
                                              dh) *
                                                 kW +
                                             dw] *
                                           x[((static_cast<std::size_t>(c) * Ti + it) * H + ih) *
                                                 W +
                                             iw];
                                }
                    y[((static_cast<std::size_t>(f) * oT + ot) * oH + oh) * oW + ow] = acc;
                }
    return y;
}

// Windowed maximum over one sample [C,T,H,W], no padding.
template <class T>
std::vector<T> maxpool3d_reference(const std::vector<T>& x, int C, int Ti, int H, int W,
                                   Dims3 kernel, Dims3 stride) {
    const int oT = (Ti - kernel[0]) / stride[0] + 1;
    const int oH = (H - kernel[1]) / stride[1] + 1;
    const int oW = (W - kernel[2]) / stride[2] + 1;
    std::vector<T> y;
    y.reserve(static_cast<std::size_t>(C) * oT * oH * oW);
    for (int c = 0; c < C; ++c)
        for (int ot = 0; ot < oT; ++ot)
            for (int oh = 0; oh < oH; ++oh)
                for (int ow = 0; ow < oW; ++ow) {
                    T best = x[((static_cast<std::size_t>(c) * Ti + ot * stride[0]) * H +
                                oh * stride[1]) *
                                   W +
                               ow * stride[2]];
                    for (int dt = 0; dt < kernel[0]; ++dt)
                        for (int dh = 0; dh < kernel[1]; ++dh)
                            for (int dw = 0; dw < kernel[2]; ++dw)
                                best = std::max(
                                    best, x[((static_cast<std::size_t>(c) * Ti + ot * stride[0] +
                                              dt) *
                                                 H +
                                             oh * stride[1] + dh) *
                                                W +
                                            ow * stride[2] + dw]);
                    y.push_back(best);
                }
    return y;
}

// Row-by-row affine map oracle: y[n][o] = b[o] + sum_i x[n][i] * w[o][i].
template <class T>
std::vector<T> linear_reference(const std::vector<T>& x, int N, int Din, const std::vector<T>& w,
                                int Dout, const std::vector<T>& b) {
    std::vector<T> y(static_cast<std::size_t>(N) * Dout);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
            T acc = b[static_cast<std::size_t>(o)];
            for (int i = 0; i < Din; ++i)
                acc += x[static_cast<std::size_t>(n) * Din + i] *
                       w[static_cast<std::size_t>(o) * Din + i];
            y[static_cast<std::size_t>(n) * Dout + o] = acc;
        }
    return y;
}

// Relative error with a floor so near-zero pairs compare absolutely.
template <class T>
double rel_err(T a, T b) {
    const double d = std::abs(static_cast<double>(a) - static_cast<double>(b));
    const double m = std::max({std::abs(static_cast<double>(a)),
                               std::abs(static_cast<double>(b)), 1e-6});
    return d / m;
}

template <class T>
double max_rel_err(const std::vector<T>& a, const std::vector<T>& b) {
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
    return worst;
}

}  // namespace oracles
