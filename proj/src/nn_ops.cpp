#include "rotpretext/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

namespace rotpretext {

int conv_output_extent(int in, int kernel, int stride, int padding) {
    if (stride < 1) throw ShapeError("stride must be >= 1");
    const int padded = in + 2 * padding;
    if (kernel > padded) {
        throw ShapeError("kernel extent " + std::to_string(kernel) +
                         " exceeds padded input extent " + std::to_string(padded));
    }
    return (padded - kernel) / stride + 1;
}

namespace {

struct ConvDims {
    bool batched = false;
    int N = 1, Cin = 0, T = 0, H = 0, W = 0;
    int Cout = 0, kT = 0, kH = 0, kW = 0;
    int sT = 1, sH = 1, sW = 1;
    int pT = 0, pH = 0, pW = 0;
    int oT = 0, oH = 0, oW = 0;
    std::size_t in_sample = 0, out_sample = 0;
    std::size_t col_rows = 0, col_cols = 0;  // Kd x Nd
};

template <class T>
ConvDims resolve_conv_dims(const TensorT<T>& input, const TensorT<T>& weight,
                           const TensorT<T>& bias, const Conv3dGeom& g) {
    ConvDims d;
    const auto& is = input.shape();
    if (is.size() == 5) {
        d.batched = true;
        d.N = is[0];
        d.Cin = is[1];
        d.T = is[2];
        d.H = is[3];
        d.W = is[4];
    } else if (is.size() == 4) {
        d.Cin = is[0];
        d.T = is[1];
        d.H = is[2];
        d.W = is[3];
    } else {
        throw ShapeError("conv3d input must be rank 4 or 5, got " + shape_to_string(is));
    }
    const auto& ws = weight.shape();
    if (ws.size() != 5) throw ShapeError("conv3d weight must be rank 5, got " + shape_to_string(ws));
    d.Cout = ws[0];
    d.kT = ws[2];
    d.kH = ws[3];
    d.kW = ws[4];
    if (ws[1] != d.Cin) {
        throw ShapeError("conv3d channel mismatch: weight expects C_in=" + std::to_string(ws[1]) +
                         " but input has C_in=" + std::to_string(d.Cin) + " (input " +
                         shape_to_string(is) + ", weight " + shape_to_string(ws) + ")");
    }
    if (bias.shape() != std::vector<int>{d.Cout}) {
        throw ShapeError("conv3d bias must be [C_out]=" + std::to_string(d.Cout) + ", got " +
                         shape_to_string(bias.shape()));
    }
    d.sT = g.stride[0];
    d.sH = g.stride[1];
    d.sW = g.stride[2];
    d.pT = g.padding[0];
    d.pH = g.padding[1];
    d.pW = g.padding[2];
    d.oT = conv_output_extent(d.T, d.kT, d.sT, d.pT);
    d.oH = conv_output_extent(d.H, d.kH, d.sH, d.pH);
    d.oW = conv_output_extent(d.W, d.kW, d.sW, d.pW);
    d.in_sample = static_cast<std::size_t>(d.Cin) * d.T * d.H * d.W;
    d.out_sample = static_cast<std::size_t>(d.Cout) * d.oT * d.oH * d.oW;
    d.col_rows = static_cast<std::size_t>(d.Cin) * d.kT * d.kH * d.kW;
    d.col_cols = static_cast<std::size_t>(d.oT) * d.oH * d.oW;
    return d;
}

// col row ((c*kT+dt)*kH+dh)*kW+dw, column (ot*oH+oh)*oW+ow.
template <class T>
void im2col(const T* x, const ConvDims& d, T* col) {
    const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t chan = static_cast<std::size_t>(d.T) * plane;
    std::size_t row = 0;
    for (int c = 0; c < d.Cin; ++c) {
        for (int dt = 0; dt < d.kT; ++dt) {
            for (int dh = 0; dh < d.kH; ++dh) {
                for (int dw = 0; dw < d.kW; ++dw, ++row) {
                    T* out = col + row * d.col_cols;
                    for (int ot = 0; ot < d.oT; ++ot) {
                        const int it = ot * d.sT + dt - d.pT;
                        for (int oh = 0; oh < d.oH; ++oh) {
                            const int ih = oh * d.sH + dh - d.pH;
                            const bool live = it >= 0 && it < d.T && ih >= 0 && ih < d.H;
                            const T* src = live ? x + c * chan + it * plane + ih * d.W : nullptr;
                            for (int ow = 0; ow < d.oW; ++ow, ++out) {
                                const int iw = ow * d.sW + dw - d.pW;
                                *out = (live && iw >= 0 && iw < d.W) ? src[iw] : T(0);
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void col2im_acc(const T* col, const ConvDims& d, T* gx) {
    const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
    const std::size_t chan = static_cast<std::size_t>(d.T) * plane;
    std::size_t row = 0;
    for (int c = 0; c < d.Cin; ++c) {
        for (int dt = 0; dt < d.kT; ++dt) {
            for (int dh = 0; dh < d.kH; ++dh) {
                for (int dw = 0; dw < d.kW; ++dw, ++row) {
                    const T* src = col + row * d.col_cols;
                    for (int ot = 0; ot < d.oT; ++ot) {
                        const int it = ot * d.sT + dt - d.pT;
                        if (it < 0 || it >= d.T) {
                            src += static_cast<std::size_t>(d.oH) * d.oW;
                            continue;
                        }
                        for (int oh = 0; oh < d.oH; ++oh) {
                            const int ih = oh * d.sH + dh - d.pH;
                            if (ih < 0 || ih >= d.H) {
                                src += d.oW;
                                continue;
                            }
                            T* dst = gx + c * chan + it * plane + ih * d.W;
                            for (int ow = 0; ow < d.oW; ++ow, ++src) {
                                const int iw = ow * d.sW + dw - d.pW;
                                if (iw >= 0 && iw < d.W) dst[iw] += *src;
                            }
                        }
                    }
                }
            }
        }
    }
}

// C[M,N] += A[M,K] * B[K,N], all row-major.
template <class T>
void gemm_nn_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
    parallel_for(M, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            T* crow = C + i * N;
            const T* arow = A + i * K;
            for (std::size_t k = 0; k < K; ++k) {
                const T a = arow[k];
                if (a == T(0)) continue;
                const T* brow = B + k * N;
                for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
            }
        }
    });
}

// C[M,K] += A[M,N] * B[K,N]^T  (dot products of rows).
template <class T>
void gemm_nt_acc(std::size_t M, std::size_t K, std::size_t N, const T* A, const T* B, T* C) {
    parallel_for(M, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const T* arow = A + i * N;
            T* crow = C + i * K;
            for (std::size_t k = 0; k < K; ++k) {
                const T* brow = B + k * N;
                T acc = T(0);
                for (std::size_t j = 0; j < N; ++j) acc += arow[j] * brow[j];
                crow[k] += acc;
            }
        }
    });
}

// C[K,N] += A[M,K]^T * B[M,N].
template <class T>
void gemm_tn_acc(std::size_t K, std::size_t N, std::size_t M, const T* A, const T* B, T* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const T* arow = A + i * K;
        const T* brow = B + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const T a = arow[k];
            if (a == T(0)) continue;
            T* crow = C + k * N;
            for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
        }
    }
}

template <class T>
std::vector<int> conv_output_shape(const ConvDims& d) {
    if (d.batched) return {d.N, d.Cout, d.oT, d.oH, d.oW};
    return {d.Cout, d.oT, d.oH, d.oW};
}

}  // namespace

template <class T>
TensorT<T> conv3d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias, const Conv3dGeom& geom, ConvEngine engine) {
    const ConvDims d = resolve_conv_dims(input, weight, bias, geom);
    TensorT<T> out = TensorT<T>::zeros(conv_output_shape<T>(d));

    const T* x = input.values().data();
    const T* w = weight.values().data();
    const T* b = bias.values().data();
    T* y = out.values().data();

    if (engine == ConvEngine::kIm2col) {
        std::vector<T> col(d.col_rows * d.col_cols);
        for (int n = 0; n < d.N; ++n) {
            im2col(x + n * d.in_sample, d, col.data());
            T* yn = y + n * d.out_sample;
            for (int co = 0; co < d.Cout; ++co) {
                std::fill(yn + co * d.col_cols, yn + (co + 1) * d.col_cols, b[co]);
            }
            gemm_nn_acc(static_cast<std::size_t>(d.Cout), d.col_cols, d.col_rows, w, col.data(),
                        yn);
        }
    } else {
        const std::size_t plane = static_cast<std::size_t>(d.H) * d.W;
        const std::size_t chan = static_cast<std::size_t>(d.T) * plane;
        const std::size_t ksize = static_cast<std::size_t>(d.kT) * d.kH * d.kW;
        for (int n = 0; n < d.N; ++n) {
            const T* xn = x + n * d.in_sample;
            T* yn = y + n * d.out_sample;
            for (int co = 0; co < d.Cout; ++co) {
                const T* wf = w + co * d.Cin * ksize;
                for (int ot = 0; ot < d.oT; ++ot)
                    for (int oh = 0; oh < d.oH; ++oh)
                        for (int ow = 0; ow < d.oW; ++ow) {
                            T acc = b[co];
                            for (int ci = 0; ci < d.Cin; ++ci)
                                for (int dt = 0; dt < d.kT; ++dt)
                                    for (int dh = 0; dh < d.kH; ++dh)
                                        for (int dw = 0; dw < d.kW; ++dw) {
                                            const int it = ot * d.sT + dt - d.pT;
                                            const int ih = oh * d.sH + dh - d.pH;
                                            const int iw = ow * d.sW + dw - d.pW;
                                            if (it < 0 || it >= d.T || ih < 0 || ih >= d.H ||
                                                iw < 0 || iw >= d.W)
                                                continue;
                                            acc += wf[((ci * d.kT + dt) * d.kH + dh) * d.kW + dw] *
                                                   xn[ci * chan + it * plane + ih * d.W + iw];
                                        }
                            yn[(co * d.oT + ot) * d.oH * d.oW + oh * d.oW + ow] = acc;
                        }
            }
        }
    }

    const bool needs_grad = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto ws = weight.storage();
        auto bs = bias.storage();
        auto ys = out.storage();
        tape->record([xs, ws, bs, ys, d]() {
            if (ys->grad.empty()) return;
            const T* go = ys->grad.data();
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->values.size(), T(0));
                for (int n = 0; n < d.N; ++n) {
                    const T* gn = go + n * d.out_sample;
                    for (int co = 0; co < d.Cout; ++co) {
                        T acc = T(0);
                        const T* row = gn + co * d.col_cols;
                        for (std::size_t j = 0; j < d.col_cols; ++j) acc += row[j];
                        bs->grad[static_cast<std::size_t>(co)] += acc;
                    }
                }
            }
            const bool need_w = ws->requires_grad;
            const bool need_x = xs->requires_grad;
            if (!need_w && !need_x) return;
            if (need_w && ws->grad.empty()) ws->grad.assign(ws->values.size(), T(0));
            if (need_x && xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
            std::vector<T> col(need_w ? d.col_rows * d.col_cols : 0);
            std::vector<T> colg(need_x ? d.col_rows * d.col_cols : 0);
            for (int n = 0; n < d.N; ++n) {
                const T* gn = go + n * d.out_sample;
                if (need_w) {
                    im2col(xs->values.data() + n * d.in_sample, d, col.data());
                    gemm_nt_acc(static_cast<std::size_t>(d.Cout), d.col_rows, d.col_cols, gn,
                                col.data(), ws->grad.data());
                }
                if (need_x) {
                    std::fill(colg.begin(), colg.end(), T(0));
                    gemm_tn_acc(d.col_rows, d.col_cols, static_cast<std::size_t>(d.Cout),
                                ws->values.data(), gn, colg.data());
                    col2im_acc(colg.data(), d, xs->grad.data() + n * d.in_sample);
                }
            }
        });
    }
    return out;
}

namespace {

struct NormDims {
    int N = 1, C = 0;
    std::size_t inner = 0;  // T*H*W
    std::size_t m = 0;      // N * inner, per-channel sample count
};

template <class T>
NormDims resolve_norm_dims(const TensorT<T>& input) {
    const auto& s = input.shape();
    NormDims d;
    if (s.size() == 5) {
        d.N = s[0];
        d.C = s[1];
        d.inner = static_cast<std::size_t>(s[2]) * s[3] * s[4];
    } else if (s.size() == 4) {
        d.C = s[0];
        d.inner = static_cast<std::size_t>(s[1]) * s[2] * s[3];
    } else {
        throw ShapeError("batchnorm3d input must be rank 4 or 5, got " + shape_to_string(s));
    }
    d.m = static_cast<std::size_t>(d.N) * d.inner;
    return d;
}

}  // namespace

template <class T>
TensorT<T> batchnorm3d(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& gamma,
                       const TensorT<T>& beta, BatchNormStats<T>& running, bool training,
                       T momentum, T epsilon, bool update_running) {
    if (!(epsilon > T(0))) throw ConfigError("batchnorm3d epsilon must be > 0");
    const NormDims d = resolve_norm_dims(input);
    if (gamma.size() != static_cast<std::size_t>(d.C) || beta.size() != static_cast<std::size_t>(d.C))
        throw ShapeError("batchnorm3d gamma/beta must have one entry per channel");
    if (running.mean.size() != static_cast<std::size_t>(d.C))
        throw ShapeError("batchnorm3d running stats size mismatch");
    if (training && d.m < 2) throw ShapeError("batchnorm3d training mode needs N*T*H*W >= 2");

    TensorT<T> out = TensorT<T>::zeros(input.shape());
    const T* x = input.values().data();
    const T* g = gamma.values().data();
    const T* bt = beta.values().data();
    T* y = out.values().data();

    // Normalized values are kept for the backward rule.
    auto xhat = std::make_shared<std::vector<T>>(input.size());
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(d.C));

    for (int c = 0; c < d.C; ++c) {
        T mean, var;
        if (training) {
            T sum = T(0);
            for (int n = 0; n < d.N; ++n) {
                const T* p = x + (static_cast<std::size_t>(n) * d.C + c) * d.inner;
                for (std::size_t i = 0; i < d.inner; ++i) sum += p[i];
            }
            mean = sum / static_cast<T>(d.m);
            T sq = T(0);
            for (int n = 0; n < d.N; ++n) {
                const T* p = x + (static_cast<std::size_t>(n) * d.C + c) * d.inner;
                for (std::size_t i = 0; i < d.inner; ++i) {
                    const T dlt = p[i] - mean;
                    sq += dlt * dlt;
                }
            }
            var = sq / static_cast<T>(d.m);
            if (update_running) {
                const T unbiased = sq / static_cast<T>(d.m - 1);
                running.mean[c] = (T(1) - momentum) * running.mean[c] + momentum * mean;
                running.var[c] = (T(1) - momentum) * running.var[c] + momentum * unbiased;
            }
        } else {
            mean = running.mean[c];
            var = running.var[c];
        }
        const T inv = T(1) / std::sqrt(var + epsilon);
        (*inv_std)[c] = inv;
        for (int n = 0; n < d.N; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * d.C + c) * d.inner;
            for (std::size_t i = 0; i < d.inner; ++i) {
                const T xh = (x[base + i] - mean) * inv;
                (*xhat)[base + i] = xh;
                y[base + i] = g[c] * xh + bt[c];
            }
        }
    }

    const bool needs_grad =
        input.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto gs = gamma.storage();
        auto bs = beta.storage();
        auto ys = out.storage();
        tape->record([xs, gs, bs, ys, xhat, inv_std, d, training]() {
            if (ys->grad.empty()) return;
            const T* gy = ys->grad.data();
            const T mf = static_cast<T>(d.m);
            for (int c = 0; c < d.C; ++c) {
                T s1 = T(0), s2 = T(0);
                for (int n = 0; n < d.N; ++n) {
                    const std::size_t base = (static_cast<std::size_t>(n) * d.C + c) * d.inner;
                    for (std::size_t i = 0; i < d.inner; ++i) {
                        s1 += gy[base + i];
                        s2 += gy[base + i] * (*xhat)[base + i];
                    }
                }
                if (bs->requires_grad) {
                    if (bs->grad.empty()) bs->grad.assign(bs->values.size(), T(0));
                    bs->grad[c] += s1;
                }
                if (gs->requires_grad) {
                    if (gs->grad.empty()) gs->grad.assign(gs->values.size(), T(0));
                    gs->grad[c] += s2;
                }
                if (xs->requires_grad) {
                    if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
                    const T scale = gs->values[c] * (*inv_std)[c];
                    for (int n = 0; n < d.N; ++n) {
                        const std::size_t base = (static_cast<std::size_t>(n) * d.C + c) * d.inner;
                        for (std::size_t i = 0; i < d.inner; ++i) {
                            if (training) {
                                xs->grad[base + i] +=
                                    scale * (gy[base + i] - s1 / mf - (*xhat)[base + i] * s2 / mf);
                            } else {
                                xs->grad[base + i] += scale * gy[base + i];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> relu(TapeT<T>* tape, const TensorT<T>& input) {
    TensorT<T> out = TensorT<T>::zeros(input.shape());
    const T* x = input.values().data();
    T* y = out.values().data();
    const std::size_t n = input.size();
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto ys = out.storage();
        tape->record([xs, ys]() {
            if (ys->grad.empty()) return;
            if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
            // Subgradient at 0 is 0: only strictly positive inputs pass.
            for (std::size_t i = 0; i < xs->values.size(); ++i)
                if (xs->values[i] > T(0)) xs->grad[i] += ys->grad[i];
        });
    }
    return out;
}

template <class T>
TensorT<T> maxpool3d(TapeT<T>* tape, const TensorT<T>& input, Dims3 kernel, Dims3 stride,
                     Dims3 padding) {
    const auto& s = input.shape();
    if (s.size() != 5 && s.size() != 4)
        throw ShapeError("maxpool3d input must be rank 4 or 5, got " + shape_to_string(s));
    const bool batched = s.size() == 5;
    const int N = batched ? s[0] : 1;
    const int C = batched ? s[1] : s[0];
    const int T_ = batched ? s[2] : s[1];
    const int H = batched ? s[3] : s[2];
    const int W = batched ? s[4] : s[3];
    const int oT = conv_output_extent(T_, kernel[0], stride[0], padding[0]);
    const int oH = conv_output_extent(H, kernel[1], stride[1], padding[1]);
    const int oW = conv_output_extent(W, kernel[2], stride[2], padding[2]);

    std::vector<int> out_shape =
        batched ? std::vector<int>{N, C, oT, oH, oW} : std::vector<int>{C, oT, oH, oW};
    TensorT<T> out = TensorT<T>::zeros(out_shape);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());

    const T* x = input.values().data();
    T* y = out.values().data();
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    const std::size_t chan = static_cast<std::size_t>(T_) * plane;
    std::size_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * C + c) * chan;
            for (int ot = 0; ot < oT; ++ot)
                for (int oh = 0; oh < oH; ++oh)
                    for (int ow = 0; ow < oW; ++ow, ++o) {
                        T best = -std::numeric_limits<T>::infinity();
                        std::size_t best_idx = 0;
                        bool found = false;
                        for (int dt = 0; dt < kernel[0]; ++dt) {
                            const int it = ot * stride[0] + dt - padding[0];
                            if (it < 0 || it >= T_) continue;
                            for (int dh = 0; dh < kernel[1]; ++dh) {
                                const int ih = oh * stride[1] + dh - padding[1];
                                if (ih < 0 || ih >= H) continue;
                                for (int dw = 0; dw < kernel[2]; ++dw) {
                                    const int iw = ow * stride[2] + dw - padding[2];
                                    if (iw < 0 || iw >= W) continue;
                                    const std::size_t idx = base + it * plane + ih * W + iw;
                                    if (!found || x[idx] > best) {
                                        best = x[idx];
                                        best_idx = idx;
                                        found = true;
                                    }
                                }
                            }
                        }
                        if (!found) throw ShapeError("maxpool3d window fully inside padding");
                        y[o] = best;
                        (*argmax)[o] = best_idx;
                    }
        }
    }

    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto ys = out.storage();
        tape->record([xs, ys, argmax]() {
            if (ys->grad.empty()) return;
            if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
            for (std::size_t i = 0; i < argmax->size(); ++i)
                xs->grad[(*argmax)[i]] += ys->grad[i];
        });
    }
    return out;
}

template <class T>
TensorT<T> global_avg_pool(TapeT<T>* tape, const TensorT<T>& input) {
    const auto& s = input.shape();
    if (s.size() != 5)
        throw ShapeError("global_avg_pool input must be [N,C,T,H,W], got " + shape_to_string(s));
    const int N = s[0], C = s[1];
    const std::size_t inner = static_cast<std::size_t>(s[2]) * s[3] * s[4];
    TensorT<T> out = TensorT<T>::zeros({N, C});
    const T* x = input.values().data();
    T* y = out.values().data();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* p = x + (static_cast<std::size_t>(n) * C + c) * inner;
            T acc = T(0);
            for (std::size_t i = 0; i < inner; ++i) acc += p[i];
            y[static_cast<std::size_t>(n) * C + c] = acc / static_cast<T>(inner);
        }
    if (tape && input.requires_grad()) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto ys = out.storage();
        const std::size_t nc = static_cast<std::size_t>(N) * C;
        tape->record([xs, ys, nc, inner]() {
            if (ys->grad.empty()) return;
            if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
            for (std::size_t j = 0; j < nc; ++j) {
                const T g = ys->grad[j] / static_cast<T>(inner);
                T* p = xs->grad.data() + j * inner;
                for (std::size_t i = 0; i < inner; ++i) p[i] += g;
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> linear(TapeT<T>* tape, const TensorT<T>& input, const TensorT<T>& weight,
                  const TensorT<T>& bias) {
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    if (is.size() != 2 || ws.size() != 2)
        throw ShapeError("linear expects input [N,D_in] and weight [D_out,D_in]");
    const int N = is[0], Din = is[1], Dout = ws[0];
    if (ws[1] != Din)
        throw ShapeError("linear dimension mismatch: input " + shape_to_string(is) + " vs weight " +
                         shape_to_string(ws));
    if (bias.shape() != std::vector<int>{Dout})
        throw ShapeError("linear bias must be [D_out]=" + std::to_string(Dout));

    TensorT<T> out = TensorT<T>::zeros({N, Dout});
    const T* x = input.values().data();
    const T* w = weight.values().data();
    const T* b = bias.values().data();
    T* y = out.values().data();
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < Dout; ++o) {
            const T* xr = x + static_cast<std::size_t>(n) * Din;
            const T* wr = w + static_cast<std::size_t>(o) * Din;
            T acc = b[o];
            for (int i = 0; i < Din; ++i) acc += xr[i] * wr[i];
            y[static_cast<std::size_t>(n) * Dout + o] = acc;
        }

    const bool needs_grad = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    if (tape && needs_grad) {
        out.set_requires_grad(true);
        auto xs = input.storage();
        auto wst = weight.storage();
        auto bs = bias.storage();
        auto ys = out.storage();
        tape->record([xs, wst, bs, ys, N, Din, Dout]() {
            if (ys->grad.empty()) return;
            const T* gy = ys->grad.data();
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->values.size(), T(0));
                for (int n = 0; n < N; ++n)
                    for (int o = 0; o < Dout; ++o)
                        bs->grad[o] += gy[static_cast<std::size_t>(n) * Dout + o];
            }
            if (wst->requires_grad) {
                if (wst->grad.empty()) wst->grad.assign(wst->values.size(), T(0));
                for (int n = 0; n < N; ++n) {
                    const T* xr = xs->values.data() + static_cast<std::size_t>(n) * Din;
                    for (int o = 0; o < Dout; ++o) {
                        const T g = gy[static_cast<std::size_t>(n) * Dout + o];
                        if (g == T(0)) continue;
                        T* wr = wst->grad.data() + static_cast<std::size_t>(o) * Din;
                        for (int i = 0; i < Din; ++i) wr[i] += g * xr[i];
                    }
                }
            }
            if (xs->requires_grad) {
                if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
                for (int n = 0; n < N; ++n) {
                    T* xr = xs->grad.data() + static_cast<std::size_t>(n) * Din;
                    for (int o = 0; o < Dout; ++o) {
                        const T g = gy[static_cast<std::size_t>(n) * Dout + o];
                        if (g == T(0)) continue;
                        const T* wr = wst->values.data() + static_cast<std::size_t>(o) * Din;
                        for (int i = 0; i < Din; ++i) xr[i] += g * wr[i];
                    }
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> add(TapeT<T>* tape, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
    TensorT<T> out = TensorT<T>::zeros(a.shape());
    const T* pa = a.values().data();
    const T* pb = b.values().data();
    T* y = out.values().data();
    for (std::size_t i = 0; i < a.size(); ++i) y[i] = pa[i] + pb[i];
    if (tape && (a.requires_grad() || b.requires_grad())) {
        out.set_requires_grad(true);
        auto as = a.storage();
        auto bs = b.storage();
        auto ys = out.storage();
        tape->record([as, bs, ys]() {
            if (ys->grad.empty()) return;
            if (as->requires_grad) {
                if (as->grad.empty()) as->grad.assign(as->values.size(), T(0));
                for (std::size_t i = 0; i < ys->grad.size(); ++i) as->grad[i] += ys->grad[i];
            }
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->values.size(), T(0));
                for (std::size_t i = 0; i < ys->grad.size(); ++i) bs->grad[i] += ys->grad[i];
            }
        });
    }
    return out;
}

template <class T>
std::vector<T> softmax_rows(const TensorT<T>& logits) {
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax expects [N,K] logits");
    const int N = s[0], K = s[1];
    std::vector<T> probs(logits.size());
    const T* l = logits.values().data();
    for (int n = 0; n < N; ++n) {
        const T* row = l + static_cast<std::size_t>(n) * K;
        T* prow = probs.data() + static_cast<std::size_t>(n) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T z = T(0);
        for (int k = 0; k < K; ++k) {
            prow[k] = std::exp(row[k] - mx);
            z += prow[k];
        }
        for (int k = 0; k < K; ++k) prow[k] /= z;
    }
    return probs;
}

template <class T>
TensorT<T> softmax_cross_entropy(TapeT<T>* tape, const TensorT<T>& logits,
                                 std::span<const int> labels) {
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax_cross_entropy expects [N,K] logits");
    const int N = s[0], K = s[1];
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("softmax_cross_entropy needs one label per row");
    for (int lb : labels)
        if (lb < 0 || lb >= K)
            throw ShapeError("label " + std::to_string(lb) + " out of range [0," +
                             std::to_string(K) + ")");

    auto probs = std::make_shared<std::vector<T>>(softmax_rows(logits));
    const T* l = logits.values().data();
    T total = T(0);
    for (int n = 0; n < N; ++n) {
        const T* row = l + static_cast<std::size_t>(n) * K;
        T mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T z = T(0);
        for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
        total += -(row[labels[n]] - mx - std::log(z));
    }
    TensorT<T> out = TensorT<T>::scalar(total / static_cast<T>(N));

    if (tape && logits.requires_grad()) {
        out.set_requires_grad(true);
        auto ls = logits.storage();
        auto ys = out.storage();
        auto labels_copy = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
        tape->record([ls, ys, probs, labels_copy, N, K]() {
            if (ys->grad.empty()) return;
            const T g = ys->grad[0];
            if (ls->grad.empty()) ls->grad.assign(ls->values.size(), T(0));
            for (int n = 0; n < N; ++n) {
                const std::size_t base = static_cast<std::size_t>(n) * K;
                for (int k = 0; k < K; ++k) {
                    T p = (*probs)[base + k];
                    if (k == (*labels_copy)[n]) p -= T(1);
                    ls->grad[base + k] += g * p / static_cast<T>(N);
                }
            }
        });
    }
    return out;
}

template <class T>
TensorT<T> regression_loss(TapeT<T>* tape, const TensorT<T>& prediction,
                           std::span<const T> targets, RegressionNorm norm) {
    const auto& s = prediction.shape();
    const bool ok = (s.size() == 1) || (s.size() == 2 && s[1] == 1);
    if (!ok) throw ShapeError("regression_loss expects predictions [N] or [N,1]");
    const int N = s[0];
    if (static_cast<int>(targets.size()) != N)
        throw ShapeError("regression_loss needs one target per prediction");

    const T* p = prediction.values().data();
    T total = T(0);
    for (int n = 0; n < N; ++n) {
        const T dlt = p[n] - targets[n];
        total += norm == RegressionNorm::kL2 ? dlt * dlt : std::abs(dlt);
    }
    TensorT<T> out = TensorT<T>::scalar(total / static_cast<T>(N));

    if (tape && prediction.requires_grad()) {
        out.set_requires_grad(true);
        auto ps = prediction.storage();
        auto ys = out.storage();
        auto targets_copy = std::make_shared<std::vector<T>>(targets.begin(), targets.end());
        tape->record([ps, ys, targets_copy, N, norm]() {
            if (ys->grad.empty()) return;
            const T g = ys->grad[0];
            if (ps->grad.empty()) ps->grad.assign(ps->values.size(), T(0));
            for (int n = 0; n < N; ++n) {
                const T dlt = ps->values[n] - (*targets_copy)[n];
                T d;
                if (norm == RegressionNorm::kL2) {
                    d = T(2) * dlt;
                } else {
                    d = dlt > T(0) ? T(1) : (dlt < T(0) ? T(-1) : T(0));
                }
                ps->grad[n] += g * d / static_cast<T>(N);
            }
        });
    }
    return out;
}

template <class T>
void sgd_step(std::span<TensorT<T>> params, T lr, T momentum, T weight_decay,
              std::vector<std::vector<T>>& velocity) {
    if (velocity.size() < params.size()) velocity.resize(params.size());
    for (std::size_t p = 0; p < params.size(); ++p) {
        TensorT<T>& t = params[p];
        auto g = t.grad();
        if (velocity[p].size() != t.size()) velocity[p].assign(t.size(), T(0));
        auto vals = t.values();
        auto& vel = velocity[p];
        for (std::size_t i = 0; i < vals.size(); ++i) {
            vel[i] = momentum * vel[i] + g[i] + weight_decay * vals[i];
            vals[i] -= lr * vel[i];
        }
        t.zero_grad();
    }
}

template <class T>
std::vector<T> finite_diff_grad(const std::function<T(const TensorT<T>&)>& f,
                                const TensorT<T>& x, T h) {
    if (!(h > T(0))) throw ConfigError("finite_diff_grad step h must be > 0");
    std::vector<T> g(x.size());
    auto vals = x.storage()->values.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T orig = vals[i];
        vals[i] = orig + h;
        const T fp = f(x);
        vals[i] = orig - h;
        const T fm = f(x);
        vals[i] = orig;
        g[i] = (fp - fm) / (T(2) * h);
    }
    return g;
}

#define ROTPRETEXT_INSTANTIATE_OPS(T)                                                        \
    template TensorT<T> conv3d<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&,           \
                                  const TensorT<T>&, const Conv3dGeom&, ConvEngine);         \
    template TensorT<T> batchnorm3d<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&,      \
                                       const TensorT<T>&, BatchNormStats<T>&, bool, T, T,    \
                                       bool);                                                \
    template TensorT<T> relu<T>(TapeT<T>*, const TensorT<T>&);                               \
    template TensorT<T> maxpool3d<T>(TapeT<T>*, const TensorT<T>&, Dims3, Dims3, Dims3);     \
    template TensorT<T> global_avg_pool<T>(TapeT<T>*, const TensorT<T>&);                    \
    template TensorT<T> linear<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&,           \
                                  const TensorT<T>&);                                        \
    template TensorT<T> add<T>(TapeT<T>*, const TensorT<T>&, const TensorT<T>&);             \
    template std::vector<T> softmax_rows<T>(const TensorT<T>&);                              \
    template TensorT<T> softmax_cross_entropy<T>(TapeT<T>*, const TensorT<T>&,               \
                                                 std::span<const int>);                      \
    template TensorT<T> regression_loss<T>(TapeT<T>*, const TensorT<T>&, std::span<const T>, \
                                           RegressionNorm);                                  \
    template void sgd_step<T>(std::span<TensorT<T>>, T, T, T, std::vector<std::vector<T>>&); \
    template std::vector<T> finite_diff_grad<T>(const std::function<T(const TensorT<T>&)>&,  \
                                                const TensorT<T>&, T);

ROTPRETEXT_INSTANTIATE_OPS(float)
ROTPRETEXT_INSTANTIATE_OPS(double)

#undef ROTPRETEXT_INSTANTIATE_OPS

}  // namespace rotpretext
