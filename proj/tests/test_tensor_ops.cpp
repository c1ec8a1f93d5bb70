#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "rotpretext/nn_ops.hpp"

using namespace rotpretext;
using DTensor = TensorT<double>;
using DTape = TapeT<double>;

namespace {

DTensor random_dtensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                       bool rg = false) {
    return DTensor::uniform(std::move(shape), lo, hi, rng, rg);
}

// Fixed-projection scalarization so every output element contributes to the
// checked gradient.
double project(const DTensor& t, const std::vector<double>& proj) {
    double acc = 0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += proj[i] * t.values()[i];
    return acc;
}

std::vector<double> make_projection(std::size_t n, Rng& rng) {
    std::vector<double> p(n);
    for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    return p;
}

// Compares tape gradients against central differences for a generic op.
void check_grad(const std::function<DTensor(DTape*, const DTensor&)>& op, DTensor x, double tol,
                Rng& rng) {
    x.set_requires_grad(true);
    x.storage()->grad.clear();  // drop anything accumulated by earlier checks
    DTape tape;
    DTensor out = op(&tape, x);
    const auto proj = make_projection(out.size(), rng);

    // Seed the projection gradient by composing a projection "loss" node.
    DTensor loss = DTensor::scalar(project(out, proj));
    loss.set_requires_grad(true);
    auto os = out.storage();
    auto ps = std::make_shared<std::vector<double>>(proj);
    auto ls = loss.storage();
    tape.record([os, ps, ls]() {
        if (ls->grad.empty()) return;
        if (os->grad.empty()) os->grad.assign(os->values.size(), 0.0);
        for (std::size_t i = 0; i < os->values.size(); ++i)
            os->grad[i] += ls->grad[0] * (*ps)[i];
    });
    backward(loss, tape);

    auto f = [&op, &proj](const DTensor& t) {
        DTensor y = op(nullptr, const_cast<DTensor&>(t));
        return project(y, proj);
    };
    const auto fd = finite_diff_grad<double>(f, x, 1e-5);
    auto g = x.grad();
    double worst = 0;
    for (std::size_t i = 0; i < fd.size(); ++i)
        worst = std::max(worst, oracles::rel_err(g[i], fd[i]));
    CHECK(worst < tol);
}

}  // namespace

TEST_CASE("conv3d pointwise kernel scales the input") {
    Tensor x = Tensor::full({1, 2, 3, 3}, 0.5f);
    Tensor w = Tensor::full({1, 1, 1, 1, 1}, 3.0f);
    Tensor b = Tensor::zeros({1});
    Tensor y = conv3d<float>(nullptr, x, w, b, {});
    for (float v : y.values()) CHECK(v == doctest::Approx(1.5f));
    CHECK(y.shape() == std::vector<int>{1, 2, 3, 3});
}

TEST_CASE("conv3d full-window kernel reduces to one inner product") {
    Rng rng(7);
    Tensor x = Tensor::uniform({2, 3, 4, 4}, -1.f, 1.f, rng);
    Tensor w = Tensor::uniform({3, 2, 3, 4, 4}, -1.f, 1.f, rng);
    Tensor b = Tensor::from_values({3}, {0.1f, -0.2f, 0.3f});
    Tensor y = conv3d<float>(nullptr, x, w, b, {});
    REQUIRE(y.shape() == std::vector<int>{3, 1, 1, 1});
    for (int f = 0; f < 3; ++f) {
        double acc = b.values()[f];
        for (std::size_t i = 0; i < x.size(); ++i)
            acc += x.values()[i] * w.values()[f * x.size() + i];
        CHECK(y.values()[f] == doctest::Approx(acc).epsilon(1e-5));
    }
}

TEST_CASE("conv3d matches the naive reference on a strided padded case") {
    Rng rng(11);
    Tensor x = Tensor::uniform({2, 4, 6, 6}, -1.f, 1.f, rng);
    Tensor w = Tensor::uniform({3, 2, 3, 3, 3}, -1.f, 1.f, rng);
    Tensor b = Tensor::uniform({3}, -0.5f, 0.5f, rng);
    const Conv3dGeom geom{{1, 2, 2}, {1, 1, 1}};
    const auto expect = oracles::conv3d_reference<float>(
        {x.values().begin(), x.values().end()}, 2, 4, 6, 6,
        {w.values().begin(), w.values().end()}, 3, 3, 3, 3,
        {b.values().begin(), b.values().end()}, geom.stride, geom.padding);
    for (ConvEngine engine : {ConvEngine::kIm2col, ConvEngine::kDirect}) {
        Tensor y = conv3d<float>(nullptr, x, w, b, geom, engine);
        REQUIRE(y.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i)
            CHECK(std::abs(y.values()[i] - expect[i]) < 1e-5f);
    }
}

TEST_CASE("conv3d engines agree on randomized shapes") {
    Rng rng(13);
    for (int trial = 0; trial < 8; ++trial) {
        const int C = 1 + static_cast<int>(rng.uniform_index(3));
        const int F = 1 + static_cast<int>(rng.uniform_index(4));
        const int Ti = 2 + static_cast<int>(rng.uniform_index(4));
        const int H = 4 + static_cast<int>(rng.uniform_index(5));
        const int W = 4 + static_cast<int>(rng.uniform_index(5));
        const int k = 1 + 2 * static_cast<int>(rng.uniform_index(2));  // 1 or 3
        const Conv3dGeom geom{{1, 1 + static_cast<int>(rng.uniform_index(2)), 1},
                              {k / 2, k / 2, k / 2}};
        Tensor x = Tensor::uniform({2, C, Ti, H, W}, -1.f, 1.f, rng);
        Tensor w = Tensor::uniform({F, C, k, k, k}, -1.f, 1.f, rng);
        Tensor b = Tensor::uniform({F}, -0.5f, 0.5f, rng);
        Tensor a = conv3d<float>(nullptr, x, w, b, geom, ConvEngine::kIm2col);
        Tensor d = conv3d<float>(nullptr, x, w, b, geom, ConvEngine::kDirect);
        REQUIRE(a.shape() == d.shape());
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(std::abs(a.values()[i] - d.values()[i]) < 1e-5f);
    }
}

TEST_CASE("conv3d is linear in its input with zero bias") {
    Rng rng(17);
    Tensor x = Tensor::uniform({1, 2, 3, 5, 5}, -1.f, 1.f, rng);
    Tensor y = Tensor::uniform({1, 2, 3, 5, 5}, -1.f, 1.f, rng);
    Tensor w = Tensor::uniform({3, 2, 3, 3, 3}, -1.f, 1.f, rng);
    Tensor b = Tensor::zeros({3});
    const Conv3dGeom geom{{1, 1, 1}, {1, 1, 1}};
    const float alpha = 0.7f, beta = -1.3f;
    Tensor mix = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        mix.values()[i] = alpha * x.values()[i] + beta * y.values()[i];
    Tensor lhs = conv3d<float>(nullptr, mix, w, b, geom);
    Tensor cx = conv3d<float>(nullptr, x, w, b, geom);
    Tensor cy = conv3d<float>(nullptr, y, w, b, geom);
    for (std::size_t i = 0; i < lhs.size(); ++i)
        CHECK(std::abs(lhs.values()[i] - (alpha * cx.values()[i] + beta * cy.values()[i])) <
              1e-5f);
}

TEST_CASE("conv and pool output extents obey the shape law") {
    Rng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const int in = 3 + static_cast<int>(rng.uniform_index(12));
        const int k = 1 + static_cast<int>(rng.uniform_index(3));
        const int s = 1 + static_cast<int>(rng.uniform_index(3));
        const int p = static_cast<int>(rng.uniform_index(2));
        if (k > in + 2 * p) continue;
        CHECK(conv_output_extent(in, k, s, p) == (in + 2 * p - k) / s + 1);
    }
    CHECK_THROWS_AS(conv_output_extent(3, 5, 1, 0), ShapeError);
}

TEST_CASE("conv3d rejects channel mismatches with a shape diagnostic") {
    Tensor x = Tensor::zeros({2, 3, 4, 4});
    Tensor w = Tensor::zeros({1, 3, 1, 1, 1});
    Tensor b = Tensor::zeros({1});
    CHECK_THROWS_WITH_AS(conv3d<float>(nullptr, x, w, b, {}),
                         doctest::Contains("channel mismatch"), ShapeError);
}

TEST_CASE("conv3d gradients match finite differences") {
    Rng rng(23);
    DTensor x = random_dtensor({2, 2, 3, 5, 5}, rng);
    DTensor w = random_dtensor({3, 2, 3, 3, 3}, rng, -1, 1, true);
    DTensor b = random_dtensor({3}, rng, -0.5, 0.5, true);
    const Conv3dGeom geom{{1, 2, 2}, {1, 1, 1}};

    SUBCASE("w.r.t. input") {
        check_grad([&](DTape* t, const DTensor& in) { return conv3d(t, in, w, b, geom); }, x,
                   1e-4, rng);
    }
    SUBCASE("w.r.t. weight") {
        check_grad([&](DTape* t, const DTensor& wt) { return conv3d(t, x, wt, b, geom); }, w,
                   1e-4, rng);
    }
    SUBCASE("w.r.t. bias") {
        check_grad([&](DTape* t, const DTensor& bs) { return conv3d(t, x, w, bs, geom); }, b,
                   1e-4, rng);
    }
    SUBCASE("direct engine records the same backward") {
        check_grad(
            [&](DTape* t, const DTensor& in) {
                return conv3d(t, in, w, b, geom, ConvEngine::kDirect);
            },
            x, 1e-4, rng);
    }
}

TEST_CASE("batchnorm3d normalizes a constant batch to zero") {
    // 0.25 sums exactly in f32, so the zero here is exact.
    Tensor x = Tensor::full({2, 3, 2, 2, 2}, 0.25f);
    Tensor gamma = Tensor::full({3}, 1.0f);
    Tensor beta = Tensor::zeros({3});
    auto running = BatchNormStats<float>::init(3);
    Tensor y = batchnorm3d<float>(nullptr, x, gamma, beta, running, true, 0.1f, 1e-5f);
    for (float v : y.values()) CHECK(v == 0.0f);
}

TEST_CASE("batchnorm3d with zero gamma emits beta") {
    Rng rng(29);
    Tensor x = Tensor::uniform({2, 2, 2, 3, 3}, -1.f, 1.f, rng);
    Tensor gamma = Tensor::zeros({2});
    Tensor beta = Tensor::from_values({2}, {0.5f, -1.5f});
    auto running = BatchNormStats<float>::init(2);
    Tensor y = batchnorm3d<float>(nullptr, x, gamma, beta, running, true, 0.1f, 1e-5f);
    const std::size_t inner = 2 * 3 * 3;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < inner; ++i)
                CHECK(y.values()[(n * 2 + c) * inner + i] ==
                      doctest::Approx(beta.values()[c]));
}

TEST_CASE("batchnorm3d train-mode output has mean beta and std gamma") {
    Rng rng(31);
    Tensor x = Tensor::uniform({4, 3, 4, 6, 6}, -2.f, 2.f, rng);
    Tensor gamma = Tensor::from_values({3}, {1.5f, 0.5f, 2.0f});
    Tensor beta = Tensor::from_values({3}, {0.1f, -0.3f, 0.7f});
    auto running = BatchNormStats<float>::init(3);
    Tensor y = batchnorm3d<float>(nullptr, x, gamma, beta, running, true, 0.1f, 1e-8f);
    const std::size_t inner = 4 * 6 * 6;
    for (int c = 0; c < 3; ++c) {
        double sum = 0, sq = 0;
        for (int n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < inner; ++i) {
                const double v = y.values()[(n * 3 + c) * inner + i];
                sum += v;
                sq += v * v;
            }
        const double m = 4.0 * inner;
        const double mean = sum / m;
        const double stddev = std::sqrt(sq / m - mean * mean);
        CHECK(std::abs(mean - beta.values()[c]) < 1e-4);
        CHECK(std::abs(stddev - gamma.values()[c]) < 1e-4);
    }
}

TEST_CASE("batchnorm3d rejects non-positive epsilon") {
    Tensor x = Tensor::zeros({1, 1, 2, 2, 2});
    Tensor gamma = Tensor::full({1}, 1.0f);
    Tensor beta = Tensor::zeros({1});
    auto running = BatchNormStats<float>::init(1);
    CHECK_THROWS_AS(batchnorm3d<float>(nullptr, x, gamma, beta, running, true, 0.1f, 0.0f),
                    ConfigError);
}

TEST_CASE("batchnorm3d gradients match finite differences") {
    Rng rng(37);
    DTensor gamma = random_dtensor({2}, rng, 0.5, 1.5, true);
    DTensor beta = random_dtensor({2}, rng, -0.5, 0.5, true);
    DTensor x = random_dtensor({3, 2, 2, 3, 3}, rng, -1, 1);

    SUBCASE("w.r.t. input (train mode)") {
        check_grad(
            [&](DTape* t, const DTensor& in) {
                auto running = BatchNormStats<double>::init(2);
                return batchnorm3d(t, in, gamma, beta, running, true, 0.1, 1e-8);
            },
            x, 1e-4, rng);
    }
    SUBCASE("w.r.t. gamma") {
        check_grad(
            [&](DTape* t, const DTensor& g) {
                auto running = BatchNormStats<double>::init(2);
                return batchnorm3d(t, x, g, beta, running, true, 0.1, 1e-8);
            },
            gamma, 1e-4, rng);
    }
    SUBCASE("w.r.t. beta") {
        check_grad(
            [&](DTape* t, const DTensor& bt) {
                auto running = BatchNormStats<double>::init(2);
                return batchnorm3d(t, x, gamma, bt, running, true, 0.1, 1e-8);
            },
            beta, 1e-4, rng);
    }
    SUBCASE("w.r.t. input (eval mode)") {
        auto running = BatchNormStats<double>::init(2);
        running.mean = {0.2, -0.1};
        running.var = {1.3, 0.8};
        check_grad(
            [&](DTape* t, const DTensor& in) {
                auto stats = running;
                return batchnorm3d(t, in, gamma, beta, stats, false, 0.1, 1e-8);
            },
            x, 1e-4, rng);
    }
}

TEST_CASE("relu forward and masked backward") {
    Tensor x = Tensor::from_values({3}, {-1.f, 0.f, 2.f});
    Tensor y = relu<float>(nullptr, x);
    CHECK(y.values()[0] == 0.f);
    CHECK(y.values()[1] == 0.f);
    CHECK(y.values()[2] == 2.f);

    Tensor neg = Tensor::full({4}, -0.5f, true);
    Tape tape;
    Tensor out = relu(&tape, neg);
    for (float v : out.values()) CHECK(v == 0.f);
    out.grad();  // allocate, then pretend an upstream gradient of ones
    for (auto& g : out.storage()->grad) g = 1.0f;
    tape.replay_backward();
    for (float g : neg.grad()) CHECK(g == 0.f);
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    Rng rng(41);
    DTensor x = random_dtensor({40}, rng, -1, 1, true);
    for (auto& v : x.storage()->values)
        if (std::abs(v) < 1e-3) v = 0.5;  // keep measurement points off the kink
    check_grad([&](DTape* t, const DTensor& in) { return relu(t, in); }, x, 1e-4, rng);
}

TEST_CASE("maxpool3d constant input and spike routing") {
    Tensor c = Tensor::full({1, 1, 4, 4, 4}, 0.25f);
    Tensor y = maxpool3d<float>(nullptr, c, {2, 2, 2}, {2, 2, 2});
    for (float v : y.values()) CHECK(v == 0.25f);

    Tensor spike = Tensor::zeros({1, 1, 2, 2, 2}, true);
    spike.values()[5] = 3.0f;
    Tape tape;
    Tensor out = maxpool3d(&tape, spike, {2, 2, 2}, {1, 1, 1});
    CHECK(out.size() == 1);
    CHECK(out.values()[0] == 3.0f);
    out.grad();
    out.storage()->grad[0] = 1.0f;
    tape.replay_backward();
    for (std::size_t i = 0; i < spike.size(); ++i)
        CHECK(spike.grad()[i] == (i == 5 ? 1.0f : 0.0f));
}

TEST_CASE("maxpool3d equals the naive oracle exactly") {
    Rng rng(43);
    Tensor x = Tensor::uniform({1, 3, 5, 7, 7}, -1.f, 1.f, rng);
    const Dims3 kernel{2, 3, 3}, stride{1, 2, 2};
    Tensor y = maxpool3d<float>(nullptr, x, kernel, stride);
    const auto expect = oracles::maxpool3d_reference<float>(
        {x.values().begin(), x.values().end()}, 3, 5, 7, 7, kernel, stride);
    REQUIRE(y.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y.values()[i] == expect[i]);
}

TEST_CASE("global_avg_pool forward and gradient") {
    Tensor c = Tensor::full({2, 3, 2, 2, 2}, 0.7f);
    Tensor y = global_avg_pool<float>(nullptr, c);
    REQUIRE(y.shape() == std::vector<int>{2, 3});
    for (float v : y.values()) CHECK(v == doctest::Approx(0.7f));

    Tensor onehot = Tensor::zeros({1, 1, 2, 2, 2});
    onehot.values()[3] = 1.0f;
    CHECK(global_avg_pool<float>(nullptr, onehot).values()[0] == doctest::Approx(0.125f));

    Rng rng(47);
    DTensor x = random_dtensor({2, 2, 2, 3, 3}, rng, -1, 1, true);
    check_grad([&](DTape* t, const DTensor& in) { return global_avg_pool(t, in); }, x, 1e-4, rng);

    Tensor r = Tensor::uniform({2, 2, 3, 4, 4}, -1.f, 1.f, rng);
    Tensor pooled = global_avg_pool<float>(nullptr, r);
    for (int n = 0; n < 2; ++n)
        for (int ch = 0; ch < 2; ++ch) {
            double mean = 0;
            const std::size_t inner = 3 * 4 * 4;
            for (std::size_t i = 0; i < inner; ++i)
                mean += r.values()[(n * 2 + ch) * inner + i];
            mean /= static_cast<double>(inner);
            CHECK(std::abs(pooled.values()[n * 2 + ch] - mean) < 1e-6);
        }
}

TEST_CASE("linear identity, zero weight and oracle") {
    Rng rng(53);
    Tensor x = Tensor::uniform({3, 4}, -1.f, 1.f, rng);
    Tensor eye = Tensor::zeros({4, 4});
    for (int i = 0; i < 4; ++i) eye.values()[i * 4 + i] = 1.0f;
    Tensor zero_bias = Tensor::zeros({4});
    Tensor y = linear<float>(nullptr, x, eye, zero_bias);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.values()[i] == x.values()[i]);

    Tensor zero_w = Tensor::zeros({2, 4});
    Tensor bias = Tensor::from_values({2}, {0.3f, -0.6f});
    Tensor yb = linear<float>(nullptr, x, zero_w, bias);
    for (int n = 0; n < 3; ++n) {
        CHECK(yb.values()[n * 2 + 0] == 0.3f);
        CHECK(yb.values()[n * 2 + 1] == -0.6f);
    }

    Tensor w = Tensor::uniform({5, 4}, -1.f, 1.f, rng);
    Tensor b = Tensor::uniform({5}, -1.f, 1.f, rng);
    Tensor yo = linear<float>(nullptr, x, w, b);
    const auto expect = oracles::linear_reference<float>(
        {x.values().begin(), x.values().end()}, 3, 4, {w.values().begin(), w.values().end()}, 5,
        {b.values().begin(), b.values().end()});
    for (std::size_t i = 0; i < expect.size(); ++i)
        CHECK(std::abs(yo.values()[i] - expect[i]) < 1e-5f);
}

TEST_CASE("linear gradients match finite differences") {
    Rng rng(59);
    DTensor x = random_dtensor({3, 4}, rng, -1, 1, true);
    DTensor w = random_dtensor({2, 4}, rng, -1, 1, true);
    DTensor b = random_dtensor({2}, rng, -1, 1, true);
    check_grad([&](DTape* t, const DTensor& in) { return linear(t, in, w, b); }, x, 1e-4, rng);
    check_grad([&](DTape* t, const DTensor& wt) { return linear(t, x, wt, b); }, w, 1e-4, rng);
    check_grad([&](DTape* t, const DTensor& bs) { return linear(t, x, w, bs); }, b, 1e-4, rng);
}

TEST_CASE("softmax_cross_entropy on uniform logits is ln K") {
    Tensor logits = Tensor::full({3, 4}, 0.8f);
    Tensor loss = softmax_cross_entropy<float>(nullptr, logits, std::vector<int>{0, 2, 3});
    CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-5));
}

TEST_CASE("softmax_cross_entropy saturates toward zero loss") {
    Tensor logits = Tensor::zeros({1, 4});
    logits.values()[2] = 20.0f;
    Tensor loss = softmax_cross_entropy<float>(nullptr, logits, std::vector<int>{2});
    CHECK(loss.item() < 1e-3f);
}

TEST_CASE("softmax_cross_entropy rejects out-of-range labels") {
    Tensor logits = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(softmax_cross_entropy<float>(nullptr, logits, std::vector<int>{0, 3}),
                    ShapeError);
    CHECK_THROWS_AS(softmax_cross_entropy<float>(nullptr, logits, std::vector<int>{-1, 0}),
                    ShapeError);
}

TEST_CASE("softmax_cross_entropy gradient is (softmax - onehot)/N") {
    Rng rng(61);
    DTensor logits = random_dtensor({4, 5}, rng, -2, 2, true);
    const std::vector<int> labels{1, 0, 4, 2};
    DTape tape;
    DTensor loss = softmax_cross_entropy(&tape, logits, std::span<const int>(labels));
    backward(loss, tape);
    const auto probs = softmax_rows(logits);
    for (int n = 0; n < 4; ++n)
        for (int k = 0; k < 5; ++k) {
            double expect = probs[n * 5 + k];
            if (k == labels[static_cast<std::size_t>(n)]) expect -= 1.0;
            expect /= 4.0;
            CHECK(std::abs(logits.grad()[n * 5 + k] - expect) < 1e-10);
        }

    const std::vector<int> fresh_labels{1, 0, 3};
    DTensor fresh = random_dtensor({3, 4}, rng, -2, 2, true);
    check_grad(
        [&](DTape* t, const DTensor& l) {
            return softmax_cross_entropy(t, l, std::span<const int>(fresh_labels));
        },
        fresh, 1e-3, rng);
}

TEST_CASE("regression_loss values and gradient") {
    Tensor p = Tensor::from_values({2, 1}, {0.25f, 0.75f});
    const std::vector<float> y{0.25f, 0.75f};
    CHECK(regression_loss<float>(nullptr, p, y, RegressionNorm::kL2).item() == 0.0f);
    CHECK(regression_loss<float>(nullptr, p, y, RegressionNorm::kL1).item() == 0.0f);

    Tensor p2 = Tensor::from_values({1, 1}, {0.5f});
    const std::vector<float> y2{0.25f};
    CHECK(regression_loss<float>(nullptr, p2, y2, RegressionNorm::kL2).item() ==
          doctest::Approx(0.0625f));

    Rng rng(67);
    DTensor pred = random_dtensor({5, 1}, rng, -1, 1, true);
    std::vector<double> targets(5);
    // Offsets keep the L1 kink far from every finite-difference probe.
    for (std::size_t i = 0; i < targets.size(); ++i)
        targets[i] = pred.values()[i] + (i % 2 ? 0.3 : -0.4);
    for (RegressionNorm norm : {RegressionNorm::kL1, RegressionNorm::kL2}) {
        check_grad(
            [&](DTape* t, const DTensor& pr) {
                return regression_loss(t, pr, std::span<const double>(targets), norm);
            },
            pred, 1e-3, rng);
    }
}

namespace {

// Scalar sum node, recorded on the tape by hand.
template <class T>
TensorT<T> tape_sum(TapeT<T>* tape, const TensorT<T>& x) {
    T total = 0;
    for (T v : x.values()) total += v;
    TensorT<T> out = TensorT<T>::scalar(total);
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        auto xs = x.storage();
        auto os = out.storage();
        tape->record([xs, os]() {
            if (os->grad.empty()) return;
            if (xs->grad.empty()) xs->grad.assign(xs->values.size(), T(0));
            for (auto& g : xs->grad) g += os->grad[0];
        });
    }
    return out;
}

}  // namespace

TEST_CASE("backward fills ones for a sum and accumulates reuse") {
    Rng rng(71);
    DTensor x = DTensor::uniform({6}, -1, 1, rng, true);
    {
        DTape tape;
        DTensor loss = tape_sum(&tape, x);
        backward(loss, tape);
        for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    }
    DTensor y = DTensor::uniform({6}, -1, 1, rng, true);
    {
        DTape tape;
        DTensor doubled = add(&tape, y, y);  // y contributes twice
        DTensor loss = tape_sum(&tape, doubled);
        backward(loss, tape);
        for (double g : y.grad()) CHECK(g == doctest::Approx(2.0));
        CHECK_THROWS_AS(backward(doubled, tape), ShapeError);
    }
}

TEST_CASE("tape nodes replay exactly once per backward") {
    DTape tape;
    int calls = 0;
    tape.record([&calls]() { ++calls; });
    DTensor loss = DTensor::scalar(1.0, true);
    backward(loss, tape);
    CHECK(calls == 1);
}

TEST_CASE("sgd_step plain gradient descent and frozen lr") {
    Tensor p = Tensor::from_values({3}, {1.f, 2.f, 3.f}, true);
    p.grad()[0] = 0.5f;
    p.grad()[1] = -1.f;
    p.grad()[2] = 0.f;
    std::vector<std::vector<float>> vel;
    std::vector<Tensor> params{p};
    sgd_step<float>(params, 0.1f, 0.0f, 0.0f, vel);
    CHECK(p.values()[0] == doctest::Approx(1.f - 0.05f));
    CHECK(p.values()[1] == doctest::Approx(2.f + 0.1f));
    CHECK(p.values()[2] == doctest::Approx(3.f));
    for (float g : p.grad()) CHECK(g == 0.f);  // grads zeroed

    Tensor q = Tensor::from_values({2}, {1.f, -1.f}, true);
    q.grad()[0] = 123.f;
    std::vector<std::vector<float>> vel2;
    std::vector<Tensor> params2{q};
    sgd_step<float>(params2, 0.0f, 0.9f, 0.0f, vel2);
    CHECK(q.values()[0] == 1.f);
    CHECK(q.values()[1] == -1.f);
}

TEST_CASE("sgd momentum on a quadratic bowl matches the scalar recurrence") {
    // f(w) = w^2 per coordinate: grad = 2w.
    Tensor w = Tensor::from_values({2}, {1.0f, -2.0f}, true);
    std::vector<std::vector<float>> vel;
    std::vector<Tensor> params{w};
    float rw1 = 1.0f, rw2 = -2.0f, rv1 = 0.0f, rv2 = 0.0f;
    const float lr = 0.1f, mom = 0.9f;
    for (int step = 0; step < 20; ++step) {
        w.grad()[0] = 2.0f * w.values()[0];
        w.grad()[1] = 2.0f * w.values()[1];
        sgd_step<float>(params, lr, mom, 0.0f, vel);
        rv1 = mom * rv1 + 2.0f * rw1;
        rw1 = rw1 - lr * rv1;
        rv2 = mom * rv2 + 2.0f * rw2;
        rw2 = rw2 - lr * rv2;
        CHECK(w.values()[0] == rw1);
        CHECK(w.values()[1] == rw2);
    }
}

TEST_CASE("finite_diff_grad known derivatives") {
    DTensor x = DTensor::from_values({3}, {1.0, -2.0, 0.5});
    auto sum = [](const DTensor& t) {
        double acc = 0;
        for (double v : t.values()) acc += v;
        return acc;
    };
    for (double g : finite_diff_grad<double>(sum, x, 1e-4)) CHECK(g == doctest::Approx(1.0));

    DTensor x3 = DTensor::from_values({1}, {3.0});
    auto square = [](const DTensor& t) { return t.values()[0] * t.values()[0]; };
    CHECK(std::abs(finite_diff_grad<double>(square, x3, 1e-4)[0] - 6.0) < 1e-6);
}

TEST_CASE("identical seeds give identical streams") {
    Rng a(12345), b(12345);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(9).fork(4), d = Rng(9).fork(4);
    for (int i = 0; i < 10; ++i) CHECK(c.uniform() == d.uniform());
    Rng e = Rng(9).fork(5);
    bool differs = false;
    Rng c2 = Rng(9).fork(4);
    for (int i = 0; i < 10; ++i) differs |= c2.uniform() != e.uniform();
    CHECK(differs);
}

TEST_CASE("forward and backward stay finite on bounded inputs") {
    Rng rng(73);
    DTensor x = random_dtensor({2, 2, 3, 6, 6}, rng, -10, 10, true);
    DTensor w = random_dtensor({3, 2, 3, 3, 3}, rng, -10, 10, true);
    DTensor b = random_dtensor({3}, rng, -10, 10, true);
    DTape tape;
    DTensor conv = conv3d(&tape, x, w, b, Conv3dGeom{{1, 2, 2}, {1, 1, 1}});
    DTensor gamma = DTensor::full({3}, 1.0, true);
    DTensor beta = DTensor::zeros({3}, true);
    auto running = BatchNormStats<double>::init(3);
    DTensor bn = batchnorm3d(&tape, conv, gamma, beta, running, true, 0.1, 1e-5);
    DTensor act = relu(&tape, bn);
    DTensor pooled = global_avg_pool(&tape, act);
    DTensor loss = softmax_cross_entropy(&tape, pooled, std::vector<int>{0, 2});
    CHECK(std::isfinite(loss.item()));
    backward(loss, tape);
    CHECK(all_finite(std::span<const double>(x.grad_view())));
    CHECK(all_finite(std::span<const double>(w.grad_view())));
}
