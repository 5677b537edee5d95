#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "finegrain/conv.hpp"
#include "finegrain/layers.hpp"
#include "oracles.hpp"

using namespace fg;

namespace {

// Lays G grouped weight blocks side by side into one full-width kernel:
// expansion output channel g*c_out+c covers input channels [g*cpg, (g+1)*cpg).
Tensor expansion_from_full(const Tensor& full, std::int64_t groups) {
    const Shape s = full.shape();  // (c_out, c_in, k, k)
    const std::int64_t cpg = s.c / groups;
    Tensor e({groups * s.n, cpg, s.h, s.w});
    for (std::int64_t g = 0; g < groups; ++g)
        for (std::int64_t c = 0; c < s.n; ++c)
            for (std::int64_t j = 0; j < cpg; ++j)
                for (std::int64_t kh = 0; kh < s.h; ++kh)
                    for (std::int64_t kw = 0; kw < s.w; ++kw)
                        e.at(g * s.n + c, j, kh, kw) = full.at(c, g * cpg + j, kh, kw);
    return e;
}

}  // namespace

TEST_CASE("conv2d") {
    SUBCASE("1x1 identity kernel") {
        Rng rng(1);
        Tensor x = oracle::random_tensor<float>({2, 1, 4, 4}, rng);
        ConvParams p;
        p.weight = Tensor::constant({1, 1, 1, 1}, 1.0f);
        CHECK(max_abs_diff(conv2d(x, p), x) == 0.0);
    }
    SUBCASE("ones kernel counts the window") {
        ConvParams p;
        p.weight = Tensor::constant({1, 1, 3, 3}, 1.0f);
        p.padding = 1;
        Tensor x = Tensor::constant({1, 1, 5, 5}, 1.0f);
        Tensor y = conv2d(x, p);
        CHECK(y.shape() == Shape{1, 1, 5, 5});
        CHECK(y.at(0, 0, 2, 2) == 9.0f);  // interior
        CHECK(y.at(0, 0, 0, 0) == 4.0f);  // corner
    }
    SUBCASE("random case matches the scalar loop oracle") {
        Rng rng(2);
        Tensor x = oracle::random_tensor<float>({2, 4, 6, 6}, rng);
        ConvParams p;
        p.weight = oracle::random_tensor<float>({3, 4, 3, 3}, rng);
        p.bias = oracle::random_tensor<float>({1, 3, 1, 1}, rng);
        p.stride = 2;
        p.padding = 1;
        CHECK(max_abs_diff(conv2d(x, p), oracle::naive_conv2d(x, p)) <= 1e-5);
    }
    SUBCASE("output spatial size follows the floor formula") {
        ConvParams p;
        p.weight = Tensor::zeros({1, 1, 3, 3});
        p.stride = 2;
        Tensor y = conv2d(Tensor::zeros({1, 1, 7, 9}), p);
        CHECK(y.shape() == Shape{1, 1, 3, 4});
    }
    SUBCASE("shape mismatch rejected") {
        ConvParams p;
        p.weight = Tensor::zeros({2, 3, 1, 1});
        CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 4, 2, 2}), p), ShapeError);
    }
    SUBCASE("grouped conv equals per-slice convs") {
        Rng rng(3);
        Tensor x = oracle::random_tensor<float>({2, 6, 5, 5}, rng);
        ConvParams p;
        p.weight = oracle::random_tensor<float>({4, 3, 3, 3}, rng);
        p.groups = 2;
        p.padding = 1;
        Tensor y = conv2d(x, p);

        ConvParams half;
        half.padding = 1;
        half.weight = slice_channels(p.weight, 0, 3);
        Tensor w0({2, 3, 3, 3});
        std::copy_n(p.weight.data(), w0.size(), w0.data());
        Tensor w1({2, 3, 3, 3});
        std::copy_n(p.weight.data() + w0.size(), w1.size(), w1.data());
        half.weight = w0;
        Tensor y0 = conv2d(slice_channels(x, 0, 3), half);
        half.weight = w1;
        Tensor y1 = conv2d(slice_channels(x, 3, 6), half);
        CHECK(max_abs_diff(y, concat_channels(y0, y1)) <= 1e-6);
    }
}

TEST_CASE("depthwise_conv2d") {
    SUBCASE("identity kernel per channel") {
        Rng rng(4);
        Tensor x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
        ConvParams p;
        p.weight = Tensor::constant({3, 1, 1, 1}, 1.0f);
        p.groups = 3;
        CHECK(max_abs_diff(depthwise_conv2d(x, p), x) == 0.0);
    }
    SUBCASE("ones kernel counts per channel") {
        ConvParams p;
        p.weight = Tensor::constant({2, 1, 3, 3}, 1.0f);
        p.groups = 2;
        p.padding = 1;
        Tensor y = depthwise_conv2d(Tensor::constant({1, 2, 5, 5}, 1.0f), p);
        CHECK(y.at(0, 1, 2, 2) == 9.0f);
    }
    SUBCASE("random case matches the oracle") {
        Rng rng(5);
        Tensor x = oracle::random_tensor<float>({2, 4, 6, 6}, rng);
        ConvParams p;
        p.weight = oracle::random_tensor<float>({4, 1, 3, 3}, rng);
        p.groups = 4;
        p.stride = 2;
        p.padding = 1;
        CHECK(max_abs_diff(depthwise_conv2d(x, p), oracle::naive_conv2d(x, p)) <= 1e-5);
    }
    SUBCASE("requires groups == c_in == c_out") {
        ConvParams p;
        p.weight = Tensor::zeros({4, 2, 3, 3});
        p.groups = 2;
        CHECK_THROWS_AS(depthwise_conv2d(Tensor::zeros({1, 4, 5, 5}), p), ShapeError);
    }
}

TEST_CASE("fbn-conv composite layer") {
    ForwardCtx ctx{Mode::Train, nullptr};
    SUBCASE("g=1 equals conv followed by batch norm") {
        Rng rng(6);
        Tensor w = oracle::random_tensor<float>({3, 4, 3, 3}, rng);
        Tensor x = oracle::random_tensor<float>({2, 4, 5, 5}, rng);
        FbnConvLayer layer(w, NormState::create(3), 1, 1, 1);

        ConvParams p;
        p.weight = w;
        p.padding = 1;
        auto s = NormState::create(3);
        Tensor want = bn_forward_train(conv2d(x, p), s);
        Var got = layer.forward(Var(x), ctx);
        CHECK(max_abs_diff(got.value(), want) <= 1e-6);
        CHECK(max_abs_diff(layer.state.running_mean, s.running_mean) <= 1e-7);
    }
    SUBCASE("identity normalization reduces to the plain convolution") {
        Rng rng(7);
        for (std::int64_t g : {1LL, 2LL, 4LL}) {
            Tensor full = oracle::random_tensor<float>({3, 8, 3, 3}, rng);
            Tensor x = oracle::random_tensor<float>({2, 8, 4, 4}, rng);
            auto norm = NormState::create(g * 3);
            norm.running_var = Tensor::constant({1, g * 3, 1, 1}, 1.0f - norm.epsilon);
            FbnConvLayer layer(expansion_from_full(full, g), norm, g, 1, 1);
            ForwardCtx infer{Mode::Infer, nullptr};
            Var got = layer.forward(Var(x), infer);
            ConvParams p;
            p.weight = full;
            p.padding = 1;
            CHECK(max_abs_diff(got.value(), conv2d(x, p)) <= 1e-5);
        }
    }
    SUBCASE("shape contract: intermediate has g*c_out channels, output c_out") {
        Rng rng(8);
        FbnConvLayer layer(oracle::random_tensor<float>({8, 2, 1, 1}, rng), NormState::create(8), 4, 1, 0);
        CHECK(layer.c_out == 2);
        CHECK(layer.state.channels == 8);
        Var y = layer.forward(Var(oracle::random_tensor<float>({3, 8, 4, 4}, rng)), ctx);
        CHECK(y.shape() == Shape{3, 2, 4, 4});
        LayerCost cost = layer.profile({1, 8, 4, 4});
        CHECK(cost.macs == 2ull * 4 * 4 * 8);  // fused full-width form
    }
    SUBCASE("input channels must divide by groups") {
        Rng rng(9);
        FbnConvLayer layer(oracle::random_tensor<float>({4, 3, 1, 1}, rng), NormState::create(4), 2, 1, 0);
        CHECK_THROWS_AS(layer.forward(Var(Tensor::zeros({1, 7, 3, 3})), ctx), ShapeError);
    }
}

TEST_CASE("grouped-expand-then-sum associativity") {
    // 100 seeded cases, identity normalization vs standard convolution.
    Rng rng(10);
    int cases = 0;
    ForwardCtx infer{Mode::Infer, nullptr};
    while (cases < 100) {
        for (std::int64_t g : {1LL, 2LL, 4LL, 8LL}) {
            const std::int64_t c_in = 8 * (1 + (std::int64_t)rng.below(2));
            const std::int64_t c_out = 1 + (std::int64_t)rng.below(5);
            const std::int64_t k = rng.coin() ? 3 : 1;
            Tensor full = oracle::random_tensor<float>({c_out, c_in, k, k}, rng);
            Tensor x = oracle::random_tensor<float>({2, c_in, 5, 5}, rng);
            auto norm = NormState::create(g * c_out);
            norm.running_var = Tensor::constant({1, g * c_out, 1, 1}, 1.0f - norm.epsilon);
            FbnConvLayer layer(expansion_from_full(full, g), norm, g, 1, k == 3 ? 1 : 0);
            Var got = layer.forward(Var(x), infer);
            ConvParams p;
            p.weight = full;
            p.padding = k == 3 ? 1 : 0;
            CHECK(max_abs_diff(got.value(), conv2d(x, p)) <= 1e-5);
            ++cases;
        }
    }
}

TEST_CASE("squeeze excite") {
    ForwardCtx ctx{Mode::Infer, nullptr};
    SUBCASE("large positive bias saturates the gate to one") {
        Rng rng(11);
        Tensor x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
        SqueezeExciteLayer se(Tensor::zeros({5, 3, 1, 1}), Tensor::zeros({1, 5, 1, 1}), Tensor::zeros({3, 5, 1, 1}),
                              Tensor::constant({1, 3, 1, 1}, 40.0f));
        Var y = se.forward(Var(x), ctx);
        CHECK(max_abs_diff(y.value(), x) <= 1e-6);
    }
    SUBCASE("zero weights give a half gate") {
        Rng rng(12);
        Tensor x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
        SqueezeExciteLayer se(Tensor::zeros({5, 3, 1, 1}), Tensor::zeros({1, 5, 1, 1}), Tensor::zeros({3, 5, 1, 1}),
                              Tensor::zeros({1, 3, 1, 1}));
        Var y = se.forward(Var(x), ctx);
        CHECK(max_abs_diff(y.value(), scale(x, 0.5f)) <= 1e-6);
    }
    SUBCASE("random case matches the scalar oracle") {
        Rng rng(13);
        Tensor x = oracle::random_tensor<float>({2, 4, 3, 3}, rng);
        auto se = SqueezeExciteLayerT<float>::random_init(4, 6, rng);
        Var y = se.forward(Var(x), ctx);
        Tensor want = oracle::naive_squeeze_excite(x, se.w1.value(), se.b1.value(), se.w2.value(), se.b2.value());
        CHECK(max_abs_diff(y.value(), want) <= 1e-5);
    }
}

TEST_CASE("auxiliary layers") {
    ForwardCtx infer{Mode::Infer, nullptr};
    SUBCASE("global average pool of a constant is the constant") {
        Var y = ops::global_avg_pool(Var(Tensor::constant({2, 3, 4, 4}, 2.5f)));
        CHECK(y.shape() == Shape{2, 3, 1, 1});
        for (std::int64_t i = 0; i < y.value().size(); ++i) CHECK(y.value()[i] == doctest::Approx(2.5));
    }
    SUBCASE("global average pool matches a loop oracle") {
        Rng rng(14);
        Tensor x = oracle::random_tensor<float>({2, 3, 5, 5}, rng);
        Var y = ops::global_avg_pool(Var(x));
        for (std::int64_t n = 0; n < 2; ++n)
            for (std::int64_t c = 0; c < 3; ++c) {
                double acc = 0;
                for (std::int64_t h = 0; h < 5; ++h)
                    for (std::int64_t w = 0; w < 5; ++w) acc += x.at(n, c, h, w);
                CHECK(y.value().at(n, c, 0, 0) == doctest::Approx(acc / 25.0).epsilon(1e-5));
            }
    }
    SUBCASE("max pool on constant input is constant; 3x3 stride 2 halves size") {
        Var y = ops::max_pool(Var(Tensor::constant({1, 2, 112, 112}, 1.5f)), 3, 2, 1);
        CHECK(y.shape() == Shape{1, 2, 56, 56});
        CHECK(max_abs(y.value()) == 1.5f);
    }
    SUBCASE("max pool picks the window maximum") {
        Rng rng(15);
        Tensor x = oracle::random_tensor<float>({1, 1, 6, 6}, rng);
        Var y = ops::max_pool(Var(x), 2, 2, 0);
        for (std::int64_t oh = 0; oh < 3; ++oh)
            for (std::int64_t ow = 0; ow < 3; ++ow) {
                float want = x.at(0, 0, 2 * oh, 2 * ow);
                want = std::max(want, x.at(0, 0, 2 * oh + 1, 2 * ow));
                want = std::max(want, x.at(0, 0, 2 * oh, 2 * ow + 1));
                want = std::max(want, x.at(0, 0, 2 * oh + 1, 2 * ow + 1));
                CHECK(y.value().at(0, 0, oh, ow) == want);
            }
    }
    SUBCASE("linear matches a loop oracle") {
        Rng rng(16);
        Tensor x = oracle::random_tensor<float>({3, 4, 1, 1}, rng);
        Tensor w = oracle::random_tensor<float>({2, 4, 1, 1}, rng);
        Tensor b = oracle::random_tensor<float>({1, 2, 1, 1}, rng);
        Var y = ops::linear(Var(x), Var(w), Var(b));
        for (std::int64_t n = 0; n < 3; ++n)
            for (std::int64_t o = 0; o < 2; ++o) {
                double acc = b[o];
                for (std::int64_t f = 0; f < 4; ++f) acc += (double)x.at(n, f, 0, 0) * (double)w.at(o, f, 0, 0);
                CHECK(y.value().at(n, o, 0, 0) == doctest::Approx(acc).epsilon(1e-5));
            }
    }
    SUBCASE("relu clamps negatives") {
        Tensor x({1, 1, 1, 4}, {-2.0f, -0.5f, 0.0f, 3.0f});
        Var y = ops::relu(Var(x));
        CHECK(y.value()[0] == 0.0f);
        CHECK(y.value()[1] == 0.0f);
        CHECK(y.value()[2] == 0.0f);
        CHECK(y.value()[3] == 3.0f);
    }
    SUBCASE("dropout is the identity in inference mode") {
        Rng rng(17);
        Tensor x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
        DropoutLayerT<float> drop(0.2);
        Var y = drop.forward(Var(x), infer);
        CHECK(max_abs_diff(y.value(), x) == 0.0);
    }
    SUBCASE("dropout scales kept values by 1/(1-rate) in training mode") {
        Rng rng(18);
        Tensor x = Tensor::constant({1, 1, 10, 10}, 1.0f);
        Rng drop_rng(19);
        ForwardCtx train{Mode::Train, &drop_rng};
        DropoutLayerT<float> drop(0.2);
        Var y = drop.forward(Var(x), train);
        int kept = 0;
        for (std::int64_t i = 0; i < y.value().size(); ++i) {
            if (y.value()[i] != 0.0f) {
                CHECK(y.value()[i] == doctest::Approx(1.25));
                ++kept;
            }
        }
        CHECK(kept > 50);
        CHECK(kept < 100);
    }
}
