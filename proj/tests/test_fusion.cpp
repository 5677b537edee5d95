#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "finegrain/fusion.hpp"
#include "oracles.hpp"

using namespace fg;

namespace {

template <typename T>
void randomize_norm(NormStateT<T>& s, Rng& rng) {
    for (std::int64_t c = 0; c < s.channels; ++c) {
        s.running_mean[c] = static_cast<T>(rng.uniform(-1.0, 1.0));
        s.running_var[c] = static_cast<T>(rng.uniform(0.3, 2.0));
        if (s.affine) {
            s.gamma[c] = static_cast<T>(rng.uniform(0.5, 1.5));
            s.beta[c] = static_cast<T>(rng.uniform(-0.5, 0.5));
        }
    }
}

template <typename T>
double fused_vs_unfused_diff(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t groups,
                             std::int64_t stride, std::uint64_t seed, bool affine = true) {
    Rng rng(seed);
    const std::int64_t pad = k / 2;
    auto norm = NormStateT<T>::create(groups * c_out, affine);
    randomize_norm(norm, rng);
    ConvParamsT<T> expand;
    expand.weight = oracle::random_tensor<T>({groups * c_out, c_in / groups, k, k}, rng);
    expand.stride = stride;
    expand.padding = pad;
    expand.groups = groups;

    TensorT<T> x = oracle::random_tensor<T>({2, c_in, 6, 6}, rng);
    TensorT<T> unfused = fbn_forward_infer(fg::conv2d(x, expand), norm, groups);
    ConvParamsT<T> folded = fold_fbn_into_conv(expand, norm, groups);
    TensorT<T> fused = fg::conv2d(x, folded);
    return max_abs_diff(unfused, fused);
}

Network single_fbn_net(std::int64_t c_in, std::int64_t c_out, std::int64_t groups, std::uint64_t seed) {
    Rng rng(seed);
    auto norm = NormState::create(groups * c_out);
    randomize_norm(norm, rng);
    auto layer = std::make_unique<FbnConvLayer>(
        oracle::random_tensor<float>({groups * c_out, c_in / groups, 3, 3}, rng), std::move(norm), groups, 1, 1);
    Network net;
    net.layers.add("fbn", std::move(layer));
    net.mode = Mode::Infer;
    return net;
}

}  // namespace

TEST_CASE("fold_bn_into_conv") {
    SUBCASE("identity statistics leave weights unchanged with zero bias") {
        Rng rng(1);
        ConvParams conv;
        conv.weight = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
        auto s = NormState::create(3);
        s.running_var = Tensor::constant({1, 3, 1, 1}, 1.0f - s.epsilon);
        ConvParams folded = fold_bn_into_conv(conv, s);
        CHECK(max_abs_diff(folded.weight, conv.weight) == 0.0);
        CHECK(max_abs(folded.bias) == 0.0);
    }
    SUBCASE("scalar hand case") {
        ConvParams conv;
        conv.weight = Tensor::constant({1, 1, 1, 1}, 2.0f);
        auto s = NormState::create(1);
        s.running_mean[0] = 1.0f;
        s.running_var[0] = 4.0f - s.epsilon;  // sqrt(var+eps) = 2 exactly
        ConvParams folded = fold_bn_into_conv(conv, s);
        CHECK(folded.weight[0] == doctest::Approx(1.0));
        CHECK(folded.bias[0] == doctest::Approx(-0.5));
        // unfused: (2*3 - 1)/2 = 2.5; fused: 1*3 - 0.5 = 2.5
        Tensor x = Tensor::constant({1, 1, 1, 1}, 3.0f);
        Tensor yu = bn_forward_infer(conv2d(x, conv), s);
        Tensor yf = conv2d(x, folded);
        CHECK(yu[0] == doctest::Approx(2.5).epsilon(1e-5));
        CHECK(yf[0] == doctest::Approx(2.5).epsilon(1e-5));
    }
    SUBCASE("random conv+bn: fused matches unfused inference") {
        Rng rng(2);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            ConvParams conv;
            conv.weight = oracle::random_tensor<float>({4, 3, 3, 3}, rng);
            conv.bias = oracle::random_tensor<float>({1, 4, 1, 1}, rng);
            conv.padding = 1;
            auto s = NormState::create(4);
            randomize_norm(s, rng);
            Tensor x = oracle::random_tensor<float>({2, 3, 5, 5}, rng);
            Tensor yu = bn_forward_infer(conv2d(x, conv), s);
            Tensor yf = conv2d(x, fold_bn_into_conv(conv, s));
            CHECK(max_abs_diff(yu, yf) <= 1e-5);
        }
    }
    SUBCASE("depthwise conv+bn folds per channel") {
        Rng rng(3);
        ConvParams conv;
        conv.weight = oracle::random_tensor<float>({4, 1, 3, 3}, rng);
        conv.groups = 4;
        conv.padding = 1;
        auto s = NormState::create(4);
        randomize_norm(s, rng);
        ConvParams folded = fold_bn_into_conv(conv, s);
        CHECK(folded.groups == 4);
        Tensor x = oracle::random_tensor<float>({2, 4, 5, 5}, rng);
        CHECK(max_abs_diff(bn_forward_infer(conv2d(x, conv), s), conv2d(x, folded)) <= 1e-5);
    }
}

TEST_CASE("fold_fbn_into_conv") {
    SUBCASE("g=1 is identical to fold_bn_into_conv") {
        Rng rng(4);
        ConvParams expand;
        expand.weight = oracle::random_tensor<float>({3, 4, 3, 3}, rng);
        expand.padding = 1;
        auto s = NormState::create(3);
        randomize_norm(s, rng);
        ConvParams a = fold_fbn_into_conv(expand, s, 1);
        ConvParams b = fold_bn_into_conv(expand, s);
        CHECK(max_abs_diff(a.weight, b.weight) == 0.0);
        CHECK(max_abs_diff(a.bias, b.bias) == 0.0);
    }
    SUBCASE("identity statistics lay the grouped blocks side by side") {
        Rng rng(5);
        const std::int64_t g = 2, c_out = 3, cpg = 2;
        ConvParams expand;
        expand.weight = oracle::random_tensor<float>({g * c_out, cpg, 1, 1}, rng);
        expand.groups = g;
        auto s = NormState::create(g * c_out);
        s.running_var = Tensor::constant({1, g * c_out, 1, 1}, 1.0f - s.epsilon);
        ConvParams folded = fold_fbn_into_conv(expand, s, g);
        CHECK(folded.weight.shape() == Shape{c_out, g * cpg, 1, 1});
        CHECK(folded.groups == 1);
        for (std::int64_t gi = 0; gi < g; ++gi)
            for (std::int64_t c = 0; c < c_out; ++c)
                for (std::int64_t j = 0; j < cpg; ++j)
                    CHECK(folded.weight.at(c, gi * cpg + j, 0, 0) == expand.weight.at(gi * c_out + c, j, 0, 0));
        // equals the plain convolution with those side-by-side weights
        Tensor x = oracle::random_tensor<float>({2, g * cpg, 4, 4}, rng);
        Tensor y1 = fbn_forward_infer(conv2d(x, expand), s, g);
        Tensor y2 = conv2d(x, folded);
        CHECK(max_abs_diff(y1, y2) <= 1e-5);
    }
    SUBCASE("random layers at the spec sizes") {
        for (std::int64_t g : {2LL, 4LL}) {
            double d = fused_vs_unfused_diff<float>(8, 3, 3, g, 1, 100 + static_cast<std::uint64_t>(g));
            CHECK(d <= 1e-4);
        }
    }
    SUBCASE("affine-disabled fold reproduces w/sigma and -mu/sigma") {
        Rng rng(6);
        ConvParams expand;
        expand.weight = oracle::random_tensor<float>({4, 2, 1, 1}, rng);
        expand.groups = 2;
        auto s = NormStateT<float>::create(4, false);
        randomize_norm(s, rng);
        ConvParams folded = fold_fbn_into_conv(expand, s, 2);
        for (std::int64_t ch = 0; ch < 4; ++ch) {
            const double sd = std::sqrt((double)s.running_var[ch] + (double)s.epsilon);
            const std::int64_t g = ch / 2, c = ch % 2;
            for (std::int64_t j = 0; j < 2; ++j)
                CHECK(folded.weight.at(c, g * 2 + j, 0, 0) ==
                      doctest::Approx((double)expand.weight.at(ch, j, 0, 0) / sd).epsilon(1e-6));
        }
        double want_b0 = -(double)s.running_mean[0] / std::sqrt((double)s.running_var[0] + (double)s.epsilon) -
                         (double)s.running_mean[2 + 0] / std::sqrt((double)s.running_var[2] + (double)s.epsilon);
        CHECK(folded.bias[0] == doctest::Approx(want_b0).epsilon(1e-6));
    }
}

TEST_CASE("fusion equivalence sweep (32-bit 1e-4, 64-bit 1e-9)") {
    int cases = 0;
    std::uint64_t seed = 1000;
    while (cases < 200) {
        for (std::int64_t c_in : {4LL, 8LL, 16LL})
            for (std::int64_t c_out : {3LL, 8LL})
                for (std::int64_t k : {1LL, 3LL})
                    for (std::int64_t g : {1LL, 2LL, 4LL, 8LL})
                        for (std::int64_t stride : {1LL, 2LL}) {
                            if (c_in % g != 0) continue;
                            if (cases >= 200) break;
                            ++seed;
                            CHECK(fused_vs_unfused_diff<float>(c_in, c_out, k, g, stride, seed) <= 1e-4);
                            CHECK(fused_vs_unfused_diff<double>(c_in, c_out, k, g, stride, seed) <= 1e-9);
                            ++cases;
                        }
    }
    CHECK(cases == 200);
}

TEST_CASE("fuse_model") {
    SUBCASE("single fbn-conv network becomes a single fused conv") {
        Network net = single_fbn_net(8, 3, 4, 42);
        Network fused = fuse_model(net);
        REQUIRE(fused.layers.size() == 1);
        CHECK(fused.layers[0].layer->kind() == "fused_conv");
        CHECK(fused.meta.fused);
        auto* fc = dynamic_cast<FusedConvLayer*>(fused.layers[0].layer.get());
        REQUIRE(fc != nullptr);
        CHECK(fc->source_name == "fbn");
        CHECK(fc->source_kind == "fbn_conv");
        CHECK(fc->source_groups == 4);
        CHECK(fc->weight.value().shape() == Shape{3, 8, 3, 3});

        Rng rng(43);
        Tensor x = Tensor::gaussian({2, 8, 6, 6}, 0.0f, 1.0f, rng);
        CHECK(max_abs_diff(net.infer(x), fused.infer(x)) <= 1e-4);
    }
    SUBCASE("conv weight parameter count is c_out*c_in*k*k + c_out") {
        Network fused = fuse_model(single_fbn_net(8, 3, 2, 44));
        LayerCost c = fused.layers.profile({1, 8, 6, 6});
        CHECK(c.params == 3ull * 8 * 3 * 3 + 3);
    }
    SUBCASE("fusing an already-fused network changes nothing") {
        Network fused = fuse_model(single_fbn_net(8, 3, 2, 45));
        Network twice = fuse_model(fused);
        REQUIRE(twice.layers.size() == 1);
        auto* a = dynamic_cast<FusedConvLayer*>(fused.layers[0].layer.get());
        auto* b = dynamic_cast<FusedConvLayer*>(twice.layers[0].layer.get());
        REQUIRE(a != nullptr);
        REQUIRE(b != nullptr);
        CHECK(max_abs_diff(a->weight.value(), b->weight.value()) == 0.0);
        CHECK(max_abs_diff(a->bias.value(), b->bias.value()) == 0.0);
    }
    SUBCASE("training-mode network is rejected") {
        Network net = single_fbn_net(8, 3, 2, 46);
        net.mode = Mode::Train;
        CHECK_THROWS_AS(fuse_model(net), StateError);
    }
    SUBCASE("normalization without a preceding convolution is reported by name") {
        Network net;
        net.layers.add("stray_norm", std::make_unique<BatchNormLayer>(NormState::create(4)));
        net.mode = Mode::Infer;
        CHECK_THROWS_WITH_AS(fuse_model(net), doctest::Contains("stray_norm"), FusionError);
    }
    SUBCASE("conv+bn pair inside a sequence is folded") {
        Rng rng(47);
        Network net;
        net.layers.add("conv1", std::make_unique<Conv2dLayer>(oracle::random_tensor<float>({4, 3, 3, 3}, rng),
                                                              Tensor(), 1, 1, 1));
        auto s = NormState::create(4);
        randomize_norm(s, rng);
        net.layers.add("norm1", std::make_unique<BatchNormLayer>(std::move(s)));
        net.layers.add("act1", std::make_unique<ReluLayerT<float>>());
        net.mode = Mode::Infer;
        Network fused = fuse_model(net);
        REQUIRE(fused.layers.size() == 2);
        CHECK(fused.layers[0].layer->kind() == "fused_conv");
        CHECK(fused.layers[1].layer->kind() == "relu");
        Tensor x = Tensor::gaussian({2, 3, 6, 6}, 0.0f, 1.0f, rng);
        CHECK(max_abs_diff(net.infer(x), fused.infer(x)) <= 1e-5);
    }
}

TEST_CASE("verify_fusion") {
    SUBCASE("identical networks report zero difference") {
        Network net = single_fbn_net(8, 3, 2, 50);
        Network copy = net.clone();
        // align requires a fused-style counterpart; compare a net against itself
        FusionReport r = verify_fusion(net, copy, 4, 7, {2, 8, 6, 6});
        CHECK(r.max_abs_diff == 0.0);
        REQUIRE(r.per_layer_diffs.size() == 1);
        CHECK(r.per_layer_diffs[0].second == 0.0);
    }
    SUBCASE("fused vs unfused reports a small difference and layer names") {
        Network net = single_fbn_net(8, 3, 4, 51);
        Network fused = fuse_model(net);
        FusionReport r = verify_fusion(net, fused, 8, 9, {2, 8, 6, 6});
        CHECK(r.max_abs_diff <= 1e-4);
        CHECK(r.per_layer_diffs[0].first == "fbn");
        std::string text = r.to_text();
        CHECK(text.find("max_abs_diff=") != std::string::npos);
    }
    SUBCASE("a bias perturbation in the last layer is fully visible") {
        Rng rng(52);
        Network net;
        net.layers.add("gap", std::make_unique<GlobalAvgPoolLayerT<float>>());
        net.layers.add("fc", std::make_unique<LinearLayerT<float>>(oracle::random_tensor<float>({5, 4, 1, 1}, rng),
                                                                   oracle::random_tensor<float>({1, 5, 1, 1}, rng)));
        net.mode = Mode::Infer;
        Network other = net.clone();
        auto* fc = dynamic_cast<LinearLayerT<float>*>(other.layers[1].layer.get());
        REQUIRE(fc != nullptr);
        fc->bias.value_mut()[2] += 1e-2f;
        FusionReport r = verify_fusion(net, other, 4, 11, {2, 4, 6, 6});
        // a logits-bias shift of d moves that logit by exactly d
        CHECK(r.max_abs_diff >= 1e-2 - 1e-6);
        CHECK(r.max_abs_diff <= 1e-2 + 1e-6);
    }
    SUBCASE("shape mismatch between networks is an error") {
        Network a = single_fbn_net(8, 3, 2, 53);
        Network b = single_fbn_net(8, 8, 2, 53);
        CHECK_THROWS_AS(verify_fusion(a, b, 2, 3, {1, 8, 6, 6}), ShapeError);
    }
}
