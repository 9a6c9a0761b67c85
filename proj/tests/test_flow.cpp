#include <gtest/gtest.h>

#include "hupe/enhancer.hpp"
#include "hupe/flow.hpp"
#include "test_util.hpp"

using namespace hupe;
using namespace hupe::testing;

namespace {

EnhancerConfig identity_config(int hibs = 3, int steps = 6)
{
    EnhancerConfig c;
    c.flow.n_hibs = hibs;
    c.flow.flow_steps = steps;
    c.flow.actnorm_init = ActnormInit::Identity;
    c.flow.invconv_init = InvConvInit::Identity;
    return c;
}

}  // namespace

TEST(Squeeze, TwoByTwoBlockBecomesFourChannelsInRasterOrder)
{
    const auto x = torch::tensor({1.0, 2.0, 3.0, 4.0}, kF64).view({1, 1, 2, 2});
    const auto y = squeeze(x, Direction::Forward);
    ASSERT_EQ(y.sizes(), (std::vector<int64_t>{1, 4, 1, 1}));
    EXPECT_EQ(y.flatten()[0].item<double>(), 1.0);
    EXPECT_EQ(y.flatten()[1].item<double>(), 2.0);
    EXPECT_EQ(y.flatten()[2].item<double>(), 3.0);
    EXPECT_EQ(y.flatten()[3].item<double>(), 4.0);
}

TEST(Squeeze, ChannelLayoutAndExactInverse)
{
    auto gen = make_generator(1);
    const auto x = at::randn({2, 3, 8, 4}, gen, kF64);
    const auto y = squeeze(x, Direction::Forward);
    ASSERT_EQ(y.sizes(), (std::vector<int64_t>{2, 12, 4, 2}));
    // channel c*4 + 2*dy + dx at (i, j) holds x[c][2i+dy][2j+dx]
    EXPECT_EQ(y[1][2 * 4 + 2 * 1 + 0][3][1].item<double>(), x[1][2][7][2].item<double>());
    EXPECT_EQ(y[0][1 * 4 + 1][0][1].item<double>(), x[0][1][0][3].item<double>());
    EXPECT_TRUE(torch::equal(squeeze(y, Direction::Inverse), x));
    EXPECT_THROW(squeeze(torch::zeros({1, 1, 3, 4}), Direction::Forward), std::invalid_argument);
    EXPECT_THROW(squeeze(torch::zeros({1, 3, 2, 2}), Direction::Inverse), std::invalid_argument);
}

TEST(Actnorm, DataInitNormalizesEachChannel)
{
    auto gen = make_generator(2);
    const auto x = at::randn({4, 3, 8, 8}, gen, kF64) * torch::tensor({0.5, 2.0, 7.0}, kF64).view({1, 3, 1, 1}) + 3.0;
    ActnormParams p{torch::ones({3}, kF64), torch::zeros({3}, kF64), false};
    EXPECT_THROW(actnorm_apply(x, p, Direction::Forward), std::logic_error);
    p = actnorm_init(x, p);
    const auto y = actnorm_apply(x, p, Direction::Forward);
    EXPECT_LE(y.mean({0, 2, 3}).abs().max().item<double>(), 1e-12);
    EXPECT_LE((y.std({0, 2, 3}, false) - 1.0).abs().max().item<double>(), 1e-5);
    EXPECT_LE(max_abs(actnorm_apply(y, p, Direction::Inverse), x), 1e-12);
    EXPECT_THROW(actnorm_init(x, p), std::logic_error);
}

TEST(Actnorm, ScaleThenBiasConvention)
{
    // y = scale * (x + bias)
    ActnormParams p{torch::tensor({2.0}, kF64), torch::tensor({-2.0}, kF64), true};
    const auto y = actnorm_apply(torch::full({1, 1, 1, 1}, 3.0, kF64), p, Direction::Forward);
    EXPECT_DOUBLE_EQ(y.item<double>(), 2.0);
}

TEST(InvConv, InverseUndoesForwardAndSingularThrows)
{
    auto gen = make_generator(3);
    InvConvParams p{at::randn({4, 4}, gen, kF64) + 3.0 * torch::eye(4, kF64)};
    const auto x = at::randn({1, 4, 4, 4}, gen, kF64);
    const auto y = invconv_apply(x, p, Direction::Forward);
    EXPECT_LE(max_abs(invconv_apply(y, p, Direction::Inverse), x), 1e-12);
    InvConvParams singular{torch::ones({4, 4}, kF64)};
    EXPECT_THROW(invconv_apply(x, singular, Direction::Forward, "here"), std::domain_error);
}

TEST(InvConv, SingularWeightNamesTheBlock)
{
    EnhancerConfig c = identity_config(2, 3);
    Enhancer model(c, 0, kF64);
    {
        torch::NoGradGuard g;
        model.flow().params().at(model.flow().step_prefix(1, 2) + ".invconv.weight").zero_();
    }
    try {
        model.flow().check_invertible();
        FAIL() << "expected domain_error";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("HIB 1 step 2"), std::string::npos) << e.what();
    }
}

TEST(PriorInject, RoundTripAndKnownValues)
{
    const auto x = torch::full({1, 1, 2, 2}, 0.5, kF64);
    const auto T = torch::full({1, 1, 2, 2}, 2.0, kF64), B = torch::full({1, 1, 2, 2}, 0.8, kF64);
    const auto y = prior_inject(x, T, B, Direction::Forward);
    // 2 * 0.5 + 0.8 * (1 - 2)
    EXPECT_NEAR(y.max().item<double>(), 0.2, 1e-15);
    EXPECT_LE(max_abs(prior_inject(y, T, B, Direction::Inverse), x), 1e-15);
    EXPECT_TRUE(torch::equal(prior_inject(x, torch::ones_like(T), B, Direction::Forward), x));
    EXPECT_THROW(prior_inject(x, torch::zeros_like(T), B, Direction::Forward), std::invalid_argument);
}

TEST(PriorInject, LowResolutionMapsAreUpsampled)
{
    auto gen = make_generator(4);
    const auto x = at::randn({1, 2, 8, 8}, gen, kF64);
    const auto T = at::rand({1, 2, 4, 4}, gen, kF64) + 0.5, B = at::rand({1, 2, 4, 4}, gen, kF64);
    const auto y = prior_inject(x, T, B, Direction::Forward);
    EXPECT_EQ(y.sizes(), x.sizes());
    EXPECT_LE(max_abs(prior_inject(y, T, B, Direction::Inverse), x), 1e-12);
}

TEST(FlowConfig, HibLadder)
{
    FlowConfig c;
    EXPECT_EQ(c.hib_channels(0), 192);
    EXPECT_EQ(c.hib_channels(1), 48);
    EXPECT_EQ(c.hib_channels(2), 12);
    EXPECT_EQ(c.hib_divisor(0), 8);
    EXPECT_EQ(c.hib_divisor(2), 2);
    EXPECT_EQ(FlowConfig::from_json(c.to_json()).to_json(), c.to_json());
}

TEST(Flow, IdentityAtInitialization)
{
    auto gen = make_generator(5);
    for (auto dtype : {torch::kFloat32, torch::kFloat64}) {
        Enhancer model(identity_config(), 7, dtype);
        const auto x = at::rand({2, 3, 32, 32}, gen, dtype);
        model.initialize(x);
        torch::NoGradGuard g;
        const auto prior = model.prior(x);
        for (const auto& level : prior.levels) {
            EXPECT_LE((level.transmission - 1.0).abs().max().item<double>(), 1e-6);
        }
        EXPECT_LE(max_abs(enhance(x, model), x), 1e-6);
    }
}

TEST(Flow, RandomModelRoundTripBothInjectionModes)
{
    auto gen = make_generator(6);
    for (auto mode : {InjectionMode::PerStep, InjectionMode::PerHib}) {
        EnhancerConfig c;
        c.flow.n_hibs = 2;
        c.flow.flow_steps = 3;
        c.flow.injection = mode;
        FlowModel flow(c.flow, 3, kF64);
        randomize_flow(flow, 9);
        const auto x = at::rand({1, 3, 16, 16}, gen, kF64);
        const auto priors = random_prior_levels(c.flow, x, 10);
        const auto y = flow.forward(x, priors);
        EXPECT_GT(max_abs(y, x), 1e-2);
        EXPECT_LE(max_abs(flow.inverse(y, priors), x), 1e-10);
    }
}

TEST(Flow, TapsAndShapes)
{
    EnhancerConfig c;
    c.flow.n_hibs = 3;
    c.flow.flow_steps = 1;
    FlowModel flow(c.flow, 1);
    randomize_flow(flow, 2);
    const auto x = torch::rand({1, 3, 32, 32});
    std::vector<torch::Tensor> taps;
    const auto y = flow.forward(x, random_prior_levels(c.flow, x, 3), flow.params(), &taps);
    EXPECT_EQ(y.sizes(), x.sizes());
    ASSERT_EQ(taps.size(), 3u);
    EXPECT_EQ(taps[0].sizes(), (std::vector<int64_t>{1, 192, 4, 4}));
    EXPECT_EQ(taps[2].sizes(), (std::vector<int64_t>{1, 12, 16, 16}));
}

TEST(Flow, RejectsBadInputSizes)
{
    EnhancerConfig c;
    FlowModel flow(c.flow, 1);
    randomize_flow(flow, 2);
    const auto good = torch::rand({1, 3, 16, 16});
    const auto priors = random_prior_levels(c.flow, good, 3);
    EXPECT_THROW(flow.forward(torch::rand({1, 3, 24, 16}), priors), std::invalid_argument);
    EXPECT_THROW(flow.forward(torch::rand({1, 3, 4, 4}), priors), std::invalid_argument);
    EXPECT_THROW(flow.forward(torch::rand({1, 1, 16, 16}), priors), std::invalid_argument);
}

TEST(Flow, ParameterNamesFollowHibStepLayout)
{
    EnhancerConfig c = identity_config(2, 2);
    Enhancer model(c, 0);
    const auto names = model.parameters().names();
    EXPECT_TRUE(model.parameters().contains(model.flow().step_prefix(1, 1) + ".invconv.weight"));
    EXPECT_EQ(names.front().rfind("flow.", 0), 0u);
    EXPECT_EQ(names.back().rfind("hpe.", 0), 0u);
}
