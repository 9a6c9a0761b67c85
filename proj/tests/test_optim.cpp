#include <cmath>

#include <gtest/gtest.h>

#include "hupe/optim.hpp"
#include "test_util.hpp"

using namespace hupe;
using namespace hupe::testing;

namespace {

ParamTable quadratic_params()
{
    ParamTable t;
    t.add("a", torch::tensor({1.0, -2.0, 0.5}, kF64));
    t.add("b", torch::tensor({{3.0, 0.0}, {-1.0, 4.0}}, kF64));
    return t;
}

torch::Tensor quadratic(const std::vector<torch::Tensor>& p)
{
    return (p[0] * p[0]).sum() * 0.5 + (p[1] - 1.0).pow(4).sum() * 0.1;
}

}  // namespace

TEST(Adam, FirstStepMovesEveryCoordinateByLr)
{
    ParamTable p;
    p.add("w", torch::tensor({2.0, -3.0, 0.0}, kF64));
    Adam opt(p, {0.1});
    opt.step({torch::tensor({0.5, -4.0, 0.0}, kF64)});
    // m_hat = g, v_hat = g^2, so the step is -lr * sign(g) up to eps.
    EXPECT_NEAR(p.at("w")[0].item<double>(), 1.9, 1e-7);
    EXPECT_NEAR(p.at("w")[1].item<double>(), -2.9, 1e-7);
    EXPECT_EQ(p.at("w")[2].item<double>(), 0.0);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, MatchesLibTorchOverSeveralSteps)
{
    auto mine = quadratic_params();
    auto theirs = quadratic_params().clone();
    std::vector<torch::Tensor> leaves;
    for (const auto& t : theirs.tensors()) leaves.push_back(t.clone().requires_grad_(true));
    AdamOptions o{0.05, 0.9, 0.999, 1e-8, 0.01};
    Adam opt(mine, o);
    torch::optim::Adam ref(leaves, torch::optim::AdamOptions(0.05).betas({0.9, 0.999}).eps(1e-8).weight_decay(0.01));
    for (int k = 0; k < 20; ++k) {
        std::vector<torch::Tensor> mine_leaves;
        for (const auto& t : mine.tensors()) mine_leaves.push_back(t.detach().clone().requires_grad_(true));
        opt.step(torch::autograd::grad({quadratic(mine_leaves)}, mine_leaves));
        ref.zero_grad();
        quadratic(leaves).backward();
        ref.step();
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) EXPECT_LE(max_abs(mine.tensors()[i], leaves[i]), 1e-12);
}

TEST(Sgd, MomentumMatchesLibTorch)
{
    auto mine = quadratic_params();
    std::vector<torch::Tensor> leaves;
    for (const auto& t : mine.tensors()) leaves.push_back(t.clone().requires_grad_(true));
    Sgd opt(mine, {0.05, 0.9, 1e-3});
    torch::optim::SGD ref(leaves, torch::optim::SGDOptions(0.05).momentum(0.9).weight_decay(1e-3));
    for (int k = 0; k < 20; ++k) {
        std::vector<torch::Tensor> mine_leaves;
        for (const auto& t : mine.tensors()) mine_leaves.push_back(t.detach().clone().requires_grad_(true));
        opt.step(torch::autograd::grad({quadratic(mine_leaves)}, mine_leaves));
        ref.zero_grad();
        quadratic(leaves).backward();
        ref.step();
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) EXPECT_LE(max_abs(mine.tensors()[i], leaves[i]), 1e-12);
}

TEST(Sgd, PlainStep)
{
    ParamTable p;
    p.add("w", torch::tensor({1.0}, kF64));
    Sgd opt(p, {0.1});
    opt.step({torch::tensor({2.0}, kF64)});
    EXPECT_DOUBLE_EQ(p.at("w").item<double>(), 0.8);
}

TEST(Optimizer, UndefinedGradientsAreSkippedAndCountMustMatch)
{
    auto p = quadratic_params();
    Adam opt(p, {});
    const auto before = p.clone();
    opt.step({torch::Tensor(), torch::ones({2, 2}, kF64)});
    EXPECT_TRUE(torch::equal(p.at("a"), before.at("a")));
    EXPECT_FALSE(torch::equal(p.at("b"), before.at("b")));
    EXPECT_THROW(opt.step({torch::ones({3}, kF64)}), std::invalid_argument);
}

TEST(Optimizer, StateRoundTripGivesIdenticalContinuation)
{
    auto a = quadratic_params();
    auto b = quadratic_params();
    Adam first(a, {0.01});
    const auto step = [](Adam& o, ParamTable& t) {
        std::vector<torch::Tensor> leaves;
        for (const auto& x : t.tensors()) leaves.push_back(x.detach().clone().requires_grad_(true));
        o.step(torch::autograd::grad({quadratic(leaves)}, leaves));
    };
    for (int k = 0; k < 3; ++k) step(first, a);
    b.assign_from(a);
    Adam second(b, {0.01});
    second.load_state(first.state());
    EXPECT_EQ(second.steps(), 3);
    step(first, a);
    step(second, b);
    EXPECT_TRUE(a.bit_equal(b));
}

TEST(Gradients, UnusedParametersGetZeros)
{
    auto p = quadratic_params();
    for (const auto& t : p.tensors()) const_cast<torch::Tensor&>(t).requires_grad_(true);
    const auto g = gradients((p.at("a") * 2.0).sum(), p);
    ASSERT_EQ(g.size(), 2u);
    EXPECT_TRUE(torch::equal(g[0], torch::full({3}, 2.0, kF64)));
    EXPECT_EQ(g[1].abs().sum().item<double>(), 0.0);
}
