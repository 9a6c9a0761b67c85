#include <fstream>

#include <gtest/gtest.h>

#include "hupe/checkpoint.hpp"
#include "hupe/enhancer.hpp"
#include "test_util.hpp"

using namespace hupe;
using hupe::testing::TempDir;

TEST(ParamTable, KeepsInsertionOrderAndRejectsDuplicates)
{
    ParamTable t;
    t.add("b", torch::zeros({2}));
    t.add("a", torch::ones({3}));
    ASSERT_EQ(t.names(), (std::vector<std::string>{"b", "a"}));
    EXPECT_EQ(t.numel(), 5);
    EXPECT_THROW(t.add("a", torch::zeros({1})), std::invalid_argument);
    EXPECT_THROW(t.at("missing"), std::out_of_range);
}

TEST(ParamTable, WithTensorsChecksShapes)
{
    ParamTable t;
    t.add("w", torch::zeros({2, 2}));
    EXPECT_THROW(t.with_tensors({torch::zeros({3})}), std::invalid_argument);
    EXPECT_THROW(t.with_tensors({}), std::invalid_argument);
    const auto u = t.with_tensors({torch::ones({2, 2})});
    EXPECT_EQ(u.at("w").sum().item<double>(), 4.0);
    EXPECT_EQ(t.at("w").sum().item<double>(), 0.0);
}

TEST(ParamTable, CloneIsDetachedAndSliceFiltersByPrefix)
{
    ParamTable t;
    t.add("flow.x", torch::ones({2}).requires_grad_(true));
    t.add("hpe.y", torch::ones({1}));
    auto c = t.clone();
    EXPECT_FALSE(c.at("flow.x").requires_grad());
    c.at("flow.x").add_(1.0);
    EXPECT_EQ(t.at("flow.x")[0].item<double>(), 1.0);
    EXPECT_EQ(t.slice("flow.").names(), std::vector<std::string>{"flow.x"});
    EXPECT_FALSE(t.bit_equal(c));
    c.assign_from(t);
    EXPECT_TRUE(t.bit_equal(c));
}

TEST(Checkpoint, RoundTripPreservesOrderShapesAndValues)
{
    TempDir dir("ckpt");
    Checkpoint c;
    c.meta = {{"component", "test"}, {"n", 3}};
    c.entries.add("z.first", torch::arange(6, torch::kFloat32).view({2, 3}));
    c.entries.add("a.second", torch::tensor({-1.5f}));
    c.entries.add("scalar", torch::tensor(2.25f));
    save_checkpoint(dir / "x.ckpt", c);
    const auto back = load_checkpoint(dir / "x.ckpt");
    EXPECT_EQ(back.meta, c.meta);
    ASSERT_EQ(back.entries.names(), c.entries.names());
    EXPECT_TRUE(back.entries.bit_equal(c.entries));
    EXPECT_EQ(back.entries.at("scalar").dim(), 0);
}

TEST(Checkpoint, FileStartsWithVersionMagic)
{
    TempDir dir("ckpt");
    Checkpoint c;
    c.entries.add("w", torch::ones({1}));
    save_checkpoint(dir / "x.ckpt", c);
    std::ifstream in(dir / "x.ckpt", std::ios::binary);
    std::string magic(kCheckpointVersion.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    EXPECT_EQ(magic, kCheckpointVersion);
}

TEST(Checkpoint, RejectsForeignAndTruncatedFiles)
{
    TempDir dir("ckpt");
    {
        std::ofstream out(dir / "bad.ckpt", std::ios::binary);
        out << "definitely not a checkpoint";
    }
    EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), std::runtime_error);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);

    Checkpoint c;
    c.entries.add("w", torch::ones({64}));
    save_checkpoint(dir / "full.ckpt", c);
    const auto size = std::filesystem::file_size(dir / "full.ckpt");
    std::filesystem::copy_file(dir / "full.ckpt", dir / "cut.ckpt");
    std::filesystem::resize_file(dir / "cut.ckpt", size - 10);
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt"), std::runtime_error);
}

TEST(Checkpoint, EnhancerSaveLoadKeepsOutputs)
{
    TempDir dir("ckpt");
    EnhancerConfig cfg;
    cfg.flow.n_hibs = 2;
    cfg.flow.flow_steps = 2;
    Enhancer model(cfg, 11);
    const auto x = torch::rand({1, 3, 16, 16});
    model.initialize(x);
    model.save(dir / "hin.ckpt");
    const auto back = Enhancer::load(dir / "hin.ckpt");
    EXPECT_TRUE(back.parameters().bit_equal(model.parameters()));
    torch::NoGradGuard g;
    EXPECT_TRUE(torch::equal(enhance(x, back), enhance(x, model)));
}
