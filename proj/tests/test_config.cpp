#include <fstream>

#include <gtest/gtest.h>

#include "hupe/config.hpp"
#include "test_util.hpp"

using namespace hupe;
using hupe::testing::TempDir;
using nlohmann::json;

namespace {

json minimal()
{
    return {{"version", kConfigVersion}, {"train_degraded", "deg"}, {"train_reference", "ref"}};
}

std::string error_of(const json& j)
{
    try {
        parse_config(j, "/base");
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Config, DefaultsFollowTheReportedSetup)
{
    const auto c = parse_config(minimal(), "/base");
    EXPECT_EQ(c.n_hibs, 3);
    EXPECT_EQ(c.flow_steps, 6);
    EXPECT_EQ(c.lr, 1e-5);
    EXPECT_EQ(c.batch, 1);
    EXPECT_EQ(c.lambdas, (std::array<double, 4>{1.0, 0.05, 1.0, 0.2}));
    EXPECT_EQ(c.crop, 512);
    EXPECT_EQ(c.resize, ResizePolicy::Pow2_512);
    EXPECT_EQ(c.injection, InjectionMode::PerStep);
    const auto o = c.scl_options();
    EXPECT_EQ(o.inner_lr, 1e-5);
    EXPECT_EQ(o.meta_adam.lr, 1e-5);
    EXPECT_EQ(o.task_sgd.lr, 1e-2);
}

TEST(Config, RelativePathsResolveAgainstTheConfigDirectory)
{
    auto j = minimal();
    j["output_dir"] = "../runs/x";
    const auto c = parse_config(j, "/base/configs");
    EXPECT_EQ(c.train_degraded, std::filesystem::path("/base/configs/deg"));
    EXPECT_EQ(c.output_dir, std::filesystem::path("/base/runs/x"));
    j["train_reference"] = "/abs/ref";
    EXPECT_EQ(parse_config(j, "/base").train_reference, std::filesystem::path("/abs/ref"));
}

TEST(Config, ErrorsNameTheKey)
{
    auto j = minimal();
    j["learning_rate"] = 1e-3;
    EXPECT_NE(error_of(j).find("learning_rate"), std::string::npos);

    j = minimal();
    j["version"] = "hupe-config-v0";
    EXPECT_NE(error_of(j).find("version"), std::string::npos);

    j = minimal();
    j.erase("train_reference");
    EXPECT_NE(error_of(j).find("train_reference"), std::string::npos);

    j = minimal();
    j["lr"] = "fast";
    EXPECT_NE(error_of(j).find("lr"), std::string::npos);

    j = minimal();
    j["lr"] = 0.0;
    EXPECT_NE(error_of(j).find("lr"), std::string::npos);

    j = minimal();
    j["crop"] = 100;
    EXPECT_NE(error_of(j).find("crop"), std::string::npos);

    j = minimal();
    j["lambdas"] = {1.0, -0.05, 1.0, 0.2};
    EXPECT_NE(error_of(j).find("lambdas"), std::string::npos);

    j = minimal();
    j["injection"] = "sometimes";
    EXPECT_NE(error_of(j).find("injection"), std::string::npos);

    j = minimal();
    j["perceptual_backend"] = "pretrained-vgg19";
    EXPECT_NE(error_of(j).find("perceptual_weights"), std::string::npos);
}

TEST(Config, SynthesizeSectionReplacesDataKeys)
{
    json j = {{"version", kConfigVersion},
              {"synthesize", {{"clean_dir", "scenes"}, {"beta_min", 0.5}, {"beta_max", 1.0}, {"seed", 2}}}};
    const auto c = parse_config(j, "/base");
    ASSERT_TRUE(c.synthesize.has_value());
    EXPECT_EQ(c.synthesize->clean_dir, std::filesystem::path("/base/scenes"));
    EXPECT_EQ(c.synthesize->seed, 2u);
    j["synthesize"]["beta_max"] = 0.1;
    EXPECT_NE(error_of(j).find("beta_max"), std::string::npos);
    j["synthesize"]["beta_max"] = 1.0;
    j["synthesize"]["colour"] = true;
    EXPECT_NE(error_of(j).find("colour"), std::string::npos);
}

TEST(Config, AblationSwitchesReachTheModel)
{
    auto j = minimal();
    j["injection"] = "per-hib";
    j["use_phase"] = false;
    j["hpe_inputs"] = {"rgb", "depth"};
    j["n_hibs"] = 2;
    const auto e = parse_config(j, "/base").enhancer();
    EXPECT_EQ(e.flow.injection, InjectionMode::PerHib);
    EXPECT_FALSE(e.flow.use_phase);
    EXPECT_TRUE(e.flow.use_amplitude);
    EXPECT_FALSE(e.prior.use_gradient);
    EXPECT_EQ(e.prior.n_hibs, 2);
}

TEST(Config, SegmentationTaskDefaults)
{
    auto j = minimal();
    j["task"] = "segment";
    const auto o = parse_config(j, "/base").scl_options();
    EXPECT_EQ(o.task_sgd.lr, 1e-3);
    EXPECT_EQ(o.task_sgd.weight_decay, 5e-4);
}

TEST(Config, LoadReportsUnreadableFiles)
{
    TempDir dir("cfg");
    EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

TEST(Config, ShippedDeskConfigParses)
{
    const auto c = load_config(std::filesystem::path(HUPE_SOURCE_DIR) / "configs" / "desk.json");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.resize, ResizePolicy::Desk);
    EXPECT_TRUE(c.synthesize.has_value());
}
