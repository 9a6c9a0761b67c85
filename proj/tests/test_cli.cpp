#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "hupe/cli.hpp"
#include "hupe/data.hpp"
#include "hupe/enhancer.hpp"
#include "test_util.hpp"

using namespace hupe;
using namespace hupe::testing;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "hupe");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo)
{
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    EXPECT_EQ(run({"eval", "--pred", "x"}).code, 2);
    const auto r = run({"check", "--suite", "everything"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("everything"), std::string::npos);
    EXPECT_EQ(run({"enhance", "--in", "a", "--out", "b", "--ckpt", "c", "--direction", "sideways"}).code, 2);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, CheckSuitesPass)
{
    for (const char* suite : {"spectral", "losses"}) {
        const auto r = run({"check", "--suite", suite});
        EXPECT_EQ(r.code, 0) << r.out;
        EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
    }
    const auto r = run({"check", "--suite", "invertibility", "--trials", "2"});
    EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, EnhanceOnEmptyDirectoryWarns)
{
    TempDir dir("cli");
    std::filesystem::create_directories(dir / "empty");
    const auto r = run({"enhance", "--in", (dir / "empty").string(), "--out", (dir / "out").string(), "--ckpt",
                        (dir / "none.ckpt").string()});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Cli, MissingCheckpointIsAnError)
{
    TempDir dir("cli");
    write_image(dir / "in" / "a.png", torch::rand({1, 3, 16, 16}));
    const auto r = run({"enhance", "--in", (dir / "in").string(), "--out", (dir / "out").string(), "--ckpt",
                        (dir / "none.ckpt").string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("error"), std::string::npos);
}

TEST(Cli, EvalOfIdenticalDirectories)
{
    TempDir dir("cli");
    auto gen = make_generator(1);
    for (const char* stem : {"a", "b"}) write_image(dir / "img" / (std::string(stem) + ".png"), at::rand({1, 3, 24, 24}, gen));
    const auto report = dir / "report.json";
    const auto r = run({"eval", "--pred", (dir / "img").string(), "--ref", (dir / "img").string(), "--report",
                        report.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(std::ifstream(report));
    EXPECT_EQ(j.at("count"), 2);
    EXPECT_EQ(j.at("images").at("a.png").at("PSNR").get<double>(), 99.0);
    EXPECT_NEAR(j.at("images").at("b.png").at("SSIM").get<double>(), 1.0, 1e-12);
    const double ua = j.at("images").at("a.png").at("UIQM").get<double>();
    const double ub = j.at("images").at("b.png").at("UIQM").get<double>();
    EXPECT_NEAR(j.at("aggregate").at("UIQM").at("mean").get<double>(), 0.5 * (ua + ub), 1e-12);
    EXPECT_NEAR(j.at("aggregate").at("UIQM").at("std").get<double>(), 0.5 * std::abs(ua - ub), 1e-12);

    const auto no_ref = run({"eval", "--pred", (dir / "img").string(), "--report", (dir / "nr.json").string()});
    ASSERT_EQ(no_ref.code, 0);
    const auto k = nlohmann::json::parse(std::ifstream(dir / "nr.json"));
    EXPECT_FALSE(k.at("aggregate").contains("PSNR"));
    EXPECT_TRUE(k.at("aggregate").contains("CEIQ-s"));
}

TEST(Cli, SynthWritesManifest)
{
    TempDir dir("cli");
    SceneOptions so;
    so.count = 2;
    so.size = 16;
    generate_toy_scenes(dir / "scenes", dir / "labels", so);
    const auto r = run({"synth", "--clean", (dir / "scenes").string(), "--out", (dir / "out").string(), "--beta-min",
                        "0.5", "--beta-max", "1.5", "--seed", "3"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto m = nlohmann::json::parse(std::ifstream(dir / "out" / "manifest.json"));
    EXPECT_EQ(m.at("count"), 2);
    EXPECT_EQ(m.at("seed"), 3);
    EXPECT_EQ(run({"synth", "--clean", (dir / "scenes").string(), "--out", (dir / "o2").string(), "--beta-min", "2",
                   "--beta-max", "1", "--seed", "3"})
                  .code,
              1);
}

TEST(Cli, EnhanceThenInverseRecoversTheInput)
{
    TempDir dir("cli");
    EnhancerConfig c;
    c.flow.n_hibs = 2;
    c.flow.flow_steps = 2;
    Enhancer model(c, 4);
    randomize_flow(model.flow(), 5);
    model.save(dir / "hin.ckpt");
    auto gen = make_generator(6);
    // not a multiple of 2^n_hibs, so enhance pads and crops
    const auto x = at::randint(0, 256, {1, 3, 18, 10}, gen, torch::kFloat32) / 255.0;
    write_image(dir / "in" / "a.png", x);
    auto r = run({"enhance", "--in", (dir / "in").string(), "--out", (dir / "enh").string(), "--ckpt", dir.path().string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(std::filesystem::exists(dir / "enh" / "a.prior"));
    const auto y = read_image(dir / "enh" / "a.png");
    EXPECT_EQ(y.sizes(), x.sizes());
    r = run({"enhance", "--in", (dir / "enh").string(), "--out", (dir / "back").string(), "--ckpt",
             (dir / "hin.ckpt").string(), "--direction", "inverse"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_LE(max_abs(read_image(dir / "back" / "a.png"), x), 2e-3);
}
