#include <fstream>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "hupe/data.hpp"
#include "test_util.hpp"

using namespace hupe;
using namespace hupe::testing;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s)
{
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p) << s;
}

}  // namespace

TEST(ImageIo, EightBitRoundTripIsExactOnTheGrid)
{
    TempDir dir("io");
    auto gen = make_generator(1);
    const auto x = at::randint(0, 256, {1, 3, 5, 7}, gen, torch::kFloat32) / 255.0;
    write_image(dir / "a.png", x);
    const auto back = read_image(dir / "a.png");
    EXPECT_EQ(back.sizes(), x.sizes());
    EXPECT_LE(max_abs(back, x), 1e-7);
}

TEST(ImageIo, SixteenBitKeepsFineSteps)
{
    TempDir dir("io");
    const auto x = torch::linspace(0.0, 1.0, 64).view({1, 1, 8, 8}).expand({1, 3, 8, 8}).contiguous();
    write_image(dir / "a.png", x, 16);
    EXPECT_LE(max_abs(read_image(dir / "a.png"), x), 0.5 / 65535.0 + 1e-7);
    EXPECT_THROW(write_image(dir / "b.png", x, 12), std::invalid_argument);
}

TEST(ImageIo, ChannelOrderIsRgbOnDisk)
{
    TempDir dir("io");
    auto x = torch::zeros({1, 3, 2, 2});
    x[0][0].fill_(1.0);
    write_image(dir / "red.png", x);
    const cv::Mat m = cv::imread((dir / "red.png").string(), cv::IMREAD_UNCHANGED);
    ASSERT_EQ(m.channels(), 3);
    const auto px = m.at<cv::Vec3b>(0, 0);
    EXPECT_EQ(px[2], 255);  // OpenCV stores BGR
    EXPECT_EQ(px[0], 0);
}

TEST(ImageIo, GrayFilesAreExpandedAndMissingFilesNamed)
{
    TempDir dir("io");
    cv::Mat g(4, 4, CV_8UC1, cv::Scalar(51));
    cv::imwrite((dir / "g.png").string(), g);
    const auto x = read_image(dir / "g.png");
    EXPECT_EQ(x.size(1), 3);
    EXPECT_NEAR(x.max().item<double>(), 0.2, 1e-7);
    try {
        read_image(dir / "nope.png");
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("nope.png"), std::string::npos);
    }
}

TEST(Labels, BoxesAndMaskRoundTrip)
{
    TempDir dir("labels");
    Labels l;
    l.boxes = {{1, 2, 10, 12, 0}, {3.5, 4, 8, 9.25, 1}};
    l.mask = torch::zeros({6, 6}, torch::kLong);
    l.mask.narrow(0, 1, 2).fill_(2);
    write_labels(dir.path(), "s", l);
    const auto back = read_labels(dir.path(), "s");
    ASSERT_EQ(back.boxes.size(), 2u);
    EXPECT_EQ(back.boxes[1].x1, 3.5);
    EXPECT_EQ(back.boxes[1].y2, 9.25);
    EXPECT_EQ(back.boxes[1].cls, 1);
    EXPECT_TRUE(torch::equal(back.mask, l.mask));
    EXPECT_THROW(read_labels(dir.path(), "other"), std::runtime_error);
    write_text(dir / "bad.json", R"({"boxes": [[1, 2, 3]]})");
    EXPECT_THROW(read_labels(dir.path(), "bad"), std::runtime_error);
}

TEST(Resize, PoliciesAndLabels)
{
    const auto x = torch::rand({1, 3, 30, 50});
    EXPECT_EQ(resize_image(x, ResizePolicy::Desk).sizes(), (std::vector<int64_t>{1, 3, 64, 64}));
    EXPECT_EQ(resize_image(x, ResizePolicy::Pow2_512).size(3), 512);
    EXPECT_THROW(resize_image(x, ResizePolicy::None), std::invalid_argument);
    const auto y = resize_image(x, ResizePolicy::Desk);
    EXPECT_GE(y.min().item<double>(), 0.0);
    EXPECT_LE(y.max().item<double>(), 1.0);
    EXPECT_EQ(parse_resize_policy(to_string(ResizePolicy::Desk)), ResizePolicy::Desk);

    Labels l;
    l.boxes = {{10, 3, 20, 15, 1}};
    const auto r = resize_labels(l, 30, 50, 60, 25);
    EXPECT_DOUBLE_EQ(r.boxes[0].x1, 5.0);
    EXPECT_DOUBLE_EQ(r.boxes[0].y2, 30.0);
}

TEST(Crop, WindowIsUniformAndShiftsBoxes)
{
    auto gen = make_generator(2);
    std::vector<int> seen(5, 0);
    for (int k = 0; k < 500; ++k) {
        const auto w = draw_crop(8, 6, 4, gen);
        ASSERT_LE(w.top + 4, 8);
        ASSERT_LE(w.left + 4, 6);
        ++seen[static_cast<std::size_t>(w.top)];
    }
    for (int v : seen) EXPECT_GT(v, 60);

    Sample s{"s", torch::rand({1, 3, 8, 8}), torch::rand({1, 3, 8, 8}), {}};
    s.labels.boxes = {{1, 1, 3, 3, 0}, {5, 5, 7, 7, 1}};
    const auto c = crop_sample(s, {4, 4, 4});
    ASSERT_EQ(c.labels.boxes.size(), 1u);
    EXPECT_DOUBLE_EQ(c.labels.boxes[0].x1, 1.0);
    EXPECT_TRUE(torch::equal(c.degraded, s.degraded.narrow(2, 4, 4).narrow(3, 4, 4)));
}

TEST(Dataset, PairsByStemAndRejectsMismatch)
{
    TempDir dir("ds");
    for (const char* stem : {"a", "b"}) {
        write_image(dir / "deg" / (std::string(stem) + ".png"), torch::rand({1, 3, 8, 8}));
        write_image(dir / "ref" / (std::string(stem) + ".png"), torch::rand({1, 3, 8, 8}));
    }
    const auto ds = PairedDataset::from_dirs(dir / "deg", dir / "ref", ResizePolicy::None);
    EXPECT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.load_pair(1).stem, "b");
    EXPECT_THROW(ds.load_pair(2), std::out_of_range);

    write_image(dir / "deg" / "c.png", torch::rand({1, 3, 8, 8}));
    EXPECT_THROW(PairedDataset::from_dirs(dir / "deg", dir / "ref", ResizePolicy::None), std::runtime_error);
    EXPECT_THROW(PairedDataset::from_dirs(dir / "empty", dir / "ref", ResizePolicy::None), std::runtime_error);
    EXPECT_THROW(PairedDataset::from_dirs(dir / "ref", dir / "ref", ResizePolicy::None, dir / "nolabels"),
                 std::runtime_error);
}

TEST(Synth, DegradedMatchesTheRecordedPhysics)
{
    TempDir dir("synth");
    SceneOptions so;
    so.count = 3;
    so.size = 32;
    so.seed = 4;
    generate_toy_scenes(dir / "scenes", dir / "labels", so);
    SynthOptions o;
    o.seed = 9;
    const auto manifest = synth_degrade_dataset(dir / "scenes", dir / "out", o);
    ASSERT_EQ(manifest.at("count").get<int>(), 3);
    for (const auto& pair : manifest.at("pairs")) {
        const auto stem = pair.at("stem").get<std::string>();
        const auto rec = read_synth_record(dir / "out", stem);
        EXPECT_GE(rec.beta, o.beta_min);
        EXPECT_LE(rec.beta, o.beta_max);
        EXPECT_GE(rec.params.B.min().item<double>(), o.light_min);
        EXPECT_LE(rec.params.B.max().item<double>(), o.light_max);
        const auto clean = read_image(dir / "out" / "clean" / (stem + ".png")).to(kF64);
        const auto degraded = read_image(dir / "out" / "degraded" / (stem + ".png")).to(kF64);
        // I = t J + (1 - t) B, recomputed here from the recorded t and B
        const auto t = rec.params.t.to(kF64), B = rec.params.B;
        EXPECT_LE(max_abs(degraded, t * clean + (1.0 - t) * B), 1e-5);
        // t follows the top-to-bottom ramp
        EXPECT_NEAR(t[0][0][0][0].item<double>(), 1.0, 1e-5);
        EXPECT_NEAR(t[0][0][31][0].item<double>(), std::exp(-rec.beta), 1e-4);
    }
}

TEST(Synth, SameSeedSameOutput)
{
    TempDir dir("synth");
    SceneOptions so;
    so.count = 2;
    so.size = 16;
    generate_toy_scenes(dir / "scenes", dir / "labels", so);
    SynthOptions o;
    o.seed = 3;
    const auto a = synth_degrade_dataset(dir / "scenes", dir / "a", o);
    const auto b = synth_degrade_dataset(dir / "scenes", dir / "b", o);
    EXPECT_EQ(a.at("pairs"), b.at("pairs"));
    o.seed = 4;
    EXPECT_NE(synth_degrade_dataset(dir / "scenes", dir / "c", o).at("pairs"), a.at("pairs"));
    EXPECT_THROW(synth_degrade_dataset(dir / "labels-none", dir / "d", o), std::runtime_error);
    o.beta_min = 3.0;
    EXPECT_THROW(synth_degrade_dataset(dir / "scenes", dir / "e", o), std::invalid_argument);
}

TEST(Scenes, LabelsMatchImages)
{
    TempDir dir("scenes");
    SceneOptions so;
    so.count = 2;
    so.size = 32;
    generate_toy_scenes(dir / "scenes", dir / "labels", so);
    const auto ds = PairedDataset::from_dirs(dir / "scenes", dir / "scenes", ResizePolicy::None, dir / "labels");
    const auto s = ds.load_pair(0);
    EXPECT_FALSE(s.labels.boxes.empty());
    ASSERT_TRUE(s.labels.mask.defined());
    EXPECT_EQ(s.labels.mask.size(0), 32);
    EXPECT_LE(s.labels.mask.max().item<int64_t>(), so.num_classes);
    const auto batch = collate({ds.load_pair(0), ds.load_pair(1)});
    EXPECT_EQ(batch.size(), 2);
    EXPECT_TRUE(batch.mask.defined());
}
