#include <cmath>

#include <gtest/gtest.h>

#include "hupe/metrics.hpp"
#include "hupe/params.hpp"
#include "metric_fixtures.hpp"
#include "test_util.hpp"

using namespace hupe;
using namespace hupe::testing;

namespace {

torch::Tensor constant(double v, int64_t size = 16) { return torch::full({1, 3, size, size}, v, kF64); }

/// Values restricted to [lo, hi] on the 8-bit grid, smooth enough to keep SSIM meaningful.
torch::Tensor low_contrast(double lo, double hi, uint64_t seed)
{
    auto gen = make_generator(seed);
    const auto u = at::rand({1, 1, 32, 32}, gen, kF64);
    const auto v = torch::round((lo + (hi - lo) * u) * 255.0) / 255.0;
    return v.expand({1, 3, 32, 32}).contiguous();
}

}  // namespace

TEST(Psnr, ClosedForms)
{
    EXPECT_NEAR(psnr(constant(0.5), constant(0.6)), 20.0, 1e-6);
    EXPECT_NEAR(psnr(constant(0.0), constant(1.0)), 0.0, 1e-12);
    EXPECT_EQ(psnr(constant(0.3), constant(0.3)), kPsnrIdentical);
    EXPECT_THROW(psnr(constant(0.3), constant(0.3, 8)), std::invalid_argument);
}

TEST(Ssim, ConstantImagesReduceToTheLuminanceTerm)
{
    constexpr double c1 = 0.01 * 0.01;
    for (const auto [a, b] : {std::pair{0.5, 0.6}, std::pair{0.1, 0.9}, std::pair{0.0, 0.2}}) {
        EXPECT_NEAR(ssim(constant(a), constant(b)), (2 * a * b + c1) / (a * a + b * b + c1), 1e-6);
    }
    EXPECT_NEAR(ssim(constant(0.4), constant(0.4)), 1.0, 1e-12);
    auto gen = make_generator(1);
    const auto x = at::rand({1, 3, 24, 24}, gen, kF64);
    EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
    EXPECT_LT(ssim(x, at::rand({1, 3, 24, 24}, gen, kF64)), 0.5);
    EXPECT_THROW(ssim(constant(0.1, 8), constant(0.1, 8)), std::invalid_argument);
}

TEST(Lab, MatchesStandardSrgbConversion)
{
    // sRGB red under D65; scikit-image's rgb2lab gives (53.2406, 80.0923, 67.2028).
    auto red = torch::zeros({1, 3, 1, 1}, kF64);
    red[0][0] = 1.0;
    const auto lab = rgb_to_lab(red);
    EXPECT_NEAR(lab[0].item<double>(), 53.2406, 2e-3);
    EXPECT_NEAR(lab[1].item<double>(), 80.0923, 2e-3);
    EXPECT_NEAR(lab[2].item<double>(), 67.2028, 2e-3);
    const auto white = rgb_to_lab(constant(1.0, 1));
    EXPECT_NEAR(white[0].max().item<double>(), 100.0, 1e-5);
    EXPECT_EQ(white[1].abs().max().item<double>(), 0.0);
}

TEST(Uciqe, ConstantGrayIsExactlyZero)
{
    for (double v : {0.0, 0.25, 0.5, 1.0}) {
        const auto t = uciqe_terms(constant(v));
        EXPECT_EQ(t.score, 0.0) << v;
        EXPECT_EQ(t.chroma_std, 0.0);
    }
}

TEST(Uciqe, LuminanceOffsetKeepsChromaTerms)
{
    // For gray images chroma is zero everywhere, so an offset moves only the
    // contrast term through the Lab L channel.
    const auto x = low_contrast(0.2, 0.5, 2);
    const auto a = uciqe_terms(x), b = uciqe_terms(x + 0.2);
    EXPECT_EQ(a.chroma_std, b.chroma_std);
    EXPECT_EQ(a.saturation_mean, b.saturation_mean);
}

TEST(Uciqe, TermsAreInvariantToPixelPermutation)
{
    const auto x = uiqm_fixture(0);
    auto gen = make_generator(3);
    const auto perm = at::randperm(32 * 32, gen, torch::kLong);
    const auto shuffled = x.flatten(2).index_select(2, perm).view({1, 3, 32, 32});
    const auto a = uciqe_terms(x), b = uciqe_terms(shuffled);
    EXPECT_NEAR(a.chroma_std, b.chroma_std, 1e-12);
    EXPECT_NEAR(a.luma_contrast, b.luma_contrast, 1e-12);
    EXPECT_NEAR(a.saturation_mean, b.saturation_mean, 1e-12);
    // colourfulness is the only non-spatial UIQM term
    EXPECT_NEAR(uicm(x), uicm(shuffled), 1e-9);
}

TEST(Uiqm, MatchesTheIndependentReference)
{
    for (int i = 0; i < 3; ++i) {
        const auto x = uiqm_fixture(i);
        const auto t = uiqm_terms(x);
        const auto& ref = kUiqmReference[i];
        EXPECT_NEAR(t.uicm, ref.uicm, 1e-6) << i;
        EXPECT_NEAR(t.uism, ref.uism, 1e-6) << i;
        EXPECT_NEAR(t.uiconm, ref.uiconm, 1e-6) << i;
        EXPECT_NEAR(t.score, ref.uiqm, 1e-6) << i;
    }
}

TEST(Uiqm, CoefficientsAndConstantImage)
{
    EXPECT_EQ(kUiqmColorfulness, 0.0282);
    EXPECT_EQ(kUiqmSharpness, 0.2953);
    EXPECT_EQ(kUiqmContrast, 3.5753);
    const auto t = uiqm_terms(constant(0.5));
    EXPECT_NEAR(t.uicm, 0.0, 1e-12);
    EXPECT_EQ(t.uism, 0.0);
    EXPECT_EQ(t.uiconm, 0.0);
    EXPECT_THROW(uiqm(constant(0.5, 4)), std::invalid_argument);
}

TEST(Histeq, FixedPointAndEntropy)
{
    const auto x = low_contrast(0.4, 0.5, 4);
    const auto y = histeq(x);
    EXPECT_GT(y.max().item<double>() - y.min().item<double>(), 0.9);
    const auto y3 = y.expand({1, 3, 32, 32});
    EXPECT_LE(max_abs(histeq(y3), y), 1.0 / 255.0 + 1e-12);
    EXPECT_EQ(entropy(constant(0.3)), 0.0);
    // two equally likely levels: one bit
    auto half = constant(0.0, 16);
    half.narrow(2, 0, 8).fill_(1.0);
    EXPECT_NEAR(entropy(half), 1.0, 1e-12);
    EXPECT_LE(max_abs(histeq(constant(51.0 / 255.0)), constant(51.0 / 255.0, 1)), 1e-7);
}

TEST(CeiqSurrogate, AlreadyEqualizedImageHasNoSimilarityPenalty)
{
    const auto y = histeq(low_contrast(0.3, 0.6, 5)).expand({1, 3, 32, 32}).contiguous();
    const auto t = ceiq_surrogate_terms(y);
    EXPECT_GT(t.similarity, 0.99);
    EXPECT_NEAR(t.score, 0.5 * (1 - t.similarity) + 0.25 * t.entropy + 0.25 * t.equalized_entropy, 1e-12);
}

TEST(CeiqSurrogate, LowContrastImageVersusItsEqualization)
{
    // histeq maps gray levels monotonically, so it never raises the entropy,
    // and its output is (nearly) its own fixed point. The surrogate therefore
    // ranks a low-contrast image at or above its equalized version.
    for (uint64_t seed : {6, 7, 8}) {
        const auto x = low_contrast(0.35, 0.55, seed);
        const auto y = histeq(x).expand({1, 3, 32, 32}).contiguous();
        const auto tx = ceiq_surrogate_terms(x), ty = ceiq_surrogate_terms(y);
        EXPECT_LE(ty.entropy, tx.entropy + 1e-12);
        EXPECT_LT(tx.similarity, ty.similarity);
        EXPECT_GT(tx.score, ty.score);
    }
}

TEST(Report, AggregatesAreMeanAndPopulationStd)
{
    MetricReport r;
    r.add("a.png", {{"PSNR", 10.0}, {"UIQM", 1.0}});
    r.add("b.png", {{"PSNR", 20.0}, {"UIQM", 3.0}});
    EXPECT_EQ(r.count(), 2u);
    EXPECT_DOUBLE_EQ(r.mean("PSNR"), 15.0);
    EXPECT_DOUBLE_EQ(r.std("PSNR"), 5.0);
    const auto j = r.to_json();
    EXPECT_EQ(j.at("count"), 2);
    EXPECT_DOUBLE_EQ(j.at("aggregate").at("UIQM").at("mean").get<double>(), 2.0);
    EXPECT_DOUBLE_EQ(j.at("images").at("b.png").at("PSNR").get<double>(), 20.0);
}

TEST(Report, EvaluateImageKeys)
{
    const auto x = uiqm_fixture(1);
    const auto no_ref = evaluate_image(x);
    EXPECT_EQ(no_ref.count(kMetricPsnr), 0u);
    EXPECT_EQ(no_ref.count(kMetricCeiq), 1u);
    const auto with_ref = evaluate_image(x, x);
    EXPECT_EQ(with_ref.at(kMetricPsnr), kPsnrIdentical);
    EXPECT_NEAR(with_ref.at(kMetricSsim), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(with_ref.at(kMetricUiqm), uiqm(x));
}
