#include "hupe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <opencv2/imgproc.hpp>

#include "hupe/prior.hpp"

namespace hupe {

namespace F = torch::nn::functional;

namespace {

/// 1 x C x H x W float64, detached.
torch::Tensor as_image(const ImageTensor& x, const char* what)
{
    auto t = x.detach();
    if (t.dim() == 3) t = t.unsqueeze(0);
    if (t.dim() != 4 || t.size(0) != 1) {
        throw std::invalid_argument(std::string(what) + ": expected a single image, got " + shape_string(x));
    }
    return t.to(torch::kFloat64);
}

torch::Tensor as_rgb(const ImageTensor& x, const char* what)
{
    auto t = as_image(x, what);
    if (t.size(1) == 1) return t.expand({1, 3, t.size(2), t.size(3)});
    if (t.size(1) != 3) throw std::invalid_argument(std::string(what) + ": expected 1 or 3 channels");
    return t;
}

torch::Tensor gaussian_window(int64_t size, double sigma)
{
    auto r = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
    auto g = torch::exp(-(r * r) / (2.0 * sigma * sigma));
    g = g / g.sum();
    return torch::outer(g, g).view({1, 1, size, size});
}

double ssim_gray(const torch::Tensor& a, const torch::Tensor& b)
{
    constexpr int64_t kWindow = 11;
    if (a.size(2) < kWindow || a.size(3) < kWindow) {
        throw std::invalid_argument("ssim: images must be at least 11x11, got " + shape_string(a));
    }
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const auto w = gaussian_window(kWindow, 1.5);
    const auto mu_a = torch::conv2d(a, w), mu_b = torch::conv2d(b, w);
    const auto saa = torch::conv2d(a * a, w) - mu_a * mu_a;
    const auto sbb = torch::conv2d(b * b, w) - mu_b * mu_b;
    const auto sab = torch::conv2d(a * b, w) - mu_a * mu_b;
    const auto map = ((2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2));
    return map.mean().item<double>();
}

/// 8-bit luma as an OpenCV matrix.
cv::Mat luma8(const ImageTensor& x)
{
    const auto y = luminance(as_image(x, "luma"));
    auto q = (y.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
    return cv::Mat(static_cast<int>(q.size(2)), static_cast<int>(q.size(3)), CV_8UC1, q.data_ptr()).clone();
}

torch::Tensor mat8_to_tensor(const cv::Mat& m)
{
    return torch::from_blob(const_cast<uint8_t*>(m.ptr<uint8_t>()), {1, 1, m.rows, m.cols}, torch::kUInt8)
               .to(torch::kFloat64)
               .clone() /
           255.0;
}

double entropy8(const cv::Mat& m)
{
    std::array<double, 256> hist{};
    for (int r = 0; r < m.rows; ++r) {
        const auto* row = m.ptr<uint8_t>(r);
        for (int c = 0; c < m.cols; ++c) hist[row[c]] += 1.0;
    }
    const double total = static_cast<double>(m.total());
    double h = 0.0;
    for (double n : hist) {
        if (n > 0.0) h -= (n / total) * std::log2(n / total);
    }
    return h;
}

/// Sorted copy of a flat tensor as a std::vector.
std::vector<double> sorted_values(const torch::Tensor& t)
{
    const auto c = t.contiguous().flatten();
    std::vector<double> v(c.data_ptr<double>(), c.data_ptr<double>() + c.numel());
    std::sort(v.begin(), v.end());
    return v;
}

/// Asymmetric alpha-trimmed mean: drops ceil(aL K) lowest and floor(aR K) highest.
double trimmed_mean(const std::vector<double>& sorted, double alpha_low, double alpha_high)
{
    const auto k = static_cast<double>(sorted.size());
    const auto lo = static_cast<std::size_t>(std::ceil(alpha_low * k));
    const auto hi = static_cast<std::size_t>(std::floor(alpha_high * k));
    if (lo + hi >= sorted.size()) throw std::invalid_argument("trimmed_mean: nothing left after trimming");
    const double sum = std::accumulate(sorted.begin() + static_cast<std::ptrdiff_t>(lo),
                                       sorted.end() - static_cast<std::ptrdiff_t>(hi), 0.0);
    return sum / static_cast<double>(sorted.size() - lo - hi);
}

/// Blocks of `t` (C x H x W) as C x k1 x k2 x B x B after dropping partial blocks.
torch::Tensor blocks(const torch::Tensor& t, int64_t block)
{
    const int64_t k1 = t.size(1) / block, k2 = t.size(2) / block;
    if (k1 == 0 || k2 == 0) throw std::invalid_argument("uiqm: image smaller than one 8x8 block");
    using torch::indexing::Slice;
    const auto cropped = t.index({Slice(), Slice(0, k1 * block), Slice(0, k2 * block)});
    return cropped.reshape({t.size(0), k1, block, k2, block}).permute({0, 1, 3, 2, 4});
}

double eme(const torch::Tensor& channel)
{
    const auto b = blocks(channel.unsqueeze(0), kUiqmBlock).flatten(3);
    const auto mx = std::get<0>(b.max(3)), mn = std::get<0>(b.min(3));
    const auto valid = (mn > 0.0) & (mx > 0.0);
    const auto ratio = torch::where(valid, mx / torch::where(valid, mn, torch::ones_like(mn)), torch::ones_like(mx));
    const double k = static_cast<double>(mx.numel());
    return 2.0 / k * torch::log(ratio).sum().item<double>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Full reference
// ---------------------------------------------------------------------------

double psnr(const ImageTensor& x, const ImageTensor& y)
{
    const auto a = as_image(x, "psnr"), b = as_image(y, "psnr");
    if (!a.sizes().equals(b.sizes())) throw std::invalid_argument("psnr: shape mismatch");
    const double mse = (a - b).pow(2).mean().item<double>();
    if (mse == 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageTensor& x, const ImageTensor& y)
{
    const auto a = as_image(x, "ssim"), b = as_image(y, "ssim");
    if (!a.sizes().equals(b.sizes())) throw std::invalid_argument("ssim: shape mismatch");
    return ssim_gray(luminance(a), luminance(b));
}

// ---------------------------------------------------------------------------
// UCIQE
// ---------------------------------------------------------------------------

torch::Tensor rgb_to_lab(const ImageTensor& rgb)
{
    const auto x = as_rgb(rgb, "rgb_to_lab")[0];
    const auto linear = torch::where(x <= 0.04045, x / 12.92, torch::pow((x + 0.055) / 1.055, 2.4));
    const auto m = torch::tensor({0.4124564, 0.3575761, 0.1804375,  //
                                  0.2126729, 0.7151522, 0.0721750,  //
                                  0.0193339, 0.1191920, 0.9503041},
                                 torch::kFloat64)
                       .view({3, 3});
    const auto xyz = torch::einsum("ij,jhw->ihw", {m, linear});
    const auto white = torch::tensor({0.95047, 1.0, 1.08883}, torch::kFloat64).view({3, 1, 1});
    const auto r = xyz / white;
    constexpr double delta = 6.0 / 29.0;
    const auto f = torch::where(r > delta * delta * delta, torch::pow(r, 1.0 / 3.0), r / (3.0 * delta * delta) + 4.0 / 29.0);
    const auto L = 116.0 * f[1] - 16.0;
    auto a = 500.0 * (f[0] - f[1]);
    auto b = 200.0 * (f[1] - f[2]);
    // Achromatic pixels are neutral by definition; the rounding in the
    // matrix product would otherwise leave ~1e-14 of chroma.
    const auto gray = (x[0] == x[1]) & (x[1] == x[2]);
    a = torch::where(gray, torch::zeros_like(a), a);
    b = torch::where(gray, torch::zeros_like(b), b);
    return torch::stack({L, a, b});
}

UciqeTerms uciqe_terms(const ImageTensor& x)
{
    const auto lab = rgb_to_lab(x) / 100.0;
    const auto L = lab[0], a = lab[1], b = lab[2];
    const auto chroma = torch::sqrt(a * a + b * b);

    UciqeTerms t;
    t.chroma_std = chroma.std(/*unbiased=*/false).item<double>();

    const auto sorted = sorted_values(L);
    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.01 * sorted.size())));
    const double bottom = std::accumulate(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / k;
    const double top = std::accumulate(sorted.end() - static_cast<std::ptrdiff_t>(k), sorted.end(), 0.0) / k;
    t.luma_contrast = top - bottom;

    const auto norm = torch::sqrt(chroma * chroma + L * L);
    const auto sat = torch::where(norm > 0.0, chroma / torch::where(norm > 0.0, norm, torch::ones_like(norm)),
                                  torch::zeros_like(norm));
    t.saturation_mean = sat.mean().item<double>();
    t.score = kUciqeChroma * t.chroma_std + kUciqeContrast * t.luma_contrast + kUciqeSaturation * t.saturation_mean;
    return t;
}

double uciqe(const ImageTensor& x) { return uciqe_terms(x).score; }

// ---------------------------------------------------------------------------
// UIQM
// ---------------------------------------------------------------------------

double uicm(const ImageTensor& x)
{
    const auto img = as_rgb(x, "uicm")[0] * 255.0;
    const auto rg = img[0] - img[1];
    const auto yb = 0.5 * (img[0] + img[1]) - img[2];
    const double mu_rg = trimmed_mean(sorted_values(rg), 0.1, 0.1);
    const double mu_yb = trimmed_mean(sorted_values(yb), 0.1, 0.1);
    const double var_rg = (rg - mu_rg).pow(2).mean().item<double>();
    const double var_yb = (yb - mu_yb).pow(2).mean().item<double>();
    return -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) + 0.1586 * std::sqrt(var_rg + var_yb);
}

double uism(const ImageTensor& x)
{
    const auto img = as_rgb(x, "uism") * 255.0;
    const auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, torch::kFloat64).view({1, 1, 3, 3});
    const auto ky = kx.transpose(2, 3).contiguous();
    constexpr std::array<double, 3> weights{0.299, 0.587, 0.114};
    double total = 0.0;
    for (int64_t c = 0; c < 3; ++c) {
        const auto ch = img.narrow(1, c, 1);
        const auto padded = F::pad(ch, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
        const auto gx = torch::conv2d(padded, kx), gy = torch::conv2d(padded, ky);
        const auto edge = torch::sqrt(gx * gx + gy * gy) * ch;
        total += weights[static_cast<std::size_t>(c)] * eme(edge[0][0]);
    }
    return total;
}

double uiconm(const ImageTensor& x)
{
    const auto img = as_rgb(x, "uiconm")[0] * 255.0;
    const auto b = blocks(img, kUiqmBlock);  // 3 x k1 x k2 x B x B
    const auto per_block = b.permute({1, 2, 0, 3, 4}).flatten(2);
    const auto mx = std::get<0>(per_block.max(2)), mn = std::get<0>(per_block.min(2));
    const auto top = mx - mn, bottom = mx + mn;
    const auto valid = (top > 0.0) & (bottom > 0.0);
    const auto r = torch::where(valid, top / torch::where(valid, bottom, torch::ones_like(bottom)), torch::ones_like(top));
    const auto terms = torch::where(valid, r * torch::log(r), torch::zeros_like(r));
    return -terms.sum().item<double>() / static_cast<double>(mx.numel());
}

UiqmTerms uiqm_terms(const ImageTensor& x)
{
    UiqmTerms t;
    t.uicm = uicm(x);
    t.uism = uism(x);
    t.uiconm = uiconm(x);
    t.score = kUiqmColorfulness * t.uicm + kUiqmSharpness * t.uism + kUiqmContrast * t.uiconm;
    return t;
}

double uiqm(const ImageTensor& x) { return uiqm_terms(x).score; }

// ---------------------------------------------------------------------------
// CEIQ surrogate
// ---------------------------------------------------------------------------

ImageTensor histeq(const ImageTensor& x)
{
    const cv::Mat y = luma8(x);
    cv::Mat eq;
    cv::equalizeHist(y, eq);
    return mat8_to_tensor(eq);
}

double entropy(const ImageTensor& x) { return entropy8(luma8(x)); }

CeiqTerms ceiq_surrogate_terms(const ImageTensor& x)
{
    const cv::Mat y = luma8(x);
    cv::Mat eq;
    cv::equalizeHist(y, eq);
    CeiqTerms t;
    t.similarity = ssim_gray(mat8_to_tensor(y), mat8_to_tensor(eq));
    t.entropy = entropy8(y) / 8.0;
    t.equalized_entropy = entropy8(eq) / 8.0;
    t.score = 0.5 * (1.0 - t.similarity) + 0.25 * t.entropy + 0.25 * t.equalized_entropy;
    return t;
}

double ceiq_surrogate(const ImageTensor& x) { return ceiq_surrogate_terms(x).score; }

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

void MetricReport::add(const std::string& image, const std::map<std::string, double>& values)
{
    if (!images_.emplace(image, values).second) throw std::invalid_argument("duplicate report entry: " + image);
}

std::vector<double> MetricReport::values(const std::string& metric) const
{
    std::vector<double> v;
    for (const auto& [name, metrics] : images_) {
        const auto it = metrics.find(metric);
        if (it != metrics.end()) v.push_back(it->second);
    }
    return v;
}

double MetricReport::mean(const std::string& metric) const
{
    const auto v = values(metric);
    if (v.empty()) throw std::invalid_argument("no values for metric " + metric);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double MetricReport::std(const std::string& metric) const
{
    const auto v = values(metric);
    const double m = mean(metric);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

nlohmann::json MetricReport::to_json() const
{
    nlohmann::json images = nlohmann::json::object();
    std::map<std::string, bool> metrics;
    for (const auto& [name, values] : images_) {
        images[name] = values;
        for (const auto& [metric, v] : values) metrics[metric] = true;
    }
    nlohmann::json aggregate = nlohmann::json::object();
    for (const auto& [metric, unused] : metrics) aggregate[metric] = {{"mean", mean(metric)}, {"std", std(metric)}};
    return {{"images", images}, {"aggregate", aggregate}, {"count", images_.size()}};
}

std::map<std::string, double> evaluate_image(const ImageTensor& prediction, const ImageTensor& reference)
{
    std::map<std::string, double> out;
    if (reference.defined()) {
        out[kMetricPsnr] = psnr(prediction, reference);
        out[kMetricSsim] = ssim(prediction, reference);
    }
    out[kMetricUciqe] = uciqe(prediction);
    out[kMetricUiqm] = uiqm(prediction);
    out[kMetricCeiq] = ceiq_surrogate(prediction);
    return out;
}

}  // namespace hupe
