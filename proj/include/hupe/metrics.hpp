#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hupe/types.hpp"

namespace hupe {

// All metrics take a single image (1 x C x H x W or C x H x W) in [0,1] and
// compute in double precision.

inline constexpr double kPsnrIdentical = 99.0;

/// 10 log10(1 / MSE); identical inputs give the 99 dB sentinel.
double psnr(const ImageTensor& x, const ImageTensor& y);

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows of the luma,
/// C1 = 0.01^2, C2 = 0.03^2. Both sides must be at least 11 pixels.
double ssim(const ImageTensor& x, const ImageTensor& y);

// UCIQE (Yang and Sowmya, 2015) over CIELab with L, a, b divided by 100.
inline constexpr double kUciqeChroma = 0.4680;
inline constexpr double kUciqeContrast = 0.2745;
inline constexpr double kUciqeSaturation = 0.2576;

struct UciqeTerms {
    double chroma_std = 0.0;       ///< population std of sqrt(a^2 + b^2)
    double luma_contrast = 0.0;    ///< mean of top 1% L minus mean of bottom 1% L
    double saturation_mean = 0.0;  ///< mean of C / sqrt(C^2 + L^2)
    double score = 0.0;
};

/// sRGB (D65) to CIELab, 3 x H x W output with L in [0,100].
torch::Tensor rgb_to_lab(const ImageTensor& rgb);
UciqeTerms uciqe_terms(const ImageTensor& x);
double uciqe(const ImageTensor& x);

// UIQM (Panetta, Gao and Agaian, 2016) on the 0..255 scale, 8 x 8 blocks.
inline constexpr double kUiqmColorfulness = 0.0282;
inline constexpr double kUiqmSharpness = 0.2953;
inline constexpr double kUiqmContrast = 3.5753;
inline constexpr int64_t kUiqmBlock = 8;

struct UiqmTerms {
    double uicm = 0.0;
    double uism = 0.0;
    double uiconm = 0.0;
    double score = 0.0;
};

/// Colourfulness from alpha-trimmed (0.1 / 0.1) opponent means and full variances.
double uicm(const ImageTensor& x);
/// Luma-weighted EME of (Sobel magnitude x channel) per channel. Rows and
/// columns that do not fill a whole block are dropped.
double uism(const ImageTensor& x);
/// -1/(k1 k2) sum over blocks (covering all channels) of r log r with
/// r = (max - min) / (max + min); blocks with r = 0 contribute nothing.
double uiconm(const ImageTensor& x);
UiqmTerms uiqm_terms(const ImageTensor& x);
double uiqm(const ImageTensor& x);

/// 8-bit luma histogram equalization (OpenCV semantics; a constant image is
/// returned unchanged). Output 1 x 1 x H x W in [0,1].
ImageTensor histeq(const ImageTensor& x);
/// Shannon entropy in bits of the 8-bit luma histogram.
double entropy(const ImageTensor& x);

struct CeiqTerms {
    double similarity = 0.0;         ///< f1 = ssim(x, histeq(x))
    double entropy = 0.0;            ///< f2 = entropy(x) / 8
    double equalized_entropy = 0.0;  ///< f3 = entropy(histeq(x)) / 8
    double score = 0.0;
};

/// Contrast surrogate reported as "CEIQ-s"; not the published CEIQ model.
/// score = 0.5 (1 - f1) + 0.25 f2 + 0.25 f3.
CeiqTerms ceiq_surrogate_terms(const ImageTensor& x);
double ceiq_surrogate(const ImageTensor& x);

/// Per-image metric values plus per-metric mean and population std.
class MetricReport {
public:
    void add(const std::string& image, const std::map<std::string, double>& values);

    std::size_t count() const { return images_.size(); }
    double mean(const std::string& metric) const;
    double std(const std::string& metric) const;
    const std::map<std::string, std::map<std::string, double>>& images() const { return images_; }

    /// {"images": {name: {metric: v}}, "aggregate": {metric: {"mean", "std"}}, "count": n}
    nlohmann::json to_json() const;

private:
    std::vector<double> values(const std::string& metric) const;

    std::map<std::string, std::map<std::string, double>> images_;
};

/// Names used in reports.
inline constexpr const char* kMetricPsnr = "PSNR";
inline constexpr const char* kMetricSsim = "SSIM";
inline constexpr const char* kMetricUciqe = "UCIQE";
inline constexpr const char* kMetricUiqm = "UIQM";
inline constexpr const char* kMetricCeiq = "CEIQ-s";

/// PSNR and SSIM when `reference` is defined; UCIQE, UIQM and CEIQ-s always.
std::map<std::string, double> evaluate_image(const ImageTensor& prediction, const ImageTensor& reference = {});

}  // namespace hupe
