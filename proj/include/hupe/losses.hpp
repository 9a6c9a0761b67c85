#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "hupe/enhancer.hpp"
#include "hupe/params.hpp"
#include "hupe/types.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// Perceptual feature extractor
// ---------------------------------------------------------------------------

enum class PerceptualBackend { PretrainedVgg19, FixedRandomCnn };

/// VGG19 convolutional trunk up to conv5_1, tapped after the ReLU of conv
/// layers 1, 3, 5, 9 and 13 (conv1_1, conv2_1, conv3_1, conv4_1, conv5_1).
/// The pretrained backend reads torchvision-named weights
/// (`features.<idx>.weight/bias`) from a hupe-ckpt-v1 file; the fixed random
/// backend uses the same topology with widths divided by `width_divisor`
/// and seeded Kaiming weights. Weights are never trained.
class PerceptualExtractor {
public:
    static constexpr std::array<int, 5> kTapLayers{1, 3, 5, 9, 13};
    static constexpr std::array<double, 5> kTapWeights{1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0};

    static PerceptualExtractor fixed_random(uint64_t seed = 19, int64_t width_divisor = 4);
    static PerceptualExtractor pretrained_vgg19(const std::filesystem::path& weights);
    /// backend: "auto" (pretrained when `weights` exists, random otherwise),
    /// "pretrained-vgg19" or "fixed-random-cnn".
    static PerceptualExtractor create(const std::string& backend, const std::filesystem::path& weights = {});

    PerceptualBackend backend() const { return backend_; }
    /// Copy with weights cast to `dtype`.
    PerceptualExtractor to(torch::ScalarType dtype) const;

    /// Features at the five taps, shallow to deep. Input is an RGB image in [0,1].
    std::vector<torch::Tensor> features(const ImageTensor& image) const;

private:
    PerceptualExtractor(PerceptualBackend backend, int64_t width_divisor);

    PerceptualBackend backend_ = PerceptualBackend::FixedRandomCnn;
    std::vector<Conv2d> convs_;
    ParamTable params_;
};

// ---------------------------------------------------------------------------
// Enhancement objectives
// ---------------------------------------------------------------------------

inline constexpr double kContrastiveEps = 1e-7;

/// sum_i rho_i * |f_i(pos) - f_i(out)|_1 / (|f_i(neg) - f_i(out)|_1 + eps),
/// with mean-reduced L1 distances.
torch::Tensor contrastive_from_features(const std::vector<torch::Tensor>& out, const std::vector<torch::Tensor>& positive,
                                        const std::vector<torch::Tensor>& negative);
torch::Tensor contrastive_loss(const ImageTensor& out, const ImageTensor& reference, const ImageTensor& degraded,
                               const PerceptualExtractor& extractor);

/// Mean complex modulus of F(out) - F(reference) over all bins and channels
/// (unnormalized DFT).
torch::Tensor frequency_loss(const ImageTensor& out, const ImageTensor& reference);

enum class BilateralNorm { L1, L2 };

/// d(enhanced, reference) + d(degraded, input), where d is the mean squared
/// error (L2) or mean absolute error (L1).
torch::Tensor bilateral_from_outputs(const ImageTensor& enhanced, const ImageTensor& reference,
                                     const ImageTensor& degraded, const ImageTensor& input,
                                     BilateralNorm norm = BilateralNorm::L2);
/// Runs G_E on `input` and G_E^-1 on `reference` under the prior estimated
/// from `input`.
torch::Tensor bilateral_loss(const Enhancer& model, const ImageTensor& input, const ImageTensor& reference,
                             BilateralNorm norm = BilateralNorm::L2);

struct LossWeights {
    double contrastive = 1.0;  ///< lambda_1
    double frequency = 0.05;   ///< lambda_2
    double bilateral = 1.0;    ///< lambda_3
    double guide = 0.2;        ///< lambda_4, used by the external SCL stage

    void validate() const;
};

struct EnhancementTerms {
    torch::Tensor contrastive;
    torch::Tensor frequency;
    torch::Tensor bilateral;
    torch::Tensor total;
    ImageTensor enhanced;  ///< G_E(input) the terms were computed from
};

/// lambda_1 * contrastive + lambda_2 * frequency + lambda_3 * bilateral.
torch::Tensor combine_enhancement(const LossWeights& w, const torch::Tensor& contrastive,
                                  const torch::Tensor& frequency, const torch::Tensor& bilateral);

struct EnhancementLossOptions {
    LossWeights weights;
    BilateralNorm norm = BilateralNorm::L2;
};

/// Full enhancement objective. `table` overrides the model's parameters.
/// `taps`, when given, receives the enhancer features at each HIB exit.
EnhancementTerms enhancement_loss(const Enhancer& model, const ImageTensor& input, const ImageTensor& reference,
                                  const PerceptualExtractor& extractor, const EnhancementLossOptions& options,
                                  const ParamTable* table = nullptr, std::vector<torch::Tensor>* taps = nullptr);

// ---------------------------------------------------------------------------
// Collaborative and task objectives
// ---------------------------------------------------------------------------

/// Mean squared difference.
torch::Tensor guide_loss(const torch::Tensor& mfg, const torch::Tensor& ftb);
/// Mean over taps of the per-tap guide loss.
torch::Tensor guide_loss(const std::vector<torch::Tensor>& mfg, const std::vector<torch::Tensor>& ftb);

/// -alpha_t (1 - p_t)^gamma log p_t, mean over elements. Probabilities are
/// clamped to [1e-6, 1 - 1e-6]; alpha_t = alpha for positives, 1 - alpha otherwise.
torch::Tensor focal_loss(const torch::Tensor& prob, const torch::Tensor& target, double alpha = 0.25,
                         double gamma = 2.0);

/// 1 - GIoU for matched xyxy box pairs (M x 4), mean over pairs.
torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& target);

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  ///< pixels
    int cls = 0;
};

/// Output of the grid detection head: objectness logits N x 1 x G x G and
/// box distance logits N x 4 x G x G.
struct DetectionOutput {
    torch::Tensor objectness;
    torch::Tensor box;
};

/// Decodes grid boxes as normalized xyxy: the cell centre minus/plus the
/// sigmoid of the four distance logits. Shape N x G x G x 4.
torch::Tensor decode_boxes(const torch::Tensor& box_logits);

struct DetectionTerms {
    torch::Tensor classification;
    torch::Tensor localization;
    torch::Tensor total;
};

/// Focal loss on objectness over every cell plus GIoU loss over cells that
/// contain a ground-truth box centre. Boxes are in pixels of an image of
/// size `height` x `width`.
DetectionTerms detection_task_loss(const DetectionOutput& out, const std::vector<std::vector<Box>>& labels,
                                   int64_t height, int64_t width);

/// Per-pixel cross entropy of softmax(logits) (N x K x H x W) against an
/// index map (N x H x W, int64), mean over pixels.
torch::Tensor segmentation_task_loss(const torch::Tensor& logits, const torch::Tensor& labels);

}  // namespace hupe
