#include "hupe/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "hupe/checkpoint.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// PerceptualExtractor
// ---------------------------------------------------------------------------

namespace {

// Output widths of the 13 VGG19 convs up to conv5_1 and the torchvision
// `features` index of each.
constexpr std::array<int64_t, 13> kVggWidths{64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512};
constexpr std::array<int, 13> kVggIndices{0, 2, 5, 7, 10, 12, 14, 16, 19, 21, 23, 25, 28};

bool pool_after(int layer) { return layer == 2 || layer == 4 || layer == 8 || layer == 12; }

}  // namespace

PerceptualExtractor::PerceptualExtractor(PerceptualBackend backend, int64_t width_divisor) : backend_(backend)
{
    int64_t in = 3;
    for (std::size_t i = 0; i < kVggWidths.size(); ++i) {
        const int64_t out = std::max<int64_t>(1, kVggWidths[i] / width_divisor);
        convs_.push_back({"features." + std::to_string(kVggIndices[i]), in, out, 3, 1});
        in = out;
    }
}

PerceptualExtractor PerceptualExtractor::fixed_random(uint64_t seed, int64_t width_divisor)
{
    if (width_divisor < 1) throw std::invalid_argument("fixed_random: width divisor must be >= 1");
    PerceptualExtractor e(PerceptualBackend::FixedRandomCnn, width_divisor);
    auto gen = make_generator(seed);
    for (const auto& conv : e.convs_) conv.init(e.params_, gen);
    return e;
}

PerceptualExtractor PerceptualExtractor::pretrained_vgg19(const std::filesystem::path& weights)
{
    PerceptualExtractor e(PerceptualBackend::PretrainedVgg19, 1);
    const auto ckpt = load_checkpoint(weights);
    for (const auto& conv : e.convs_) {
        for (const char* suffix : {".weight", ".bias"}) {
            const std::string name = conv.name + suffix;
            if (!ckpt.entries.contains(name)) {
                throw std::runtime_error("VGG19 weights in " + weights.string() + " lack '" + name + "'");
            }
            e.params_.add(name, ckpt.entries.at(name).clone());
        }
        if (e.params_.at(conv.name + ".weight").size(0) != conv.out_channels) {
            throw std::runtime_error("VGG19 weights in " + weights.string() + " have the wrong shape for " +
                                     conv.name);
        }
    }
    return e;
}

PerceptualExtractor PerceptualExtractor::create(const std::string& backend, const std::filesystem::path& weights)
{
    if (backend == "fixed-random-cnn") return fixed_random();
    if (backend == "pretrained-vgg19") return pretrained_vgg19(weights);
    if (backend == "auto") {
        if (!weights.empty() && std::filesystem::exists(weights)) return pretrained_vgg19(weights);
        return fixed_random();
    }
    throw std::invalid_argument("unknown perceptual backend '" + backend + "'");
}

PerceptualExtractor PerceptualExtractor::to(torch::ScalarType dtype) const
{
    PerceptualExtractor copy = *this;
    copy.params_ = params_.clone();
    copy.params_.to(dtype);
    return copy;
}

std::vector<torch::Tensor> PerceptualExtractor::features(const ImageTensor& image) const
{
    if (image.dim() != 4 || image.size(1) != 3) {
        throw std::invalid_argument("perceptual features need an RGB batch, got " + shape_string(image));
    }
    const auto opts = image.options();
    const auto mean = torch::tensor({0.485, 0.456, 0.406}, opts).view({1, 3, 1, 1});
    const auto std = torch::tensor({0.229, 0.224, 0.225}, opts).view({1, 3, 1, 1});
    auto h = (image - mean) / std;

    std::vector<torch::Tensor> taps;
    std::size_t next_tap = 0;
    for (std::size_t i = 0; i < convs_.size() && next_tap < kTapLayers.size(); ++i) {
        const int layer = static_cast<int>(i) + 1;
        h = torch::relu(convs_[i](h, params_));
        if (layer == kTapLayers[next_tap]) {
            taps.push_back(h);
            ++next_tap;
        }
        if (pool_after(layer) && h.size(2) >= 2 && h.size(3) >= 2) h = torch::max_pool2d(h, 2, 2);
    }
    return taps;
}

// ---------------------------------------------------------------------------
// Enhancement objectives
// ---------------------------------------------------------------------------

torch::Tensor contrastive_from_features(const std::vector<torch::Tensor>& out, const std::vector<torch::Tensor>& positive,
                                        const std::vector<torch::Tensor>& negative)
{
    const auto& w = PerceptualExtractor::kTapWeights;
    if (out.size() != w.size() || positive.size() != w.size() || negative.size() != w.size()) {
        throw std::invalid_argument("contrastive loss expects " + std::to_string(w.size()) + " feature taps");
    }
    torch::Tensor total = torch::zeros({}, out[0].options());
    for (std::size_t i = 0; i < w.size(); ++i) {
        const auto num = (positive[i] - out[i]).abs().mean();
        const auto den = (negative[i] - out[i]).abs().mean() + kContrastiveEps;
        total = total + w[i] * num / den;
    }
    return total;
}

torch::Tensor contrastive_loss(const ImageTensor& out, const ImageTensor& reference, const ImageTensor& degraded,
                               const PerceptualExtractor& extractor)
{
    return contrastive_from_features(extractor.features(out), extractor.features(reference),
                                     extractor.features(degraded));
}

torch::Tensor frequency_loss(const ImageTensor& out, const ImageTensor& reference)
{
    if (!out.sizes().equals(reference.sizes())) {
        throw std::invalid_argument("frequency_loss: shape mismatch " + shape_string(out) + " vs " +
                                    shape_string(reference));
    }
    require_pow2_spatial(out, "frequency_loss");
    return torch::abs(torch::fft::fft2(out) - torch::fft::fft2(reference)).mean();
}

torch::Tensor bilateral_from_outputs(const ImageTensor& enhanced, const ImageTensor& reference,
                                     const ImageTensor& degraded, const ImageTensor& input, BilateralNorm norm)
{
    if (norm == BilateralNorm::L2) {
        return (enhanced - reference).pow(2).mean() + (degraded - input).pow(2).mean();
    }
    return (enhanced - reference).abs().mean() + (degraded - input).abs().mean();
}

torch::Tensor bilateral_loss(const Enhancer& model, const ImageTensor& input, const ImageTensor& reference,
                             BilateralNorm norm)
{
    const auto prior = model.prior(input);
    return bilateral_from_outputs(model.enhance(input, prior), reference, model.degrade(reference, prior), input, norm);
}

void LossWeights::validate() const
{
    for (double v : {contrastive, frequency, bilateral, guide}) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
}

torch::Tensor combine_enhancement(const LossWeights& w, const torch::Tensor& contrastive,
                                  const torch::Tensor& frequency, const torch::Tensor& bilateral)
{
    return w.contrastive * contrastive + w.frequency * frequency + w.bilateral * bilateral;
}

EnhancementTerms enhancement_loss(const Enhancer& model, const ImageTensor& input, const ImageTensor& reference,
                                  const PerceptualExtractor& extractor, const EnhancementLossOptions& options,
                                  const ParamTable* table, std::vector<torch::Tensor>* taps)
{
    const auto prior = model.prior(input, table);
    const auto enhanced = model.enhance(input, prior, table, taps);
    const auto degraded = model.degrade(reference, prior, table);

    EnhancementTerms t;
    const auto& w = options.weights;
    const auto zero = torch::zeros({}, enhanced.options());
    if (w.contrastive > 0.0) {
        std::vector<torch::Tensor> fp, fn;
        {
            torch::NoGradGuard guard;
            fp = extractor.features(reference);
            fn = extractor.features(input);
        }
        t.contrastive = contrastive_from_features(extractor.features(enhanced), fp, fn);
    } else {
        t.contrastive = zero;
    }
    t.frequency = w.frequency > 0.0 ? frequency_loss(enhanced, reference) : zero;
    t.bilateral = bilateral_from_outputs(enhanced, reference, degraded, input, options.norm);
    t.total = combine_enhancement(w, t.contrastive, t.frequency, t.bilateral);
    t.enhanced = enhanced;
    return t;
}

// ---------------------------------------------------------------------------
// Collaborative and task objectives
// ---------------------------------------------------------------------------

torch::Tensor guide_loss(const torch::Tensor& mfg, const torch::Tensor& ftb)
{
    if (!mfg.sizes().equals(ftb.sizes())) {
        throw std::invalid_argument("guide_loss: shape mismatch " + shape_string(mfg) + " vs " + shape_string(ftb));
    }
    return (mfg - ftb).pow(2).mean();
}

torch::Tensor guide_loss(const std::vector<torch::Tensor>& mfg, const std::vector<torch::Tensor>& ftb)
{
    if (mfg.empty() || mfg.size() != ftb.size()) {
        throw std::invalid_argument("guide_loss: tap lists must be non-empty and of equal length");
    }
    torch::Tensor total = guide_loss(mfg[0], ftb[0]);
    for (std::size_t i = 1; i < mfg.size(); ++i) total = total + guide_loss(mfg[i], ftb[i]);
    return total / static_cast<double>(mfg.size());
}

torch::Tensor focal_loss(const torch::Tensor& prob, const torch::Tensor& target, double alpha, double gamma)
{
    if (!prob.sizes().equals(target.sizes())) {
        throw std::invalid_argument("focal_loss: shape mismatch " + shape_string(prob) + " vs " + shape_string(target));
    }
    const auto p = prob.clamp(1e-6, 1.0 - 1e-6);
    const auto t = target.to(p.scalar_type());
    const auto p_t = t * p + (1.0 - t) * (1.0 - p);
    const auto alpha_t = t * alpha + (1.0 - t) * (1.0 - alpha);
    return (-alpha_t * (1.0 - p_t).pow(gamma) * torch::log(p_t)).mean();
}

torch::Tensor giou_loss(const torch::Tensor& pred, const torch::Tensor& target)
{
    if (pred.dim() != 2 || pred.size(1) != 4 || !pred.sizes().equals(target.sizes())) {
        throw std::invalid_argument("giou_loss: expected matching M x 4 boxes, got " + shape_string(pred) + " and " +
                                    shape_string(target));
    }
    if (pred.size(0) == 0) return torch::zeros({}, pred.options());
    const auto p = pred.unbind(1);
    const auto g = target.unbind(1);
    const auto area_p = (p[2] - p[0]).clamp_min(0) * (p[3] - p[1]).clamp_min(0);
    const auto area_g = (g[2] - g[0]).clamp_min(0) * (g[3] - g[1]).clamp_min(0);
    const auto iw = (torch::min(p[2], g[2]) - torch::max(p[0], g[0])).clamp_min(0);
    const auto ih = (torch::min(p[3], g[3]) - torch::max(p[1], g[1])).clamp_min(0);
    const auto inter = iw * ih;
    const auto uni = (area_p + area_g - inter).clamp_min(1e-12);
    const auto hull = ((torch::max(p[2], g[2]) - torch::min(p[0], g[0])) *
                       (torch::max(p[3], g[3]) - torch::min(p[1], g[1])))
                          .clamp_min(1e-12);
    const auto giou = inter / uni - (hull - uni) / hull;
    return (1.0 - giou).mean();
}

torch::Tensor decode_boxes(const torch::Tensor& box_logits)
{
    const int64_t gh = box_logits.size(2), gw = box_logits.size(3);
    const auto opts = box_logits.options();
    const auto cy = ((torch::arange(gh, opts) + 0.5) / static_cast<double>(gh)).view({1, gh, 1});
    const auto cx = ((torch::arange(gw, opts) + 0.5) / static_cast<double>(gw)).view({1, 1, gw});
    const auto d = torch::sigmoid(box_logits).unbind(1);
    return torch::stack({cx - d[0], cy - d[1], cx + d[2], cy + d[3]}, -1);
}

DetectionTerms detection_task_loss(const DetectionOutput& out, const std::vector<std::vector<Box>>& labels,
                                   int64_t height, int64_t width)
{
    const int64_t n = out.objectness.size(0), gh = out.objectness.size(2), gw = out.objectness.size(3);
    if (static_cast<int64_t>(labels.size()) != n) {
        throw std::invalid_argument("detection_task_loss: " + std::to_string(labels.size()) + " label sets for batch of " +
                                    std::to_string(n));
    }
    auto target = torch::zeros({n, 1, gh, gw}, out.objectness.options());
    std::vector<int64_t> flat_index;
    std::vector<double> gt;
    for (int64_t b = 0; b < n; ++b) {
        for (const auto& box : labels[static_cast<std::size_t>(b)]) {
            const double cx = 0.5 * (box.x1 + box.x2) / static_cast<double>(width);
            const double cy = 0.5 * (box.y1 + box.y2) / static_cast<double>(height);
            const int64_t j = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cx * gw)), 0, gw - 1);
            const int64_t i = std::clamp<int64_t>(static_cast<int64_t>(std::floor(cy * gh)), 0, gh - 1);
            target.index_put_({b, 0, i, j}, 1.0);
            flat_index.push_back((b * gh + i) * gw + j);
            gt.insert(gt.end(), {box.x1 / width, box.y1 / height, box.x2 / width, box.y2 / height});
        }
    }

    DetectionTerms t;
    t.classification = focal_loss(torch::sigmoid(out.objectness), target);
    if (flat_index.empty()) {
        t.localization = torch::zeros({}, out.objectness.options());
    } else {
        const auto decoded = decode_boxes(out.box).reshape({-1, 4});
        const auto idx = torch::tensor(flat_index, torch::kLong);
        const auto gt_t = torch::tensor(gt, torch::kFloat64).view({-1, 4}).to(decoded.scalar_type());
        t.localization = giou_loss(decoded.index_select(0, idx), gt_t);
    }
    t.total = t.classification + t.localization;
    return t;
}

torch::Tensor segmentation_task_loss(const torch::Tensor& logits, const torch::Tensor& labels)
{
    if (logits.dim() != 4 || labels.dim() != 3 || logits.size(0) != labels.size(0) ||
        logits.size(2) != labels.size(1) || logits.size(3) != labels.size(2)) {
        throw std::invalid_argument("segmentation_task_loss: logits " + shape_string(logits) + " vs labels " +
                                    shape_string(labels));
    }
    return torch::nll_loss2d(torch::log_softmax(logits, 1), labels.to(torch::kLong));
}

}  // namespace hupe
