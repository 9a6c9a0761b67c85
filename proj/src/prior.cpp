#include "hupe/prior.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hupe {
namespace F = torch::nn::functional;

torch::Tensor transmission_from_depth(const torch::Tensor& depth, double beta, TransmissionSign sign)
{
    if (beta < 0.0) throw std::invalid_argument("transmission_from_depth: beta must be >= 0");
    const double s = sign == TransmissionSign::Negative ? -1.0 : 1.0;
    return torch::clamp(torch::exp(s * beta * depth), kMinTransmission, 1.0);
}

ImageTensor physical_apply(const ImageTensor& x, const PhysicalParams& p, PhysicalDirection dir)
{
    if (!p.t.defined() || !p.B.defined()) throw std::invalid_argument("physical_apply: t and B are required");
    if ((p.t <= 0.0).any().item<bool>()) throw std::invalid_argument("physical_apply: transmission must be > 0");
    if (dir == PhysicalDirection::Restore) {
        return x / p.t + p.B * (p.t - 1.0) / p.t;
    }
    return p.t * x - p.B * (p.t - 1.0);
}

torch::Tensor luminance(const ImageTensor& image)
{
    if (image.size(1) == 1) return image;
    if (image.size(1) != 3) throw std::invalid_argument("luminance: expected 1 or 3 channels, got " + shape_string(image));
    const auto c = image.unbind(1);
    return (0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]).unsqueeze(1);
}

ImageTensor gradient_map(const ImageTensor& image)
{
    require_image_tensor(image, "gradient_map");
    torch::NoGradGuard guard;
    const auto y = luminance(image);
    // Separable Sobel as shifted differences, so flat input gives exact zeros.
    const auto p = F::pad(y, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    const int64_t h = y.size(2), w = y.size(3);
    const auto rows = [&](int64_t o) { return p.narrow(2, o, h); };
    const auto cols = [&](const torch::Tensor& t, int64_t o) { return t.narrow(3, o, w); };
    const auto vsmooth = rows(0) + 2.0 * rows(1) + rows(2);
    const auto vdiff = rows(2) - rows(0);
    const auto gx = cols(vsmooth, 2) - cols(vsmooth, 0);
    const auto gy = cols(vdiff, 0) + 2.0 * cols(vdiff, 1) + cols(vdiff, 2);
    const auto mag = torch::sqrt(gx * gx + gy * gy);
    auto peak = std::get<0>(mag.flatten(1).max(1)).view({-1, 1, 1, 1});
    peak = torch::where(peak > 1e-12, peak, torch::ones_like(peak));
    return mag / peak;
}

ImageTensor dark_channel(const ImageTensor& image, int64_t window)
{
    require_image_tensor(image, "dark_channel");
    if (window < 1 || window % 2 == 0) throw std::invalid_argument("dark_channel: window must be odd and positive");
    torch::NoGradGuard guard;
    const auto channel_min = std::get<0>(image.min(1, /*keepdim=*/true));
    return -torch::max_pool2d(-channel_min, {window, window}, {1, 1}, {window / 2, window / 2});
}

ImageTensor depth_map(const ImageTensor& image, int64_t window)
{
    torch::NoGradGuard guard;
    const auto inverted = 1.0 - dark_channel(image, window);
    const auto flat = inverted.flatten(1);
    const auto lo = std::get<0>(flat.min(1)).view({-1, 1, 1, 1});
    const auto hi = std::get<0>(flat.max(1)).view({-1, 1, 1, 1});
    const auto range = hi - lo;
    const auto safe = torch::where(range > 1e-12, range, torch::ones_like(range));
    return torch::where(range > 1e-12, (inverted - lo) / safe, torch::zeros_like(inverted));
}

int64_t PriorEncoderConfig::level_channels(int b) const
{
    int64_t c = image_channels;
    for (int i = b; i < n_hibs; ++i) c *= 4;
    return c;
}

namespace {

// softplus(offset) + eps == 1
double transmission_bias_offset()
{
    return std::log(std::expm1(1.0 - PriorEncoder::kTransmissionEps));
}

}  // namespace

PriorEncoder::PriorEncoder(PriorEncoderConfig config) : config_(config)
{
    if (config_.n_hibs < 1) throw std::invalid_argument("PriorEncoder: n_hibs must be >= 1");
    stem_ = {"hpe.stem", config_.image_channels + 2, config_.base_width, 3, 1};
    int64_t in = config_.base_width;
    std::vector<int64_t> widths;
    for (int l = 1; l <= config_.n_hibs; ++l) {
        const int64_t w = std::min(config_.max_width, config_.base_width << (l - 1));
        down_.push_back({"hpe.down" + std::to_string(l), in, w, 3, 2});
        widths.push_back(w);
        in = w;
    }
    // level l (resolution H / 2^l) feeds HIB b = n_hibs - l
    heads_.resize(static_cast<std::size_t>(config_.n_hibs));
    for (int b = 0; b < config_.n_hibs; ++b) {
        const int l = config_.n_hibs - b;
        const int64_t w = widths[static_cast<std::size_t>(l - 1)];
        heads_[static_cast<std::size_t>(b)] = {"hpe.head" + std::to_string(b), config_.global_context ? 2 * w : w,
                                               2 * config_.level_channels(b), 3, 1};
    }
}

void PriorEncoder::init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype) const
{
    stem_.init(table, gen, dtype);
    for (const auto& d : down_) d.init(table, gen, dtype);
    const double offset = transmission_bias_offset();
    for (int b = 0; b < config_.n_hibs; ++b) {
        const auto& head = heads_[static_cast<std::size_t>(b)];
        head.init_zero(table, 0.0, dtype);
        torch::NoGradGuard guard;
        const int64_t k = config_.level_channels(b);
        table.at(head.name + ".bias").slice(0, k, 2 * k).fill_(offset);
    }
}

std::vector<PriorLevel> PriorEncoder::encode(const ImageTensor& image, const ImageTensor& gradient,
                                             const ImageTensor& depth, const ParamTable& table) const
{
    if (image.size(1) != config_.image_channels || gradient.size(1) != 1 || depth.size(1) != 1) {
        throw std::invalid_argument("hpe_encode: expected image/gradient/depth with " +
                                    std::to_string(config_.image_channels) + "/1/1 channels");
    }
    if (!image.sizes().slice(2).equals(gradient.sizes().slice(2)) ||
        !image.sizes().slice(2).equals(depth.sizes().slice(2))) {
        throw std::invalid_argument("hpe_encode: spatial size mismatch between " + shape_string(image) + ", " +
                                    shape_string(gradient) + " and " + shape_string(depth));
    }
    const int64_t divisor = int64_t{1} << config_.n_hibs;
    if (image.size(2) % divisor != 0 || image.size(3) % divisor != 0) {
        throw std::invalid_argument("hpe_encode: spatial dims of " + shape_string(image) + " not divisible by " +
                                    std::to_string(divisor));
    }

    const auto rgb = config_.use_rgb ? image : torch::zeros_like(image);
    const auto grad = config_.use_gradient ? gradient.to(image.scalar_type()) : torch::zeros_like(gradient, image.options());
    const auto dep = config_.use_depth ? depth.to(image.scalar_type()) : torch::zeros_like(depth, image.options());

    auto h = torch::relu(stem_(torch::cat({rgb, grad, dep}, 1), table));
    std::vector<torch::Tensor> features;
    for (const auto& d : down_) {
        h = torch::relu(d(h, table));
        features.push_back(h);
    }

    std::vector<PriorLevel> levels(static_cast<std::size_t>(config_.n_hibs));
    for (int b = 0; b < config_.n_hibs; ++b) {
        const int l = config_.n_hibs - b;
        auto f = features[static_cast<std::size_t>(l - 1)];
        if (config_.global_context) {
            f = torch::cat({f, f.mean({2, 3}, /*keepdim=*/true).expand_as(f)}, 1);
        }
        const auto raw = heads_[static_cast<std::size_t>(b)](f, table);
        const auto parts = raw.chunk(2, 1);
        levels[static_cast<std::size_t>(b)] = {torch::sigmoid(parts[0]), torch::softplus(parts[1]) + kTransmissionEps};
    }
    return levels;
}

HeuristicPrior estimate_prior(const ImageTensor& image, const PriorEncoder& encoder, const ParamTable& table)
{
    require_image_tensor(image, "estimate_prior");
    HeuristicPrior prior;
    {
        const auto detached = image.detach();
        prior.gradient = gradient_map(detached);
        prior.depth = depth_map(detached);
    }
    prior.levels = encoder.encode(image.detach(), prior.gradient, prior.depth, table);
    return prior;
}

HeuristicPrior neutral_prior(const ImageTensor& image, const PriorEncoderConfig& config)
{
    HeuristicPrior prior;
    prior.gradient = gradient_map(image.detach());
    prior.depth = depth_map(image.detach());
    for (int b = 0; b < config.n_hibs; ++b) {
        const int64_t scale = int64_t{1} << (config.n_hibs - b);
        const std::vector<int64_t> shape{image.size(0), config.level_channels(b), image.size(2) / scale,
                                         image.size(3) / scale};
        prior.levels.push_back({torch::full(shape, 0.5, image.options()), torch::ones(shape, image.options())});
    }
    return prior;
}

}  // namespace hupe
