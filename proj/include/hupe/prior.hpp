#pragma once

#include <vector>

#include "hupe/params.hpp"
#include "hupe/types.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// Physical imaging model
// ---------------------------------------------------------------------------

/// Sign of the Beer-Lambert exponent. `Negative` is the physical decay
/// t = exp(-beta d); `Positive` keeps the literal exp(+beta d) form for
/// ablations (it is clipped to 1 for any non-negative beta and depth).
enum class TransmissionSign { Negative, Positive };

struct PhysicalParams {
    torch::Tensor t;  ///< transmission in (0,1], broadcastable to the image
    torch::Tensor B;  ///< ambient light, per channel (N x C x 1 x 1) or scalar
};

enum class PhysicalDirection { Restore, Degrade };

inline constexpr double kMinTransmission = 0.05;

/// t = exp(-beta d) (or exp(+beta d)), clipped to [0.05, 1].
torch::Tensor transmission_from_depth(const torch::Tensor& depth, double beta,
                                      TransmissionSign sign = TransmissionSign::Negative);

/// restore: J = I/t + B(t-1)/t;  degrade: I = t J - B(t-1).
ImageTensor physical_apply(const ImageTensor& x, const PhysicalParams& p, PhysicalDirection dir);

// ---------------------------------------------------------------------------
// Hand-crafted guidance maps
// ---------------------------------------------------------------------------

/// ITU-R 601 luma of an RGB tensor; single-channel input is returned as is.
torch::Tensor luminance(const ImageTensor& image);

/// Sobel magnitude of the luminance, divided by its per-image maximum.
/// Replicated borders. Output N x 1 x H x W in [0,1]; all zero for flat input.
ImageTensor gradient_map(const ImageTensor& image);

/// Per-pixel channel minimum followed by a window x window minimum filter
/// (the window is clipped at the image border).
ImageTensor dark_channel(const ImageTensor& image, int64_t window = 15);

/// Depth proxy in [0,1]: the per-image min-max normalization of
/// (1 - dark channel). Bright, unhazed regions come out near, dim regions far.
/// A constant map normalizes to 0.
ImageTensor depth_map(const ImageTensor& image, int64_t window = 15);

// ---------------------------------------------------------------------------
// Heuristic prior guided encoder
// ---------------------------------------------------------------------------

/// Ambient light B and reciprocal transmission T = 1/t for one HIB.
struct PriorLevel {
    torch::Tensor ambient;       ///< B_i in [0,1]
    torch::Tensor transmission;  ///< T_i > 0
};

struct HeuristicPrior {
    torch::Tensor gradient;         ///< I_g, N x 1 x H x W
    torch::Tensor depth;            ///< I_d, N x 1 x H x W
    std::vector<PriorLevel> levels; ///< one pair per HIB, in forward (deepest-first) order
};

struct PriorEncoderConfig {
    int n_hibs = 3;
    int64_t image_channels = 3;
    int64_t base_width = 32;
    int64_t max_width = 128;
    bool use_rgb = true;
    bool use_gradient = true;
    bool use_depth = true;
    /// Adds the spatial mean of each level's features as extra head input.
    bool global_context = true;

    /// Channels of HIB `b` (forward order): image_channels * 4^(n_hibs - b).
    int64_t level_channels(int b) const;
};

/// Stem conv at full resolution, then one stride-2 conv per HIB level
/// (widths 32, 64, 128, ...); a zero-initialized head per level emits 2k
/// channels split into B = sigmoid(.) and T = softplus(.) + eps, biased so
/// that T = 1 at initialization.
class PriorEncoder {
public:
    PriorEncoder() = default;
    explicit PriorEncoder(PriorEncoderConfig config);

    void init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype = torch::kFloat32) const;

    std::vector<PriorLevel> encode(const ImageTensor& image, const ImageTensor& gradient, const ImageTensor& depth,
                                   const ParamTable& table) const;

    const PriorEncoderConfig& config() const { return config_; }

    static constexpr double kTransmissionEps = 1e-3;

private:
    PriorEncoderConfig config_;
    Conv2d stem_;
    std::vector<Conv2d> down_;
    std::vector<Conv2d> heads_;  // indexed by HIB (forward order)
};

/// Gradient and depth maps (computed without gradient tracking) plus the
/// encoded per-HIB pairs.
HeuristicPrior estimate_prior(const ImageTensor& image, const PriorEncoder& encoder, const ParamTable& table);

/// Prior with T = 1 and B = 0.5 at every level; makes injection an identity.
HeuristicPrior neutral_prior(const ImageTensor& image, const PriorEncoderConfig& config);

}  // namespace hupe
