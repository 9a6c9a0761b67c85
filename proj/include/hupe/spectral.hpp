#pragma once

#include <string>
#include <vector>

#include "hupe/params.hpp"
#include "hupe/types.hpp"

namespace hupe {

/// Polar form of the unnormalized 2-D DFT taken over the last two dims.
/// amplitude >= 0, phase in (-pi, pi].
struct Spectrum {
    torch::Tensor amplitude;
    torch::Tensor phase;
};

/// A = |F(x)|, P = atan2(Im F(x), Re F(x)) with atan2(0,0) = 0.
Spectrum fft_decompose(const torch::Tensor& x);

/// Real part of the inverse DFT of A * exp(iP).
torch::Tensor fft_recompose(const Spectrum& s);

struct SfaConfig {
    int64_t channels = 0;  ///< channels of the untouched half u1 (= channels of u2)
    int64_t width = 0;     ///< hidden width, 0 means `channels`
    bool use_amplitude = true;
    bool use_phase = true;

    int64_t hidden() const { return width > 0 ? width : channels; }
};

/// Spatial-frequency conditioning subnet of one coupling layer.
///
/// spatial   = u1 + conv(relu(conv(u1)))
/// amplitude = recompose(conv(A(u1)), P(u1))
/// phase     = recompose(A(u1), arg conv([cos P(u1), sin P(u1)]))
/// where exp(iP) is softened to F / sqrt(|F|^2 + (kPhasorSoftening * rms|F|)^2).
/// fused     = relu(conv(relu(conv(relu(conv([spatial, amplitude, phase]))))))
/// head      = conv(fused) -> [raw_scale, shift], zero-initialized
/// scale     = exp(clamp(raw_scale, -2, 2))
class SfaBlock {
public:
    SfaBlock() = default;
    SfaBlock(std::string prefix, SfaConfig config);

    void init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype = torch::kFloat32) const;

    struct Output {
        torch::Tensor scale;
        torch::Tensor shift;
    };
    Output forward(const torch::Tensor& u1, const ParamTable& table) const;

    const SfaConfig& config() const { return config_; }
    const std::string& prefix() const { return prefix_; }
    std::string head_name() const { return head_.name; }

    static constexpr double kLogScaleBound = 2.0;
    static constexpr double kPhasorSoftening = 0.1;
    static constexpr double kPhasorEps = 1e-24;

private:
    std::string prefix_;
    SfaConfig config_;
    Conv2d res1_, res2_, amp_, phase_, fuse1_, fuse2_, fuse3_, head_;
};

/// Affine coupling on channel halves (u1, u2):
/// forward u2' = scale(u1) * u2 + shift(u1); inverse u2 = (u2' - shift(u1)) / scale(u1).
torch::Tensor faac_apply(const torch::Tensor& u, const SfaBlock& sfa, const ParamTable& table, Direction dir);

}  // namespace hupe
