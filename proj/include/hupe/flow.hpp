#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hupe/params.hpp"
#include "hupe/prior.hpp"
#include "hupe/spectral.hpp"
#include "hupe/types.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// Invertible primitives
// ---------------------------------------------------------------------------

/// Per-channel affine layer, y = scale * (x + bias).
struct ActnormParams {
    torch::Tensor scale;  ///< C
    torch::Tensor bias;   ///< C
    bool initialized = false;
};

inline constexpr double kActnormEps = 1e-6;

/// Data-dependent initialization: bias = -mean, scale = 1 / (std + eps) per
/// channel over batch and spatial dims.
ActnormParams actnorm_init(const torch::Tensor& batch, ActnormParams params);
torch::Tensor actnorm_apply(const torch::Tensor& x, const ActnormParams& params, Direction dir);

/// Dense C x C channel-mixing matrix applied per pixel.
struct InvConvParams {
    torch::Tensor weight;
};

inline constexpr double kMinInvConvDet = 1e-8;

/// Throws `std::domain_error` naming `where` when |det W| <= 1e-8.
void require_invertible(const InvConvParams& params, const std::string& where);
torch::Tensor invconv_apply(const torch::Tensor& x, const InvConvParams& params, Direction dir,
                            const std::string& where = "invconv");

/// Space-to-depth. Forward maps C x H x W to 4C x H/2 x W/2; output channel
/// c*4 + 2*dy + dx holds input pixel (2i+dy, 2j+dx) of channel c, so a 2x2
/// block [[a,b],[c,d]] becomes channels (a,b,c,d). Inverse undoes it exactly.
torch::Tensor squeeze(const torch::Tensor& x, Direction dir);

/// Heuristic prior injection: forward y = T x + B (1 - T),
/// inverse x = (y - B (1 - T)) / T. T and B are resized bilinearly to x's
/// resolution when they differ; T must be strictly positive.
torch::Tensor prior_inject(const torch::Tensor& x, const torch::Tensor& T, const torch::Tensor& B, Direction dir);

// ---------------------------------------------------------------------------
// Flow model
// ---------------------------------------------------------------------------

enum class InjectionMode { PerStep, PerHib };
enum class ActnormInit { Data, Identity };
enum class InvConvInit { Orthogonal, Identity };

struct FlowConfig {
    int64_t image_channels = 3;
    int n_hibs = 3;
    int flow_steps = 6;
    int64_t sfa_width = 0;  ///< 0: hidden width equals the coupling half
    InjectionMode injection = InjectionMode::PerStep;
    bool use_amplitude = true;
    bool use_phase = true;
    ActnormInit actnorm_init = ActnormInit::Data;
    InvConvInit invconv_init = InvConvInit::Orthogonal;

    /// Channels inside HIB `b` (forward order, deepest first).
    int64_t hib_channels(int b) const;
    /// Spatial downsampling factor inside HIB `b`.
    int64_t hib_divisor(int b) const;

    nlohmann::json to_json() const;
    static FlowConfig from_json(const nlohmann::json& j);
};

/// The invertible enhancer: an initial squeeze ladder of depth n_hibs, then
/// n_hibs Hybrid Invertible Blocks, each made of `flow_steps` steps of
/// actnorm -> invconv -> prior injection -> frequency-aware coupling and a
/// closing unsqueeze. Forward is G_E, inverse is G_E^-1.
///
/// Parameters are named `flow.hib<b>.step<s>.{actnorm,invconv,sfa}...`. Every
/// apply method takes the parameter table explicitly so a functionally
/// updated copy can be evaluated without touching the stored leaves.
class FlowModel {
public:
    FlowModel() = default;
    FlowModel(FlowConfig config, uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

    const FlowConfig& config() const { return config_; }
    ParamTable& params() { return params_; }
    const ParamTable& params() const { return params_; }

    std::string step_prefix(int hib, int step) const;
    ActnormParams actnorm(int hib, int step, const ParamTable& table) const;
    InvConvParams invconv(int hib, int step, const ParamTable& table) const;
    const SfaBlock& sfa(int hib, int step) const;

    bool actnorm_ready(int hib, int step) const;
    bool all_actnorm_ready() const;
    std::vector<uint8_t>& actnorm_state() { return actnorm_ready_; }
    const std::vector<uint8_t>& actnorm_state() const { return actnorm_ready_; }

    /// Runs the forward pass on `x`, initializing every not-yet-initialized
    /// actnorm from the activations it sees.
    void initialize_actnorm(const ImageTensor& x, const std::vector<PriorLevel>& priors);

    /// Throws naming the first HIB/step whose invconv weight is singular.
    void check_invertible(const ParamTable& table) const;
    void check_invertible() const { check_invertible(params_); }

    /// One HIB. Forward input has hib_channels(b) channels at 1/hib_divisor(b)
    /// resolution; output has a quarter of the channels at twice the
    /// resolution. `tap` receives the features before the closing unsqueeze.
    torch::Tensor hib_apply(int hib, const torch::Tensor& x, const PriorLevel& prior, const ParamTable& table,
                            Direction dir, torch::Tensor* tap = nullptr) const;

    ImageTensor forward(const ImageTensor& x, const std::vector<PriorLevel>& priors, const ParamTable& table,
                        std::vector<torch::Tensor>* taps = nullptr) const;
    ImageTensor inverse(const ImageTensor& y, const std::vector<PriorLevel>& priors, const ParamTable& table) const;

    ImageTensor forward(const ImageTensor& x, const std::vector<PriorLevel>& priors) const
    {
        return forward(x, priors, params_);
    }
    ImageTensor inverse(const ImageTensor& y, const std::vector<PriorLevel>& priors) const
    {
        return inverse(y, priors, params_);
    }

    /// Checks channel count and that H, W are powers of two divisible by 2^n_hibs.
    void require_valid_input(const ImageTensor& x, const std::string& what) const;

private:
    std::size_t index(int hib, int step) const;
    bool injects_at(int step) const;

    FlowConfig config_;
    ParamTable params_;
    std::vector<uint8_t> actnorm_ready_;
    std::vector<SfaBlock> sfa_;
};

/// Overwrites every flow parameter with random but well-conditioned values
/// (actnorm scale log-uniform in [0.8, 1.25], near-orthogonal invconv, coupling
/// heads with unit-gain 0.1 weights) and marks all actnorms initialized. Used by property
/// checks that need a non-trivial invertible map.
void randomize_flow(FlowModel& model, uint64_t seed);

/// Random prior levels with T log-uniform in [3/4, 4/3] and B in [0, 1].
std::vector<PriorLevel> random_prior_levels(const FlowConfig& config, const ImageTensor& like, uint64_t seed);

}  // namespace hupe
