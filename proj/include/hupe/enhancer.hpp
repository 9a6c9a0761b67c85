#pragma once

#include <filesystem>
#include <vector>

#include "hupe/checkpoint.hpp"
#include "hupe/flow.hpp"
#include "hupe/prior.hpp"

namespace hupe {

struct EnhancerConfig {
    FlowConfig flow;
    PriorEncoderConfig prior;

    /// Prior encoder levels always follow the flow's HIB ladder.
    EnhancerConfig& sync();

    nlohmann::json to_json() const;
    static EnhancerConfig from_json(const nlohmann::json& j);
};

/// The heuristic invertible network (HIN): the invertible flow plus the
/// prior encoder that conditions it. All trainable tensors are reachable
/// through `parameters()` under the `flow.` and `hpe.` prefixes.
class Enhancer {
public:
    Enhancer() = default;
    Enhancer(EnhancerConfig config, uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

    const EnhancerConfig& config() const { return config_; }
    FlowModel& flow() { return flow_; }
    const FlowModel& flow() const { return flow_; }
    const PriorEncoder& encoder() const { return encoder_; }
    ParamTable& encoder_params() { return encoder_params_; }
    const ParamTable& encoder_params() const { return encoder_params_; }

    /// Handles to every trainable tensor (flow first, then encoder).
    ParamTable parameters() const;

    /// `table`, when given, must contain every flow and encoder name; it is
    /// used in place of the stored parameters.
    HeuristicPrior prior(const ImageTensor& degraded, const ParamTable* table = nullptr) const;
    ImageTensor enhance(const ImageTensor& degraded, const HeuristicPrior& prior, const ParamTable* table = nullptr,
                        std::vector<torch::Tensor>* taps = nullptr) const;
    ImageTensor degrade(const ImageTensor& clear, const HeuristicPrior& prior, const ParamTable* table = nullptr) const;

    /// Data-dependent actnorm initialization on the first batch (no-op once done).
    void initialize(const ImageTensor& degraded);

    void to(torch::ScalarType dtype);

    Checkpoint to_checkpoint() const;
    static Enhancer from_checkpoint(const Checkpoint& ckpt);
    void save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }
    static Enhancer load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

private:
    EnhancerConfig config_;
    FlowModel flow_;
    PriorEncoder encoder_;
    ParamTable encoder_params_;
};

/// G_E: estimates the prior from `degraded` and runs the flow forward.
ImageTensor enhance(const ImageTensor& degraded, const Enhancer& model);
/// G_E^-1 under an explicit prior (normally the one estimated from the
/// degraded image the clear image came from).
ImageTensor degrade(const ImageTensor& clear, const Enhancer& model, const HeuristicPrior& prior);

/// Clamps to [0,1]; only used when an image leaves the library.
inline ImageTensor to_displayable(const ImageTensor& x) { return x.detach().clamp(0.0, 1.0); }

}  // namespace hupe
