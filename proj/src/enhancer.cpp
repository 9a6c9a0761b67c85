#include "hupe/enhancer.hpp"

#include <stdexcept>

namespace hupe {

EnhancerConfig& EnhancerConfig::sync()
{
    prior.n_hibs = flow.n_hibs;
    prior.image_channels = flow.image_channels;
    return *this;
}

nlohmann::json EnhancerConfig::to_json() const
{
    return {{"flow", flow.to_json()},
            {"prior",
             {{"base_width", prior.base_width},
              {"max_width", prior.max_width},
              {"use_rgb", prior.use_rgb},
              {"use_gradient", prior.use_gradient},
              {"use_depth", prior.use_depth},
              {"global_context", prior.global_context}}}};
}

EnhancerConfig EnhancerConfig::from_json(const nlohmann::json& j)
{
    EnhancerConfig c;
    c.flow = FlowConfig::from_json(j.at("flow"));
    const auto& p = j.at("prior");
    c.prior.base_width = p.at("base_width").get<int64_t>();
    c.prior.max_width = p.at("max_width").get<int64_t>();
    c.prior.use_rgb = p.at("use_rgb").get<bool>();
    c.prior.use_gradient = p.at("use_gradient").get<bool>();
    c.prior.use_depth = p.at("use_depth").get<bool>();
    c.prior.global_context = p.at("global_context").get<bool>();
    c.sync();
    return c;
}

Enhancer::Enhancer(EnhancerConfig config, uint64_t seed, torch::ScalarType dtype)
    : config_(config.sync()), flow_(config_.flow, seed, dtype), encoder_(config_.prior)
{
    auto gen = make_generator(seed ^ 0x9e3779b97f4a7c15ULL);
    encoder_.init(encoder_params_, gen, dtype);
}

ParamTable Enhancer::parameters() const
{
    ParamTable all;
    all.merge(flow_.params());
    all.merge(encoder_params_);
    return all;
}

HeuristicPrior Enhancer::prior(const ImageTensor& degraded, const ParamTable* table) const
{
    return estimate_prior(degraded, encoder_, table ? *table : encoder_params_);
}

ImageTensor Enhancer::enhance(const ImageTensor& degraded, const HeuristicPrior& prior, const ParamTable* table,
                              std::vector<torch::Tensor>* taps) const
{
    return flow_.forward(degraded, prior.levels, table ? *table : flow_.params(), taps);
}

ImageTensor Enhancer::degrade(const ImageTensor& clear, const HeuristicPrior& prior, const ParamTable* table) const
{
    return flow_.inverse(clear, prior.levels, table ? *table : flow_.params());
}

void Enhancer::initialize(const ImageTensor& degraded)
{
    if (flow_.all_actnorm_ready()) return;
    torch::NoGradGuard guard;
    const auto p = prior(degraded);
    flow_.initialize_actnorm(degraded, p.levels);
}

void Enhancer::to(torch::ScalarType dtype)
{
    flow_.params().to(dtype);
    encoder_params_.to(dtype);
}

Checkpoint Enhancer::to_checkpoint() const
{
    Checkpoint ckpt;
    ckpt.meta = {{"component", "hin"}, {"config", config_.to_json()}};
    std::vector<int> ready(flow_.actnorm_state().begin(), flow_.actnorm_state().end());
    ckpt.meta["actnorm_initialized"] = ready;
    ckpt.entries = parameters();
    return ckpt;
}

Enhancer Enhancer::from_checkpoint(const Checkpoint& ckpt)
{
    if (ckpt.meta.value("component", "") != "hin") {
        throw std::runtime_error("checkpoint does not hold an enhancer (component='" +
                                 ckpt.meta.value("component", "") + "')");
    }
    Enhancer model(EnhancerConfig::from_json(ckpt.meta.at("config")), 0);
    auto params = model.parameters();
    if (params.names() != ckpt.entries.names()) {
        throw std::runtime_error("enhancer checkpoint parameter layout does not match its config");
    }
    params.assign_from(ckpt.entries);
    const auto ready = ckpt.meta.at("actnorm_initialized").get<std::vector<int>>();
    auto& state = model.flow_.actnorm_state();
    if (ready.size() != state.size()) throw std::runtime_error("enhancer checkpoint actnorm state size mismatch");
    for (std::size_t i = 0; i < ready.size(); ++i) state[i] = static_cast<uint8_t>(ready[i] != 0);
    return model;
}

ImageTensor enhance(const ImageTensor& degraded, const Enhancer& model)
{
    return model.enhance(degraded, model.prior(degraded));
}

ImageTensor degrade(const ImageTensor& clear, const Enhancer& model, const HeuristicPrior& prior)
{
    return model.degrade(clear, prior);
}

}  // namespace hupe
