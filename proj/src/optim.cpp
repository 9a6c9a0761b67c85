#include "hupe/optim.hpp"

#include <stdexcept>

namespace hupe {

void Optimizer::require_grads(const std::vector<torch::Tensor>& grads) const
{
    if (grads.size() != params_.size()) {
        throw std::invalid_argument("optimizer: got " + std::to_string(grads.size()) + " gradients for " +
                                    std::to_string(params_.size()) + " parameters");
    }
}

namespace {

std::vector<torch::Tensor> zeros_like_all(const ParamTable& params)
{
    std::vector<torch::Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params.tensors()) out.push_back(torch::zeros_like(p).detach());
    return out;
}

Checkpoint buffers_to_checkpoint(const std::string& kind, int64_t steps, const ParamTable& params,
                                 const std::vector<std::pair<std::string, const std::vector<torch::Tensor>*>>& sets)
{
    Checkpoint ckpt;
    ckpt.meta = {{"component", "optim"}, {"kind", kind}, {"steps", steps}};
    for (const auto& [tag, buffers] : sets) {
        for (std::size_t i = 0; i < buffers->size(); ++i) ckpt.entries.add(tag + ":" + params.names()[i], (*buffers)[i]);
    }
    return ckpt;
}

void buffers_from_checkpoint(const Checkpoint& ckpt, const std::string& kind, const ParamTable& params,
                             const std::vector<std::pair<std::string, std::vector<torch::Tensor>*>>& sets,
                             int64_t& steps)
{
    if (ckpt.meta.value("kind", "") != kind) {
        throw std::runtime_error("optimizer state is for '" + ckpt.meta.value("kind", "") + "', expected '" + kind + "'");
    }
    steps = ckpt.meta.at("steps").get<int64_t>();
    for (const auto& [tag, buffers] : sets) {
        for (std::size_t i = 0; i < buffers->size(); ++i) {
            const auto name = tag + ":" + params.names()[i];
            if (!ckpt.entries.contains(name)) throw std::runtime_error("optimizer state lacks '" + name + "'");
            (*buffers)[i] = ckpt.entries.at(name).to((*buffers)[i].scalar_type()).clone();
        }
    }
}

}  // namespace

Adam::Adam(ParamTable params, AdamOptions options)
    : Optimizer(std::move(params)), options_(options), m_(zeros_like_all(params_)), v_(zeros_like_all(params_))
{
}

void Adam::step(const std::vector<torch::Tensor>& grads)
{
    require_grads(grads);
    torch::NoGradGuard guard;
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!grads[i].defined()) continue;
        auto& p = const_cast<torch::Tensor&>(params_.tensors()[i]);
        auto g = grads[i].detach();
        if (options_.weight_decay != 0.0) g = g + options_.weight_decay * p;
        m_[i].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
        v_[i].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
        const auto denom = (v_[i] / bc2).sqrt_().add_(options_.eps);
        p.addcdiv_(m_[i], denom, -options_.lr / bc1);
    }
}

Checkpoint Adam::state() const { return buffers_to_checkpoint("adam", steps_, params_, {{"m", &m_}, {"v", &v_}}); }

void Adam::load_state(const Checkpoint& ckpt)
{
    buffers_from_checkpoint(ckpt, "adam", params_, {{"m", &m_}, {"v", &v_}}, steps_);
}

Sgd::Sgd(ParamTable params, SgdOptions options)
    : Optimizer(std::move(params)), options_(options), velocity_(zeros_like_all(params_))
{
}

void Sgd::step(const std::vector<torch::Tensor>& grads)
{
    require_grads(grads);
    torch::NoGradGuard guard;
    ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!grads[i].defined()) continue;
        auto& p = const_cast<torch::Tensor&>(params_.tensors()[i]);
        auto g = grads[i].detach();
        if (options_.weight_decay != 0.0) g = g + options_.weight_decay * p;
        if (options_.momentum != 0.0) {
            velocity_[i].mul_(options_.momentum).add_(g);
            g = velocity_[i];
        }
        p.add_(g, -options_.lr);
    }
}

Checkpoint Sgd::state() const { return buffers_to_checkpoint("sgd", steps_, params_, {{"velocity", &velocity_}}); }

void Sgd::load_state(const Checkpoint& ckpt)
{
    buffers_from_checkpoint(ckpt, "sgd", params_, {{"velocity", &velocity_}}, steps_);
}

std::vector<torch::Tensor> gradients(const torch::Tensor& loss, const ParamTable& params, bool create_graph)
{
    auto grads = torch::autograd::grad({loss}, params.tensors(), /*grad_outputs=*/{}, /*retain_graph=*/create_graph,
                                       create_graph, /*allow_unused=*/true);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].defined()) grads[i] = torch::zeros_like(params.tensors()[i]);
    }
    return grads;
}

}  // namespace hupe
