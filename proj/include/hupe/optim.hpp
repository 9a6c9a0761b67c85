#pragma once

#include <vector>

#include "hupe/checkpoint.hpp"
#include "hupe/params.hpp"

namespace hupe {

/// First-order optimizers over a ParamTable of leaf handles. Updates happen
/// in place under no-grad; gradients are passed explicitly (one per
/// parameter, undefined entries are skipped).
class Optimizer {
public:
    virtual ~Optimizer() = default;

    virtual void step(const std::vector<torch::Tensor>& grads) = 0;
    /// Moment buffers and step count, for bit-identical resume.
    virtual Checkpoint state() const = 0;
    virtual void load_state(const Checkpoint& ckpt) = 0;

    const ParamTable& params() const { return params_; }
    int64_t steps() const { return steps_; }

protected:
    explicit Optimizer(ParamTable params) : params_(std::move(params)) {}
    void require_grads(const std::vector<torch::Tensor>& grads) const;

    ParamTable params_;
    int64_t steps_ = 0;
};

struct AdamOptions {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

class Adam final : public Optimizer {
public:
    Adam(ParamTable params, AdamOptions options);

    void step(const std::vector<torch::Tensor>& grads) override;
    Checkpoint state() const override;
    void load_state(const Checkpoint& ckpt) override;

    const AdamOptions& options() const { return options_; }

private:
    AdamOptions options_;
    std::vector<torch::Tensor> m_;
    std::vector<torch::Tensor> v_;
};

struct SgdOptions {
    double lr = 1e-2;
    double momentum = 0.0;
    double weight_decay = 0.0;
};

class Sgd final : public Optimizer {
public:
    Sgd(ParamTable params, SgdOptions options);

    void step(const std::vector<torch::Tensor>& grads) override;
    Checkpoint state() const override;
    void load_state(const Checkpoint& ckpt) override;

private:
    SgdOptions options_;
    std::vector<torch::Tensor> velocity_;
};

/// Gradients of `loss` w.r.t. every tensor of `params`; unused inputs give
/// zero tensors.
std::vector<torch::Tensor> gradients(const torch::Tensor& loss, const ParamTable& params, bool create_graph = false);

}  // namespace hupe
