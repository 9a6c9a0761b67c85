#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <torch/torch.h>

namespace hupe {

/// Ordered name -> tensor map. Every trainable component in the library keeps
/// its weights here instead of inside torch::nn modules, so the same forward
/// code can run on the stored leaves or on a functionally updated copy.
class ParamTable {
public:
    torch::Tensor& add(const std::string& name, torch::Tensor value);

    bool contains(std::string_view name) const;
    const torch::Tensor& at(std::string_view name) const;
    torch::Tensor& at(std::string_view name);

    const std::vector<std::string>& names() const { return names_; }
    const std::vector<torch::Tensor>& tensors() const { return values_; }
    std::size_t size() const { return values_.size(); }
    int64_t numel() const;

    /// Same names, different tensors (shapes must match).
    ParamTable with_tensors(std::vector<torch::Tensor> values) const;
    /// Detached deep copy.
    ParamTable clone() const;
    /// Subset whose names start with `prefix`.
    ParamTable slice(std::string_view prefix) const;
    /// Appends every entry of `other`; names must not collide.
    void merge(const ParamTable& other);

    void set_requires_grad(bool flag);
    void to(torch::ScalarType dtype);
    /// Copies values from `other` by name, in place, without touching autograd state.
    void assign_from(const ParamTable& other);

    bool bit_equal(const ParamTable& other) const;

private:
    std::vector<std::string> names_;
    std::vector<torch::Tensor> values_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic CPU generator for weight initialization.
at::Generator make_generator(uint64_t seed);

/// 2-D convolution with `same` padding for odd kernels. Weights live in a
/// ParamTable under `<name>.weight` / `<name>.bias`.
struct Conv2d {
    std::string name;
    int64_t in_channels = 0;
    int64_t out_channels = 0;
    int64_t kernel = 3;
    int64_t stride = 1;

    /// Kaiming-uniform weights (relu gain), zero bias.
    void init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype = torch::kFloat32) const;
    /// Zero weights and the given constant bias.
    void init_zero(ParamTable& table, double bias = 0.0, torch::ScalarType dtype = torch::kFloat32) const;

    torch::Tensor operator()(const torch::Tensor& x, const ParamTable& table) const;

    int64_t padding() const { return kernel / 2; }
};

}  // namespace hupe
