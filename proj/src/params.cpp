#include "hupe/params.hpp"

#include <cmath>
#include <stdexcept>

#include <ATen/CPUGeneratorImpl.h>

namespace hupe {

torch::Tensor& ParamTable::add(const std::string& name, torch::Tensor value)
{
    if (index_.count(name) != 0) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    index_.emplace(name, values_.size());
    names_.push_back(name);
    values_.push_back(std::move(value));
    return values_.back();
}

bool ParamTable::contains(std::string_view name) const
{
    return index_.count(std::string(name)) != 0;
}

const torch::Tensor& ParamTable::at(std::string_view name) const
{
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return values_[it->second];
}

torch::Tensor& ParamTable::at(std::string_view name)
{
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + std::string(name));
    }
    return values_[it->second];
}

int64_t ParamTable::numel() const
{
    int64_t n = 0;
    for (const auto& v : values_) n += v.numel();
    return n;
}

ParamTable ParamTable::with_tensors(std::vector<torch::Tensor> values) const
{
    if (values.size() != values_.size()) {
        throw std::invalid_argument("with_tensors: size mismatch");
    }
    ParamTable out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!values[i].sizes().equals(values_[i].sizes())) {
            throw std::invalid_argument("with_tensors: shape mismatch for " + names_[i]);
        }
        out.add(names_[i], std::move(values[i]));
    }
    return out;
}

ParamTable ParamTable::clone() const
{
    ParamTable out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        out.add(names_[i], values_[i].detach().clone());
    }
    return out;
}

ParamTable ParamTable::slice(std::string_view prefix) const
{
    ParamTable out;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (std::string_view(names_[i]).substr(0, prefix.size()) == prefix) {
            out.add(names_[i], values_[i]);
        }
    }
    return out;
}

void ParamTable::merge(const ParamTable& other)
{
    for (std::size_t i = 0; i < other.size(); ++i) {
        add(other.names_[i], other.values_[i]);
    }
}

void ParamTable::set_requires_grad(bool flag)
{
    for (auto& v : values_) v.set_requires_grad(flag);
}

void ParamTable::to(torch::ScalarType dtype)
{
    for (auto& v : values_) {
        const bool grad = v.requires_grad();
        v = v.detach().to(dtype).set_requires_grad(grad);
    }
}

void ParamTable::assign_from(const ParamTable& other)
{
    torch::NoGradGuard guard;
    for (std::size_t i = 0; i < other.size(); ++i) {
        at(other.names_[i]).copy_(other.values_[i]);
    }
}

bool ParamTable::bit_equal(const ParamTable& other) const
{
    if (names_ != other.names_) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        const auto& a = values_[i];
        const auto& b = other.values_[i];
        if (!a.sizes().equals(b.sizes()) || a.scalar_type() != b.scalar_type()) return false;
        if (!torch::equal(a.detach(), b.detach())) return false;
    }
    return true;
}

at::Generator make_generator(uint64_t seed)
{
    return at::make_generator<at::CPUGeneratorImpl>(seed);
}

void Conv2d::init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype) const
{
    const double fan_in = static_cast<double>(in_channels * kernel * kernel);
    const double bound = std::sqrt(6.0 / fan_in);
    auto w = at::rand({out_channels, in_channels, kernel, kernel}, gen, torch::TensorOptions().dtype(torch::kFloat64));
    w = (w * 2.0 - 1.0) * bound;
    table.add(name + ".weight", w.to(dtype));
    table.add(name + ".bias", torch::zeros({out_channels}, torch::TensorOptions().dtype(dtype)));
}

void Conv2d::init_zero(ParamTable& table, double bias, torch::ScalarType dtype) const
{
    auto opts = torch::TensorOptions().dtype(dtype);
    table.add(name + ".weight", torch::zeros({out_channels, in_channels, kernel, kernel}, opts));
    table.add(name + ".bias", torch::full({out_channels}, bias, opts));
}

torch::Tensor Conv2d::operator()(const torch::Tensor& x, const ParamTable& table) const
{
    if (x.dim() != 4 || x.size(1) != in_channels) {
        throw std::invalid_argument(name + ": expected " + std::to_string(in_channels) + " input channels, got " +
                                    (x.dim() == 4 ? std::to_string(x.size(1)) : std::string("non-4D tensor")));
    }
    return torch::conv2d(x, table.at(name + ".weight"), table.at(name + ".bias"), stride, padding());
}

}  // namespace hupe
