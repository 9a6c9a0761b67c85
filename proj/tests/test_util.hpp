#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <torch/torch.h>

namespace hupe::testing {

inline constexpr auto kF64 = torch::kFloat64;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("hupe-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

/// Direct O(N^2) unnormalized DFT of an H x W real grid (row-major), no FFT.
inline std::vector<std::complex<double>> naive_dft2(const std::vector<double>& x, int64_t h, int64_t w)
{
    std::vector<std::complex<double>> out(static_cast<std::size_t>(h * w));
    const double two_pi = 2.0 * std::acos(-1.0);
    for (int64_t u = 0; u < h; ++u) {
        for (int64_t v = 0; v < w; ++v) {
            std::complex<double> acc = 0.0;
            for (int64_t m = 0; m < h; ++m) {
                for (int64_t n = 0; n < w; ++n) {
                    const double angle = -two_pi * (static_cast<double>(u * m) / h + static_cast<double>(v * n) / w);
                    acc += x[static_cast<std::size_t>(m * w + n)] * std::polar(1.0, angle);
                }
            }
            out[static_cast<std::size_t>(u * w + v)] = acc;
        }
    }
    return out;
}

/// Max relative error between autograd and a central difference of the
/// scalar `f` at `x`, over at most `max_coords` coordinates. Written
/// separately from the library's check so the two routes stay independent.
inline double fd_relative_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                                double h = 1e-6, int64_t max_coords = 64)
{
    auto leaf = x.detach().to(kF64).clone().requires_grad_(true);
    const auto analytic = torch::autograd::grad({f(leaf)}, {leaf})[0].detach().flatten();
    torch::NoGradGuard guard;
    const int64_t n = leaf.numel();
    const int64_t stride = std::max<int64_t>(1, n / max_coords);
    auto probe = leaf.detach().clone(at::MemoryFormat::Contiguous);
    auto flat = probe.view({-1});
    double num = 0.0, den_a = 0.0, den_n = 0.0;
    for (int64_t i = 0; i < n; i += stride) {
        const double keep = flat[i].item<double>();
        flat[i] = keep + h;
        const double fp = f(probe).item<double>();
        flat[i] = keep - h;
        const double fm = f(probe).item<double>();
        flat[i] = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double ad = analytic[i].item<double>();
        num += (fd - ad) * (fd - ad);
        den_a += ad * ad;
        den_n += fd * fd;
    }
    return std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_n), 1e-12});
}

inline double max_abs(const torch::Tensor& a, const torch::Tensor& b)
{
    return (a.to(kF64) - b.to(kF64)).abs().max().item<double>();
}

}  // namespace hupe::testing
