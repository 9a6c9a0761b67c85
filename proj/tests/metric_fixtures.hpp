#pragma once

#include <torch/torch.h>

namespace hupe::testing {

/// The three 32 x 32 images of tests/reference/uiqm_reference.py, 1 x 3 x H x W.
inline torch::Tensor uiqm_fixture(int index, int64_t size = 32)
{
    auto x = torch::arange(size, torch::kFloat64).view({1, size}).expand({size, size});
    auto y = torch::arange(size, torch::kFloat64).view({size, 1}).expand({size, size});
    const auto mod = [](const torch::Tensor& t) { return torch::remainder(t, 256.0); };
    torch::Tensor r, g, b;
    if (index == 0) {
        r = mod(3 * x + 5 * y);
        g = mod(7 * x + 2 * y + 40);
        b = mod(x * y + 11);
    } else if (index == 1) {
        r = 20 + 4 * x;
        g = 60 + 3 * y;
        b = 200 - 2 * x - 2 * y;
    } else {
        const auto checker = torch::remainder(torch::floor(x / 4) + torch::floor(y / 4), 2.0) * 150;
        r = 30 + checker;
        g = mod(50 + checker + 5 * x);
        b = mod(90 + torch::remainder(x * 13 + y * 29, 97.0));
    }
    return torch::stack({r, g, b}).unsqueeze(0) / 255.0;
}

struct UiqmReference {
    double uicm, uism, uiconm, uiqm;
};

/// Output of `python3 tests/reference/uiqm_reference.py`.
inline constexpr UiqmReference kUiqmReference[3] = {
    {17.227959231433587, 2.0818690023796926, 0.061219078480202874, 1.3194809380194197},
    {9.34495215321751, 1.1508888531049812, 0.3073019986060963, 1.7020819646590106},
    {18.26086005323621, 6.1072049934387, 0.1623337177268867, 2.898805629052647},
};

}  // namespace hupe::testing
