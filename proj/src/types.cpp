#include "hupe/types.hpp"

#include <sstream>
#include <stdexcept>

namespace hupe {

std::string shape_string(const torch::Tensor& x)
{
    std::ostringstream os;
    os << '[';
    for (int64_t i = 0; i < x.dim(); ++i) {
        if (i) os << 'x';
        os << x.size(i);
    }
    os << ']';
    return os.str();
}

void require_image_tensor(const torch::Tensor& x, const std::string& what)
{
    if (!x.defined() || x.dim() != 4) {
        throw std::invalid_argument(what + ": expected an N x C x H x W tensor, got " +
                                    (x.defined() ? shape_string(x) : std::string("undefined")));
    }
    if (!torch::isfinite(x.detach()).all().item<bool>()) {
        throw std::invalid_argument(what + ": tensor contains NaN or Inf");
    }
}

void require_pow2_spatial(const torch::Tensor& x, const std::string& what)
{
    if (x.dim() < 2 || !is_power_of_two(x.size(-1)) || !is_power_of_two(x.size(-2))) {
        throw std::invalid_argument(what + ": spatial dims must be powers of 2, got " + shape_string(x));
    }
}

}  // namespace hupe
