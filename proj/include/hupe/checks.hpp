#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "hupe/enhancer.hpp"

namespace hupe {

/// Property suites behind `hupe check`.
struct CheckResult {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string detail;
};

struct CheckOptions {
    uint64_t seed = 0;
    int trials = 10;  ///< random models in the invertibility suite
    std::optional<std::filesystem::path> checkpoint;
};

inline const std::vector<std::string> kCheckSuites{"invertibility", "gradients", "spectral", "losses"};

/// Throws std::invalid_argument for an unknown suite.
std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options);

/// Prints one row per check; returns true when all passed.
bool print_check_table(std::ostream& out, const std::string& suite, const std::vector<CheckResult>& results);

/// Relative error ||g - g_fd|| / max(||g||, ||g_fd||, 1e-12) between the
/// autograd gradient of the scalar f at x and a central difference with step h,
/// over at most `max_coords` evenly spaced coordinates of x.
double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                      double h = 1e-6, int64_t max_coords = 256);

/// Small random perturbation of the prior encoder heads so that T and B
/// depend on the input (they are constant at initialization). The default
/// keeps T roughly within [0.8, 1.3] on [0,1] images.
void randomize_encoder_heads(Enhancer& model, uint64_t seed, double scale = 0.002);

}  // namespace hupe
