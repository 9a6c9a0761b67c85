#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "hupe/data.hpp"
#include "hupe/enhancer.hpp"
#include "hupe/losses.hpp"
#include "hupe/scl.hpp"

namespace hupe {

inline constexpr const char* kConfigVersion = "hupe-config-v1";

/// Thrown for schema violations; the message names the offending key.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Clean images to degrade with `synth` before training.
struct SynthesizeSection {
    std::filesystem::path clean_dir;
    std::filesystem::path labels_dir;  ///< optional labels of the clean images
    double beta_min = 0.5;
    double beta_max = 2.0;
    double light_min = 0.1;
    double light_max = 0.9;
    uint64_t seed = 0;
};

/// Training configuration. JSON keys match the field names; relative paths
/// are resolved against the config file's directory.
struct TrainConfig {
    // Model
    int n_hibs = 3;
    int flow_steps = 6;
    int64_t sfa_width = 0;
    InjectionMode injection = InjectionMode::PerStep;
    bool use_amplitude = true;
    bool use_phase = true;
    bool hpe_rgb = true, hpe_gradient = true, hpe_depth = true;
    ActnormInit actnorm_init = ActnormInit::Data;
    InvConvInit invconv_init = InvConvInit::Orthogonal;

    // Optimization
    int64_t crop = 512;
    double lr = 1e-5;
    double inner_lr = -1.0;  ///< < 0: same as lr
    double meta_lr = -1.0;   ///< < 0: same as lr
    int64_t batch = 1;
    int epochs = 100;
    int task_epochs = 10;
    int joint_epochs = 20;
    int cadence = 1;
    std::array<double, 4> lambdas{1.0, 0.05, 1.0, 0.2};
    BilateralNorm bilateral_norm = BilateralNorm::L2;
    std::string perceptual_backend = "auto";
    std::filesystem::path perceptual_weights;

    // Task
    TaskKind task = TaskKind::Detect;
    double task_lr = -1.0;            ///< < 0: 1e-2 (detect) or 1e-3 (segment)
    double task_weight_decay = -1.0;  ///< < 0: 1e-4 (detect) or 5e-4 (segment)
    int64_t num_classes = 3;

    // Data
    std::filesystem::path train_degraded;
    std::filesystem::path train_reference;
    std::filesystem::path train_labels;
    ResizePolicy resize = ResizePolicy::Pow2_512;
    TransmissionSign transmission_sign = TransmissionSign::Negative;
    std::optional<SynthesizeSection> synthesize;

    // Run
    std::filesystem::path output_dir = "runs/default";
    uint64_t seed = 0;

    EnhancerConfig enhancer() const;
    TaskHeadConfig task_head() const;
    SclOptions scl_options() const;
    TrainSchedule schedule() const;
};

/// Validates `j` against the schema: `version` must be hupe-config-v1,
/// unknown keys are rejected and data keys are required unless a
/// `synthesize` section is present.
TrainConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
TrainConfig load_config(const std::filesystem::path& path);

}  // namespace hupe
