#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hupe/data.hpp"
#include "hupe/enhancer.hpp"
#include "hupe/losses.hpp"
#include "hupe/optim.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// Task head
// ---------------------------------------------------------------------------

enum class TaskKind { Detect, Segment };

TaskKind parse_task_kind(const std::string& name);
std::string to_string(TaskKind kind);

struct TaskHeadConfig {
    TaskKind kind = TaskKind::Detect;
    int64_t image_channels = 3;
    std::array<int64_t, 3> widths{16, 32, 64};
    int64_t num_classes = 3;  ///< segmentation classes including background

    nlohmann::json to_json() const;
    static TaskHeadConfig from_json(const nlohmann::json& j);
};

/// Minimal stand-in perception network. Three stride-2 stages (conv s2 +
/// conv s1, ReLU) expose the task features F_T at 1/2, 1/4 and 1/8
/// resolution. The detection variant predicts per-cell objectness and box
/// distances on the 1/8 grid; the segmentation variant sums 1x1 class scores
/// from every stage, upsampled to full resolution.
class TaskHead {
public:
    struct Output {
        std::vector<torch::Tensor> taps;  ///< shallow to deep
        DetectionOutput detection;
        torch::Tensor segmentation;  ///< N x K x H x W logits
    };

    TaskHead() = default;
    TaskHead(TaskHeadConfig config, uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

    const TaskHeadConfig& config() const { return config_; }
    ParamTable& params() { return params_; }
    const ParamTable& params() const { return params_; }

    Output forward(const ImageTensor& image, const ParamTable& table) const;
    Output forward(const ImageTensor& image) const { return forward(image, params_); }
    /// Backbone features only.
    std::vector<torch::Tensor> features(const ImageTensor& image, const ParamTable& table) const;

    /// L_t for the configured task.
    torch::Tensor loss(const Output& out, const Batch& batch) const;

    std::vector<int64_t> tap_channels() const;

    Checkpoint to_checkpoint() const;
    static TaskHead from_checkpoint(const Checkpoint& ckpt);

private:
    TaskHeadConfig config_;
    std::vector<Conv2d> backbone_;
    std::vector<Conv2d> heads_;
    ParamTable params_;
};

// ---------------------------------------------------------------------------
// Meta-feature generator and feature transition block
// ---------------------------------------------------------------------------

/// Output channels of each 3x3 conv (+ ReLU) row.
inline constexpr std::array<int64_t, 4> kMfgTaskChannels{512, 256, 256, 256};
inline constexpr std::array<int64_t, 2> kMfgEnhancerChannels{128, 256};
inline constexpr std::array<int64_t, 6> kMfgTrunkChannels{64, 128, 192, 256, 320, 256};
inline constexpr std::array<int64_t, 3> kFtbChannels{128, 256, 256};
/// The trunk consumes [enhancer z2, task z4].
inline constexpr int64_t kMfgTrunkInput = kMfgEnhancerChannels.back() + kMfgTaskChannels.back();
inline constexpr int64_t kGuideChannels = 256;

static_assert(kMfgTrunkInput == 512);
static_assert(kMfgTrunkChannels.back() == kGuideChannels && kFtbChannels.back() == kGuideChannels);

/// Per-tap input widths. Each tap gets its own 1x1 stem that maps the raw
/// enhancer or task features to `stem_width`; the 3x3 layers are shared by
/// all taps.
struct GuideConfig {
    std::vector<int64_t> enhancer_channels;
    std::vector<int64_t> task_channels;
    int64_t stem_width = 64;

    std::size_t taps() const { return enhancer_channels.size(); }
    nlohmann::json to_json() const;
    static GuideConfig from_json(const nlohmann::json& j);
};

enum class MfgBranch { Task, Enhancer, Trunk };

class MetaFeatureGenerator {
public:
    MetaFeatureGenerator() = default;
    MetaFeatureGenerator(GuideConfig config, uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

    ParamTable& params() { return params_; }
    const ParamTable& params() const { return params_; }
    const GuideConfig& config() const { return config_; }

    /// F_MFG for tap `tap`; `task` must already share `enhancer`'s spatial size.
    torch::Tensor forward(const torch::Tensor& task, const torch::Tensor& enhancer, std::size_t tap,
                          const ParamTable& table) const;

    /// Output channels of every 3x3 layer of a branch, read from the weights.
    std::vector<int64_t> layer_channels(MfgBranch branch, const ParamTable& table) const;
    std::vector<int64_t> layer_channels(MfgBranch branch) const { return layer_channels(branch, params_); }

    Checkpoint to_checkpoint() const;
    static MetaFeatureGenerator from_checkpoint(const Checkpoint& ckpt);

private:
    GuideConfig config_;
    std::vector<Conv2d> task_stems_, enhancer_stems_;
    std::vector<Conv2d> task_, enhancer_, trunk_;
    ParamTable params_;
};

class FeatureTransitionBlock {
public:
    FeatureTransitionBlock() = default;
    FeatureTransitionBlock(GuideConfig config, uint64_t seed, torch::ScalarType dtype = torch::kFloat32);

    ParamTable& params() { return params_; }
    const ParamTable& params() const { return params_; }

    torch::Tensor forward(const torch::Tensor& enhancer, std::size_t tap, const ParamTable& table) const;

    std::vector<int64_t> layer_channels(const ParamTable& table) const;
    std::vector<int64_t> layer_channels() const { return layer_channels(params_); }

    Checkpoint to_checkpoint() const;
    static FeatureTransitionBlock from_checkpoint(const Checkpoint& ckpt);

private:
    GuideConfig config_;
    std::vector<Conv2d> stems_;
    std::vector<Conv2d> layers_;
    ParamTable params_;
};

// ---------------------------------------------------------------------------
// Feature tapping
// ---------------------------------------------------------------------------

struct FeatureBundle {
    ImageTensor enhanced;
    std::vector<torch::Tensor> enhancer;  ///< F_E, one per HIB exit
    std::vector<torch::Tensor> task;      ///< F_T paired with F_E and resized to it
    std::vector<torch::Tensor> mfg;       ///< F_MFG
    std::vector<torch::Tensor> ftb;       ///< F_FTB
};

/// For each enhancer tap, the index of the task tap with the closest
/// spatial size.
std::vector<std::size_t> pair_taps(const std::vector<torch::Tensor>& enhancer, const std::vector<torch::Tensor>& task);

// ---------------------------------------------------------------------------
// Semantic collaborative learning
// ---------------------------------------------------------------------------

struct SclOptions {
    EnhancementLossOptions enhancement;  ///< lambda_1..lambda_3, plus lambda_4 for the outer stage
    AdamOptions hin_adam{1e-5};
    AdamOptions meta_adam{1e-5};
    SgdOptions task_sgd{1e-2, 0.9, 1e-4};
    double inner_lr = 1e-5;  ///< SGD step size of inner stage (a)
};

struct InnerResult {
    double guide = 0.0;        ///< L_g before stage (a)
    double enhancement = 0.0;  ///< L_e through the stage-(a)-updated HIN
};

struct OuterResult {
    double enhancement = 0.0;
    double guide = 0.0;
    double total = 0.0;
};

/// All models and optimizer state of the collaborative stage. The HIN, task
/// head, MFG and FTB are held by value; their tables are the leaves the
/// optimizers update in place.
class SclState {
public:
    SclState(Enhancer hin, TaskHead head, SclOptions options, const PerceptualExtractor& extractor, uint64_t seed);

    Enhancer& hin() { return hin_; }
    const Enhancer& hin() const { return hin_; }
    TaskHead& head() { return head_; }
    MetaFeatureGenerator& mfg() { return mfg_; }
    const MetaFeatureGenerator& mfg() const { return mfg_; }
    FeatureTransitionBlock& ftb() { return ftb_; }
    const FeatureTransitionBlock& ftb() const { return ftb_; }
    const SclOptions& options() const { return options_; }

    ParamTable hin_params() const { return hin_.parameters(); }
    /// MFG then FTB.
    ParamTable meta_params() const;

    bool hin_pretrained = false;
    bool task_pretrained = false;

    /// One Adam step of the HIN on L_e (initializes actnorm on first use).
    EnhancementTerms pretrain_hin_step(const Batch& batch);
    /// One SGD step of the task head on L_t, fed the detached HIN output.
    double pretrain_task_step(const Batch& batch);

    /// (a) one SGD step (inner_lr) of the HIN on L_g with MFG/FTB frozen;
    /// (b) one Adam step of MFG+FTB on L_e evaluated at the updated HIN
    /// parameters, differentiated through step (a); the HIN is frozen.
    InnerResult inner_update(const Batch& batch);
    /// One Adam step of the HIN on L_e + lambda_4 L_g; MFG/FTB/task head frozen.
    OuterResult outer_update(const Batch& batch);

    /// F_E, F_T, F_MFG and F_FTB for `batch` under the given HIN table.
    FeatureBundle features(const Batch& batch, const ParamTable* hin_table = nullptr) const;
    torch::Tensor guide(const FeatureBundle& bundle) const { return guide_loss(bundle.mfg, bundle.ftb); }
    /// L_g without gradient tracking.
    double guide_value(const Batch& batch) const;

    /// Writes hin/taskhead/mfg/ftb checkpoints, optimizer states and a
    /// state.json into `dir`.
    void save(const std::filesystem::path& dir, const nlohmann::json& progress) const;
    /// Restores everything written by `save`; returns the saved progress.
    nlohmann::json load(const std::filesystem::path& dir);

private:
    void require_pretrained(const char* stage) const;

    Enhancer hin_;
    TaskHead head_;
    MetaFeatureGenerator mfg_;
    FeatureTransitionBlock ftb_;
    SclOptions options_;
    PerceptualExtractor extractor_;
    std::unique_ptr<Adam> hin_opt_;
    std::unique_ptr<Adam> meta_opt_;
    std::unique_ptr<Sgd> task_opt_;
};

// ---------------------------------------------------------------------------
// Full schedule
// ---------------------------------------------------------------------------

struct TrainSchedule {
    int hin_epochs = 100;      ///< L_e pretraining of the HIN
    int task_epochs = 10;      ///< L_t pretraining of the task head
    int joint_epochs = 20;     ///< alternating inner/outer stages
    int64_t batch_size = 1;
    int64_t crop = 512;        ///< 0 or >= image size: no crop
    int cadence = 1;           ///< inner updates per outer update
    uint64_t seed = 0;
};

struct TrainLogEntry {
    std::string phase;
    int epoch = 0;
    int64_t step = 0;
    nlohmann::json losses;
};

/// Pretrains the HIN and task head (skipped when `state` already has the
/// flags set), then alternates inner and outer updates for the joint
/// epochs. Writes `out_dir/<phase>-epoch<k>/` after every epoch and
/// `out_dir/final/` at the end. Batch order and crops of each epoch are
/// drawn from a generator seeded by (seed, phase, epoch), so a run resumed
/// from an epoch checkpoint replays the remaining steps exactly.
void collaborative_train(SclState& state, const PairedDataset& data, const TrainSchedule& schedule,
                         const std::filesystem::path& out_dir,
                         const std::function<void(const TrainLogEntry&)>& log = {},
                         const std::optional<std::filesystem::path>& resume_from = std::nullopt);

/// Batches of one epoch in the order the schedule uses.
std::vector<Batch> epoch_batches(const PairedDataset& data, const TrainSchedule& schedule, const std::string& phase,
                                 int epoch, torch::ScalarType dtype = torch::kFloat32);

}  // namespace hupe
