#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hupe/losses.hpp"
#include "hupe/prior.hpp"
#include "hupe/types.hpp"

namespace hupe {

// ---------------------------------------------------------------------------
// Image and label files
// ---------------------------------------------------------------------------

/// PNG/JPEG files directly inside `dir`, sorted by file name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Decodes an 8- or 16-bit gray, RGB or RGBA file into a 1 x 3 x H x W
/// float32 tensor in [0,1]. Throws naming the path on failure.
ImageTensor read_image(const std::filesystem::path& path);
/// Writes a 1 x C x H x W (C = 1 or 3) or C x H x W tensor in [0,1] as PNG.
void write_image(const std::filesystem::path& path, const ImageTensor& image, int bit_depth = 8);

/// Index-map mask (8-bit single-channel PNG) as an H x W int64 tensor.
torch::Tensor read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// Detection and segmentation labels of one image. Box files are JSON
/// `{"boxes": [[x1, y1, x2, y2, class], ...]}` in pixels; masks are PNG
/// index maps.
struct Labels {
    std::vector<Box> boxes;
    torch::Tensor mask;  ///< H x W int64, undefined when absent
};

Labels read_labels(const std::filesystem::path& dir, const std::string& stem);
void write_labels(const std::filesystem::path& dir, const std::string& stem, const Labels& labels);

// ---------------------------------------------------------------------------
// Resizing and cropping
// ---------------------------------------------------------------------------

enum class ResizePolicy {
    Pow2_512,  ///< bicubic to 512 x 512
    Desk,      ///< bicubic to 64 x 64
    None,      ///< keep size; dims must already be powers of two
};

ResizePolicy parse_resize_policy(const std::string& name);
std::string to_string(ResizePolicy policy);

/// Resizes per policy (bicubic, then clamped to [0,1]). Throws for `None`
/// when the input is not power-of-two sized.
ImageTensor resize_image(const ImageTensor& image, ResizePolicy policy, const std::string& what = "image");
/// Scales boxes and resizes the mask (nearest) from `from_h x from_w` to `to_h x to_w`.
Labels resize_labels(const Labels& labels, int64_t from_h, int64_t from_w, int64_t to_h, int64_t to_w);

struct CropWindow {
    int64_t top = 0;
    int64_t left = 0;
    int64_t size = 0;
};

/// Window uniform over all valid positions of a `size` x `size` crop.
CropWindow draw_crop(int64_t height, int64_t width, int64_t size, at::Generator& gen);

/// The same random window applied to both images.
std::pair<ImageTensor, ImageTensor> random_crop_pair(const ImageTensor& degraded, const ImageTensor& reference,
                                                     int64_t size, at::Generator& gen);

// ---------------------------------------------------------------------------
// Paired dataset
// ---------------------------------------------------------------------------

struct Sample {
    std::string stem;
    ImageTensor degraded;   ///< 1 x 3 x H x W
    ImageTensor reference;  ///< 1 x 3 x H x W
    Labels labels;
};

/// Crops images, shifts and clips boxes (dropping empty ones) and crops the mask.
Sample crop_sample(const Sample& sample, const CropWindow& window);

/// Degraded/reference pairs matched by file stem.
class PairedDataset {
public:
    /// Throws if either directory is missing or empty, or if the stems of the
    /// two directories differ. `labels_dir`, when given, must hold a
    /// `<stem>.json` or `<stem>.png` for every stem.
    static PairedDataset from_dirs(const std::filesystem::path& degraded_dir, const std::filesystem::path& reference_dir,
                                   ResizePolicy policy = ResizePolicy::Pow2_512,
                                   std::optional<std::filesystem::path> labels_dir = std::nullopt);

    std::size_t size() const { return degraded_.size(); }
    ResizePolicy policy() const { return policy_; }
    bool has_labels() const { return labels_dir_.has_value(); }
    const std::filesystem::path& degraded_path(std::size_t i) const { return degraded_.at(i); }
    const std::filesystem::path& reference_path(std::size_t i) const { return reference_.at(i); }

    /// Decodes and resizes pair `index` (and its labels). Deterministic.
    Sample load_pair(std::size_t index) const;

private:
    std::vector<std::filesystem::path> degraded_;
    std::vector<std::filesystem::path> reference_;
    ResizePolicy policy_ = ResizePolicy::Pow2_512;
    std::optional<std::filesystem::path> labels_dir_;
};

struct Batch {
    ImageTensor degraded;                 ///< N x 3 x H x W
    ImageTensor reference;                ///< N x 3 x H x W
    std::vector<std::vector<Box>> boxes;  ///< per image
    torch::Tensor mask;                   ///< N x H x W int64, undefined unless every sample has one

    int64_t size() const { return degraded.size(0); }
    Batch to(torch::ScalarType dtype) const;
};

Batch collate(const std::vector<Sample>& samples);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

enum class DepthSource { Ramp, DarkChannel };

struct SynthOptions {
    double beta_min = 0.5;
    double beta_max = 2.0;
    double light_min = 0.1;  ///< per-channel ambient light range
    double light_max = 0.9;
    uint64_t seed = 0;
    DepthSource depth = DepthSource::Ramp;
    TransmissionSign sign = TransmissionSign::Negative;
    ResizePolicy policy = ResizePolicy::None;
};

/// Vertical depth ramp, 0 at the top row and 1 at the bottom.
torch::Tensor ramp_depth(int64_t height, int64_t width);

/// For every clean image: samples beta and per-channel B, builds t from the
/// depth proxy and writes
///   out/clean/<stem>.png         the (resized) clean image, 16-bit
///   out/degraded/<stem>.png      physical_apply(degrade), 16-bit
///   out/transmission/<stem>.png  t, 16-bit (the degradation uses this quantized t)
///   out/params/<stem>.json       beta, B, seed, depth source, t statistics
///   out/manifest.json            all of the above
/// Returns the manifest. Throws if `clean_dir` holds no images.
nlohmann::json synth_degrade_dataset(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                                     const SynthOptions& options);

/// Recorded degradation of one synthesized image.
struct SynthRecord {
    PhysicalParams params;  ///< t: 1 x 1 x H x W, B: 1 x 3 x 1 x 1
    double beta = 0.0;
};

SynthRecord read_synth_record(const std::filesystem::path& out_dir, const std::string& stem);

struct SceneOptions {
    int count = 8;
    int64_t size = 64;
    int max_objects = 3;
    int num_classes = 2;  ///< object classes; mask index 0 is background
    uint64_t seed = 0;
};

/// Writes `count` toy scenes (smooth background plus filled rectangles and
/// ellipses) to out/<stem>.png with boxes and an index mask in
/// labels_dir/<stem>.json and labels_dir/<stem>.png.
void generate_toy_scenes(const std::filesystem::path& out_dir, const std::filesystem::path& labels_dir,
                         const SceneOptions& options);

}  // namespace hupe
