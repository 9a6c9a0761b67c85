#include "hupe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace hupe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_image_file(const fs::path& p)
{
    auto ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

cv::Mat imread_or_throw(const fs::path& path)
{
    if (!fs::exists(path)) throw std::runtime_error("missing file: " + path.string());
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot decode image: " + path.string());
    return m;
}

double depth_scale(const cv::Mat& m, const fs::path& path)
{
    switch (m.depth()) {
    case CV_8U: return 1.0 / 255.0;
    case CV_16U: return 1.0 / 65535.0;
    default: throw std::runtime_error("unsupported bit depth in " + path.string());
    }
}

/// H x W x C float mat -> 1 x C x H x W tensor.
torch::Tensor mat_to_tensor(const cv::Mat& m)
{
    cv::Mat f = m.isContinuous() ? m : m.clone();
    const int c = f.channels();
    auto t = torch::from_blob(f.data, {f.rows, f.cols, c}, torch::kFloat32).clone();
    return t.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

void write_json(const fs::path& path, const json& j)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed JSON in " + path.string() + ": " + e.what());
    }
}

/// Single-channel 8/16-bit PNG as 1 x 1 x H x W float64 in [0,1].
torch::Tensor read_gray(const fs::path& path)
{
    const cv::Mat m = imread_or_throw(path);
    if (m.channels() != 1) throw std::runtime_error("expected a single-channel image: " + path.string());
    cv::Mat f;
    m.convertTo(f, CV_32F, depth_scale(m, path));
    return mat_to_tensor(f).to(torch::kFloat64);
}

uint64_t mix_seed(uint64_t seed, uint64_t index)
{
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Portable uniform doubles from a 64-bit Mersenne twister.
class Uniform {
public:
    explicit Uniform(uint64_t seed) : rng_(seed) {}
    double operator()(double lo = 0.0, double hi = 1.0)
    {
        const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        return lo + (hi - lo) * u;
    }
    int integer(int lo, int hi) { return std::min(hi, lo + static_cast<int>((*this)() * (hi - lo + 1))); }

private:
    std::mt19937_64 rng_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Image and label files
// ---------------------------------------------------------------------------

std::vector<fs::path> list_images(const fs::path& dir)
{
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
        return a.filename().string() < b.filename().string();
    });
    return out;
}

ImageTensor read_image(const fs::path& path)
{
    const cv::Mat m = imread_or_throw(path);
    cv::Mat rgb;
    switch (m.channels()) {
    case 1: cv::cvtColor(m, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(m, rgb, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(m, rgb, cv::COLOR_BGRA2RGB); break;
    default: throw std::runtime_error("unsupported channel count in " + path.string());
    }
    cv::Mat f;
    rgb.convertTo(f, CV_32F, depth_scale(m, path));
    return mat_to_tensor(f);
}

void write_image(const fs::path& path, const ImageTensor& image, int bit_depth)
{
    if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
    auto x = image.detach().to(torch::kFloat64);
    if (x.dim() == 4) {
        if (x.size(0) != 1) throw std::invalid_argument("write_image: expected a single image, got " + shape_string(x));
        x = x[0];
    }
    if (x.dim() != 3 || (x.size(0) != 1 && x.size(0) != 3)) {
        throw std::invalid_argument("write_image: expected 1 or 3 channels, got " + shape_string(x));
    }
    const double max = bit_depth == 8 ? 255.0 : 65535.0;
    const auto q = (x.clamp(0.0, 1.0) * max).round().permute({1, 2, 0}).contiguous();
    const int channels = static_cast<int>(q.size(2));
    const int rows = static_cast<int>(q.size(0)), cols = static_cast<int>(q.size(1));
    cv::Mat mat;
    if (bit_depth == 8) {
        auto u = q.to(torch::kUInt8).contiguous();
        mat = cv::Mat(rows, cols, CV_8UC(channels), u.data_ptr()).clone();
    } else {
        auto u = q.to(torch::kInt32).contiguous();
        cv::Mat wide(rows, cols, CV_32SC(channels), u.data_ptr());
        wide.convertTo(mat, CV_16U);
    }
    if (channels == 3) cv::cvtColor(mat, mat, cv::COLOR_RGB2BGR);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("cannot write image: " + path.string());
}

torch::Tensor read_mask(const fs::path& path)
{
    const cv::Mat m = imread_or_throw(path);
    if (m.channels() != 1) throw std::runtime_error("mask must be single-channel: " + path.string());
    cv::Mat wide;
    m.convertTo(wide, CV_32S);
    return torch::from_blob(wide.data, {wide.rows, wide.cols}, torch::kInt32).to(torch::kLong).clone();
}

void write_mask(const fs::path& path, const torch::Tensor& mask)
{
    if (mask.dim() != 2) throw std::invalid_argument("write_mask: expected H x W, got " + shape_string(mask));
    if (mask.min().item<int64_t>() < 0 || mask.max().item<int64_t>() > 255) {
        throw std::invalid_argument("write_mask: class indices must lie in [0,255]");
    }
    auto u = mask.to(torch::kUInt8).contiguous();
    cv::Mat mat(static_cast<int>(u.size(0)), static_cast<int>(u.size(1)), CV_8UC1, u.data_ptr());
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("cannot write mask: " + path.string());
}

Labels read_labels(const fs::path& dir, const std::string& stem)
{
    Labels labels;
    const auto box_path = dir / (stem + ".json");
    const auto mask_path = dir / (stem + ".png");
    if (!fs::exists(box_path) && !fs::exists(mask_path)) {
        throw std::runtime_error("no labels for '" + stem + "' in " + dir.string());
    }
    if (fs::exists(box_path)) {
        const json j = read_json(box_path);
        for (const auto& b : j.at("boxes")) {
            if (b.size() != 5) throw std::runtime_error("box entries must be [x1,y1,x2,y2,class] in " + box_path.string());
            labels.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
                                    b[4].get<int>()});
        }
    }
    if (fs::exists(mask_path)) labels.mask = read_mask(mask_path);
    return labels;
}

void write_labels(const fs::path& dir, const std::string& stem, const Labels& labels)
{
    json boxes = json::array();
    for (const auto& b : labels.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.cls});
    write_json(dir / (stem + ".json"), {{"boxes", boxes}});
    if (labels.mask.defined()) write_mask(dir / (stem + ".png"), labels.mask);
}

// ---------------------------------------------------------------------------
// Resizing and cropping
// ---------------------------------------------------------------------------

ResizePolicy parse_resize_policy(const std::string& name)
{
    if (name == "pow2-512") return ResizePolicy::Pow2_512;
    if (name == "desk") return ResizePolicy::Desk;
    if (name == "none") return ResizePolicy::None;
    throw std::invalid_argument("unknown resize policy '" + name + "' (pow2-512 | desk | none)");
}

std::string to_string(ResizePolicy policy)
{
    switch (policy) {
    case ResizePolicy::Pow2_512: return "pow2-512";
    case ResizePolicy::Desk: return "desk";
    case ResizePolicy::None: return "none";
    }
    return "none";
}

ImageTensor resize_image(const ImageTensor& image, ResizePolicy policy, const std::string& what)
{
    if (policy == ResizePolicy::None) {
        require_pow2_spatial(image, what);
        return image;
    }
    const int64_t side = policy == ResizePolicy::Desk ? 64 : 512;
    if (image.size(2) == side && image.size(3) == side) return image;
    return torch::upsample_bicubic2d(image, {side, side}, /*align_corners=*/false).clamp(0.0, 1.0);
}

Labels resize_labels(const Labels& labels, int64_t from_h, int64_t from_w, int64_t to_h, int64_t to_w)
{
    if (from_h == to_h && from_w == to_w) return labels;
    Labels out;
    const double sx = static_cast<double>(to_w) / from_w, sy = static_cast<double>(to_h) / from_h;
    for (const auto& b : labels.boxes) out.boxes.push_back({b.x1 * sx, b.y1 * sy, b.x2 * sx, b.y2 * sy, b.cls});
    if (labels.mask.defined()) {
        const auto m = labels.mask.to(torch::kFloat32).view({1, 1, from_h, from_w});
        out.mask = torch::upsample_nearest2d(m, {to_h, to_w}).view({to_h, to_w}).round().to(torch::kLong);
    }
    return out;
}

CropWindow draw_crop(int64_t height, int64_t width, int64_t size, at::Generator& gen)
{
    if (size <= 0 || size > height || size > width) {
        throw std::invalid_argument("crop size " + std::to_string(size) + " does not fit a " + std::to_string(height) +
                                    "x" + std::to_string(width) + " image");
    }
    const auto top = torch::randint(height - size + 1, {1}, gen, torch::kLong).item<int64_t>();
    const auto left = torch::randint(width - size + 1, {1}, gen, torch::kLong).item<int64_t>();
    return {top, left, size};
}

namespace {

ImageTensor crop(const ImageTensor& x, const CropWindow& w)
{
    using torch::indexing::Slice;
    return x.index({Slice(), Slice(), Slice(w.top, w.top + w.size), Slice(w.left, w.left + w.size)});
}

}  // namespace

std::pair<ImageTensor, ImageTensor> random_crop_pair(const ImageTensor& degraded, const ImageTensor& reference,
                                                     int64_t size, at::Generator& gen)
{
    if (!degraded.sizes().equals(reference.sizes())) {
        throw std::invalid_argument("random_crop_pair: shape mismatch " + shape_string(degraded) + " vs " +
                                    shape_string(reference));
    }
    const auto w = draw_crop(degraded.size(2), degraded.size(3), size, gen);
    return {crop(degraded, w), crop(reference, w)};
}

Sample crop_sample(const Sample& sample, const CropWindow& window)
{
    Sample out;
    out.stem = sample.stem;
    out.degraded = crop(sample.degraded, window);
    out.reference = crop(sample.reference, window);
    const double s = static_cast<double>(window.size);
    for (const auto& b : sample.labels.boxes) {
        Box c{std::clamp(b.x1 - window.left, 0.0, s), std::clamp(b.y1 - window.top, 0.0, s),
              std::clamp(b.x2 - window.left, 0.0, s), std::clamp(b.y2 - window.top, 0.0, s), b.cls};
        if (c.x2 > c.x1 && c.y2 > c.y1) out.labels.boxes.push_back(c);
    }
    if (sample.labels.mask.defined()) {
        using torch::indexing::Slice;
        out.labels.mask = sample.labels.mask.index({Slice(window.top, window.top + window.size),
                                                    Slice(window.left, window.left + window.size)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// PairedDataset
// ---------------------------------------------------------------------------

PairedDataset PairedDataset::from_dirs(const fs::path& degraded_dir, const fs::path& reference_dir,
                                       ResizePolicy policy, std::optional<fs::path> labels_dir)
{
    const auto degraded = list_images(degraded_dir);
    const auto reference = list_images(reference_dir);
    if (degraded.empty()) throw std::runtime_error("no images in " + degraded_dir.string());
    std::map<std::string, fs::path> by_stem;
    for (const auto& p : reference) by_stem[p.stem().string()] = p;
    if (by_stem.size() != reference.size()) throw std::runtime_error("duplicate stems in " + reference_dir.string());

    PairedDataset ds;
    ds.policy_ = policy;
    for (const auto& p : degraded) {
        const auto it = by_stem.find(p.stem().string());
        if (it == by_stem.end()) {
            throw std::runtime_error("no reference for '" + p.stem().string() + "' in " + reference_dir.string());
        }
        ds.degraded_.push_back(p);
        ds.reference_.push_back(it->second);
        by_stem.erase(it);
    }
    if (!by_stem.empty()) {
        throw std::runtime_error("no degraded image for '" + by_stem.begin()->first + "' in " + degraded_dir.string());
    }
    if (labels_dir) {
        for (const auto& p : ds.degraded_) {
            const auto stem = p.stem().string();
            if (!fs::exists(*labels_dir / (stem + ".json")) && !fs::exists(*labels_dir / (stem + ".png"))) {
                throw std::runtime_error("no labels for '" + stem + "' in " + labels_dir->string());
            }
        }
    }
    ds.labels_dir_ = std::move(labels_dir);
    return ds;
}

Sample PairedDataset::load_pair(std::size_t index) const
{
    if (index >= size()) {
        throw std::out_of_range("pair index " + std::to_string(index) + " out of range (" + std::to_string(size()) + ")");
    }
    Sample s;
    s.stem = degraded_[index].stem().string();
    const auto raw_ref = read_image(reference_[index]);
    s.degraded = resize_image(read_image(degraded_[index]), policy_, degraded_[index].string());
    s.reference = resize_image(raw_ref, policy_, reference_[index].string());
    if (!s.degraded.sizes().equals(s.reference.sizes())) {
        throw std::runtime_error("pair '" + s.stem + "' has mismatched sizes " + shape_string(s.degraded) + " vs " +
                                 shape_string(s.reference));
    }
    if (labels_dir_) {
        s.labels = resize_labels(read_labels(*labels_dir_, s.stem), raw_ref.size(2), raw_ref.size(3),
                                 s.reference.size(2), s.reference.size(3));
    }
    return s;
}

Batch Batch::to(torch::ScalarType dtype) const
{
    Batch b = *this;
    b.degraded = degraded.to(dtype);
    b.reference = reference.to(dtype);
    return b;
}

Batch collate(const std::vector<Sample>& samples)
{
    if (samples.empty()) throw std::invalid_argument("collate: empty batch");
    std::vector<torch::Tensor> u, r, m;
    Batch b;
    bool masks = true;
    for (const auto& s : samples) {
        u.push_back(s.degraded);
        r.push_back(s.reference);
        b.boxes.push_back(s.labels.boxes);
        masks = masks && s.labels.mask.defined();
        if (masks) m.push_back(s.labels.mask);
    }
    b.degraded = torch::cat(u, 0);
    b.reference = torch::cat(r, 0);
    if (masks) b.mask = torch::stack(m, 0);
    return b;
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

torch::Tensor ramp_depth(int64_t height, int64_t width)
{
    const auto rows = height > 1 ? torch::linspace(0.0, 1.0, height, torch::kFloat64)
                                 : torch::zeros({1}, torch::kFloat64);
    return rows.view({1, 1, height, 1}).expand({1, 1, height, width}).contiguous();
}

nlohmann::json synth_degrade_dataset(const fs::path& clean_dir, const fs::path& out_dir, const SynthOptions& options)
{
    if (!(options.beta_min >= 0.0) || options.beta_max < options.beta_min) {
        throw std::invalid_argument("synth: need 0 <= beta_min <= beta_max");
    }
    if (!(options.light_min >= 0.0) || options.light_max > 1.0 || options.light_max < options.light_min) {
        throw std::invalid_argument("synth: need 0 <= light_min <= light_max <= 1");
    }
    const auto cleans = list_images(clean_dir);
    if (cleans.empty()) throw std::runtime_error("no clean images in " + clean_dir.string());

    json pairs = json::array();
    for (std::size_t i = 0; i < cleans.size(); ++i) {
        const auto stem = cleans[i].stem().string();
        const uint64_t image_seed = mix_seed(options.seed, i);
        Uniform uni(image_seed);
        const double beta = uni(options.beta_min, options.beta_max);
        std::array<double, 3> light{};
        for (auto& v : light) v = uni(options.light_min, options.light_max);

        auto clean = read_image(cleans[i]);
        if (options.policy != ResizePolicy::None) clean = resize_image(clean, options.policy, cleans[i].string());
        clean = clean.to(torch::kFloat64);
        const int64_t h = clean.size(2), w = clean.size(3);
        const auto depth = options.depth == DepthSource::Ramp ? ramp_depth(h, w) : depth_map(clean);
        const auto t = (transmission_from_depth(depth, beta, options.sign) * 65535.0).round() / 65535.0;
        const auto B = torch::tensor({light[0], light[1], light[2]}, torch::kFloat64).view({1, 3, 1, 1});
        const auto degraded = physical_apply(clean, {t, B}, PhysicalDirection::Degrade);

        const auto clean_rel = fs::path("clean") / (stem + ".png");
        const auto degraded_rel = fs::path("degraded") / (stem + ".png");
        const auto t_rel = fs::path("transmission") / (stem + ".png");
        const auto params_rel = fs::path("params") / (stem + ".json");
        write_image(out_dir / clean_rel, clean, 16);
        write_image(out_dir / degraded_rel, degraded, 16);
        write_image(out_dir / t_rel, t, 16);

        const json params = {
            {"stem", stem},
            {"beta", beta},
            {"B", light},
            {"seed", options.seed},
            {"image_seed", image_seed},
            {"depth_source", options.depth == DepthSource::Ramp ? "ramp" : "dark-channel"},
            {"transmission_sign", options.sign == TransmissionSign::Negative ? "neg" : "pos"},
            {"t_stats", {{"min", t.min().item<double>()}, {"max", t.max().item<double>()}, {"mean", t.mean().item<double>()}}},
            {"height", h},
            {"width", w},
        };
        write_json(out_dir / params_rel, params);
        pairs.push_back({{"stem", stem},
                         {"clean", clean_rel.string()},
                         {"degraded", degraded_rel.string()},
                         {"transmission", t_rel.string()},
                         {"params", params_rel.string()},
                         {"beta", beta},
                         {"B", light}});
    }
    const json manifest = {{"version", "hupe-synth-v1"},
                           {"seed", options.seed},
                           {"beta_range", {options.beta_min, options.beta_max}},
                           {"light_range", {options.light_min, options.light_max}},
                           {"depth_source", options.depth == DepthSource::Ramp ? "ramp" : "dark-channel"},
                           {"count", pairs.size()},
                           {"pairs", pairs}};
    write_json(out_dir / "manifest.json", manifest);
    return manifest;
}

SynthRecord read_synth_record(const fs::path& out_dir, const std::string& stem)
{
    const json params = read_json(out_dir / "params" / (stem + ".json"));
    const auto light = params.at("B").get<std::vector<double>>();
    if (light.size() != 3) throw std::runtime_error("synth params for '" + stem + "' need three B values");
    SynthRecord rec;
    rec.beta = params.at("beta").get<double>();
    rec.params.t = read_gray(out_dir / "transmission" / (stem + ".png"));
    rec.params.B = torch::tensor(light, torch::kFloat64).view({1, 3, 1, 1});
    return rec;
}

void generate_toy_scenes(const fs::path& out_dir, const fs::path& labels_dir, const SceneOptions& options)
{
    if (options.count <= 0 || options.size < 16) throw std::invalid_argument("toy scenes need count > 0 and size >= 16");
    const int side = static_cast<int>(options.size);
    for (int i = 0; i < options.count; ++i) {
        Uniform uni(mix_seed(options.seed, static_cast<uint64_t>(i)));
        cv::Mat img(side, side, CV_8UC3);
        cv::Mat mask = cv::Mat::zeros(side, side, CV_8UC1);

        // Smooth two-colour background with a gentle ripple.
        cv::Vec3d c0, c1;
        for (int k = 0; k < 3; ++k) {
            c0[k] = uni(0.1, 0.9);
            c1[k] = uni(0.1, 0.9);
        }
        const double angle = uni(0.0, 2.0 * M_PI), freq = uni(1.0, 3.0);
        for (int y = 0; y < side; ++y) {
            for (int x = 0; x < side; ++x) {
                const double u = (std::cos(angle) * x + std::sin(angle) * y) / side;
                const double a = std::clamp(0.5 + 0.5 * u, 0.0, 1.0);
                const double ripple = 0.05 * std::sin(2.0 * M_PI * freq * (x + y) / side);
                auto& px = img.at<cv::Vec3b>(y, x);
                for (int k = 0; k < 3; ++k) {
                    const double v = std::clamp((1 - a) * c0[k] + a * c1[k] + ripple, 0.0, 1.0);
                    px[2 - k] = static_cast<uint8_t>(std::lround(v * 255.0));
                }
            }
        }

        Labels labels;
        const int objects = uni.integer(1, options.max_objects);
        for (int o = 0; o < objects; ++o) {
            const int cls = uni.integer(0, options.num_classes - 1);
            const int w = uni.integer(side / 6, side * 2 / 5), h = uni.integer(side / 6, side * 2 / 5);
            const int x1 = uni.integer(0, side - w - 1), y1 = uni.integer(0, side - h - 1);
            const cv::Scalar colour(uni(0, 255), uni(0, 255), uni(0, 255));
            const cv::Scalar index(cls + 1);
            if (cls % 2 == 0) {
                cv::rectangle(img, cv::Rect(x1, y1, w, h), colour, cv::FILLED);
                cv::rectangle(mask, cv::Rect(x1, y1, w, h), index, cv::FILLED);
            } else {
                const cv::Point centre(x1 + w / 2, y1 + h / 2);
                const cv::Size axes(w / 2, h / 2);
                cv::ellipse(img, centre, axes, 0, 0, 360, colour, cv::FILLED);
                cv::ellipse(mask, centre, axes, 0, 0, 360, index, cv::FILLED);
            }
            labels.boxes.push_back({static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x1 + w),
                                    static_cast<double>(y1 + h), cls});
        }

        char stem[32];
        std::snprintf(stem, sizeof stem, "scene_%03d", i);
        fs::create_directories(out_dir);
        if (!cv::imwrite((out_dir / (std::string(stem) + ".png")).string(), img)) {
            throw std::runtime_error("cannot write scene to " + out_dir.string());
        }
        cv::Mat wide;
        mask.convertTo(wide, CV_32S);
        labels.mask = torch::from_blob(wide.data, {side, side}, torch::kInt32).to(torch::kLong).clone();
        write_labels(labels_dir, stem, labels);
    }
}

}  // namespace hupe
