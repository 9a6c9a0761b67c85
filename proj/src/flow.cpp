#include "hupe/flow.hpp"

#include <cmath>
#include <stdexcept>

namespace hupe {
namespace F = torch::nn::functional;

// ---------------------------------------------------------------------------
// Actnorm
// ---------------------------------------------------------------------------

ActnormParams actnorm_init(const torch::Tensor& batch, ActnormParams params)
{
    if (params.initialized) throw std::logic_error("actnorm_init: parameters already initialized");
    if (batch.dim() != 4) throw std::invalid_argument("actnorm_init: expected 4-D batch, got " + shape_string(batch));
    if (batch.size(0) * batch.size(2) * batch.size(3) < 2) {
        throw std::invalid_argument("actnorm_init: need at least 2 samples per channel, got " + shape_string(batch));
    }
    torch::NoGradGuard guard;
    const auto x = batch.detach();
    const auto mean = x.mean({0, 2, 3});
    const auto std = (x - mean.view({1, -1, 1, 1})).pow(2).mean({0, 2, 3}).sqrt();
    params.bias = (-mean).to(batch.scalar_type());
    params.scale = (1.0 / (std + kActnormEps)).to(batch.scalar_type());
    params.initialized = true;
    return params;
}

torch::Tensor actnorm_apply(const torch::Tensor& x, const ActnormParams& params, Direction dir)
{
    if (!params.initialized) throw std::logic_error("actnorm_apply: parameters are not initialized");
    const auto scale = params.scale.view({1, -1, 1, 1});
    const auto bias = params.bias.view({1, -1, 1, 1});
    if (dir == Direction::Forward) return scale * (x + bias);
    return x / scale - bias;
}

// ---------------------------------------------------------------------------
// Invertible 1x1 convolution
// ---------------------------------------------------------------------------

void require_invertible(const InvConvParams& params, const std::string& where)
{
    const auto& w = params.weight;
    if (w.dim() != 2 || w.size(0) != w.size(1)) {
        throw std::invalid_argument(where + ": invconv weight must be square, got " + shape_string(w));
    }
    const auto [sign, logabs] = torch::linalg_slogdet(w.detach().to(torch::kFloat64));
    const double la = logabs.item<double>();
    if (sign.item<double>() == 0.0 || !std::isfinite(la) || la <= std::log(kMinInvConvDet)) {
        throw std::domain_error(where + ": invconv weight is singular (|det| <= 1e-8)");
    }
}

torch::Tensor invconv_apply(const torch::Tensor& x, const InvConvParams& params, Direction dir,
                            const std::string& where)
{
    const auto& w = params.weight;
    if (x.dim() != 4 || w.dim() != 2 || x.size(1) != w.size(0)) {
        throw std::invalid_argument(where + ": channel mismatch between input " + shape_string(x) + " and weight " +
                                    shape_string(w));
    }
    require_invertible(params, where);
    const auto kernel = dir == Direction::Forward ? w : torch::linalg_inv(w);
    return torch::conv2d(x, kernel.unsqueeze(-1).unsqueeze(-1));
}

// ---------------------------------------------------------------------------
// Squeeze / unsqueeze
// ---------------------------------------------------------------------------

torch::Tensor squeeze(const torch::Tensor& x, Direction dir)
{
    if (x.dim() != 4) throw std::invalid_argument("squeeze: expected 4-D tensor, got " + shape_string(x));
    const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (dir == Direction::Forward) {
        if (h % 2 != 0 || w % 2 != 0) {
            throw std::invalid_argument("squeeze: spatial dims must be even, got " + shape_string(x));
        }
        return x.reshape({n, c, h / 2, 2, w / 2, 2}).permute({0, 1, 3, 5, 2, 4}).reshape({n, c * 4, h / 2, w / 2});
    }
    if (c % 4 != 0) throw std::invalid_argument("unsqueeze: channels must be divisible by 4, got " + shape_string(x));
    return x.reshape({n, c / 4, 2, 2, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({n, c / 4, h * 2, w * 2});
}

// ---------------------------------------------------------------------------
// Heuristic prior injector
// ---------------------------------------------------------------------------

namespace {

torch::Tensor match_resolution(const torch::Tensor& map, const torch::Tensor& x)
{
    if (map.size(-2) == x.size(-2) && map.size(-1) == x.size(-1)) return map;
    return F::interpolate(map, F::InterpolateFuncOptions()
                                   .size(std::vector<int64_t>{x.size(2), x.size(3)})
                                   .mode(torch::kBilinear)
                                   .align_corners(false));
}

}  // namespace

torch::Tensor prior_inject(const torch::Tensor& x, const torch::Tensor& T, const torch::Tensor& B, Direction dir)
{
    if ((T.detach() <= 0.0).any().item<bool>()) {
        throw std::invalid_argument("prior_inject: reciprocal transmission T must be strictly positive");
    }
    const auto t = T.dim() == 4 ? match_resolution(T, x) : T;
    const auto b = B.dim() == 4 ? match_resolution(B, x) : B;
    const auto offset = b * (1.0 - t);
    if (dir == Direction::Forward) return t * x + offset;
    return (x - offset) / t;
}

// ---------------------------------------------------------------------------
// FlowConfig
// ---------------------------------------------------------------------------

int64_t FlowConfig::hib_channels(int b) const
{
    int64_t c = image_channels;
    for (int i = b; i < n_hibs; ++i) c *= 4;
    return c;
}

int64_t FlowConfig::hib_divisor(int b) const { return int64_t{1} << (n_hibs - b); }

nlohmann::json FlowConfig::to_json() const
{
    return {{"image_channels", image_channels},
            {"n_hibs", n_hibs},
            {"flow_steps", flow_steps},
            {"sfa_width", sfa_width},
            {"injection", injection == InjectionMode::PerStep ? "per_step" : "per_hib"},
            {"use_amplitude", use_amplitude},
            {"use_phase", use_phase},
            {"actnorm_init", actnorm_init == ActnormInit::Data ? "data" : "identity"},
            {"invconv_init", invconv_init == InvConvInit::Orthogonal ? "orthogonal" : "identity"}};
}

FlowConfig FlowConfig::from_json(const nlohmann::json& j)
{
    FlowConfig c;
    c.image_channels = j.at("image_channels").get<int64_t>();
    c.n_hibs = j.at("n_hibs").get<int>();
    c.flow_steps = j.at("flow_steps").get<int>();
    c.sfa_width = j.at("sfa_width").get<int64_t>();
    c.injection = j.at("injection").get<std::string>() == "per_hib" ? InjectionMode::PerHib : InjectionMode::PerStep;
    c.use_amplitude = j.at("use_amplitude").get<bool>();
    c.use_phase = j.at("use_phase").get<bool>();
    c.actnorm_init = j.at("actnorm_init").get<std::string>() == "identity" ? ActnormInit::Identity : ActnormInit::Data;
    c.invconv_init =
        j.at("invconv_init").get<std::string>() == "identity" ? InvConvInit::Identity : InvConvInit::Orthogonal;
    return c;
}

// ---------------------------------------------------------------------------
// FlowModel
// ---------------------------------------------------------------------------

FlowModel::FlowModel(FlowConfig config, uint64_t seed, torch::ScalarType dtype) : config_(config)
{
    if (config_.n_hibs < 1 || config_.flow_steps < 1) {
        throw std::invalid_argument("FlowModel: n_hibs and flow_steps must be >= 1");
    }
    auto gen = make_generator(seed);
    const auto opts = torch::TensorOptions().dtype(dtype);
    for (int b = 0; b < config_.n_hibs; ++b) {
        const int64_t c = config_.hib_channels(b);
        for (int s = 0; s < config_.flow_steps; ++s) {
            const std::string p = step_prefix(b, s);
            params_.add(p + ".actnorm.scale", torch::ones({c}, opts));
            params_.add(p + ".actnorm.bias", torch::zeros({c}, opts));
            torch::Tensor w;
            if (config_.invconv_init == InvConvInit::Orthogonal) {
                const auto g = at::randn({c, c}, gen, torch::TensorOptions().dtype(torch::kFloat64));
                w = std::get<0>(torch::linalg_qr(g));
            } else {
                w = torch::eye(c, torch::TensorOptions().dtype(torch::kFloat64));
            }
            params_.add(p + ".invconv.weight", w.to(dtype));
            SfaBlock sfa(p + ".sfa", SfaConfig{c / 2, config_.sfa_width, config_.use_amplitude, config_.use_phase});
            sfa.init(params_, gen, dtype);
            sfa_.push_back(std::move(sfa));
        }
    }
    actnorm_ready_.assign(sfa_.size(), config_.actnorm_init == ActnormInit::Identity ? 1 : 0);
}

std::size_t FlowModel::index(int hib, int step) const
{
    if (hib < 0 || hib >= config_.n_hibs || step < 0 || step >= config_.flow_steps) {
        throw std::out_of_range("FlowModel: no HIB " + std::to_string(hib) + " step " + std::to_string(step));
    }
    return static_cast<std::size_t>(hib * config_.flow_steps + step);
}

std::string FlowModel::step_prefix(int hib, int step) const
{
    return "flow.hib" + std::to_string(hib) + ".step" + std::to_string(step);
}

ActnormParams FlowModel::actnorm(int hib, int step, const ParamTable& table) const
{
    const std::string p = step_prefix(hib, step);
    return {table.at(p + ".actnorm.scale"), table.at(p + ".actnorm.bias"), actnorm_ready(hib, step)};
}

InvConvParams FlowModel::invconv(int hib, int step, const ParamTable& table) const
{
    return {table.at(step_prefix(hib, step) + ".invconv.weight")};
}

const SfaBlock& FlowModel::sfa(int hib, int step) const { return sfa_[index(hib, step)]; }

bool FlowModel::actnorm_ready(int hib, int step) const { return actnorm_ready_[index(hib, step)] != 0; }

bool FlowModel::all_actnorm_ready() const
{
    for (auto r : actnorm_ready_) {
        if (!r) return false;
    }
    return true;
}

bool FlowModel::injects_at(int step) const { return config_.injection == InjectionMode::PerStep || step == 0; }

void FlowModel::require_valid_input(const ImageTensor& x, const std::string& what) const
{
    require_image_tensor(x, what);
    if (x.size(1) != config_.image_channels) {
        throw std::invalid_argument(what + ": expected " + std::to_string(config_.image_channels) +
                                    " channels, got " + shape_string(x));
    }
    require_pow2_spatial(x, what);
    const int64_t divisor = int64_t{1} << config_.n_hibs;
    if (x.size(2) < divisor || x.size(3) < divisor) {
        throw std::invalid_argument(what + ": spatial dims of " + shape_string(x) + " must be divisible by " +
                                    std::to_string(divisor));
    }
}

void FlowModel::check_invertible(const ParamTable& table) const
{
    for (int b = 0; b < config_.n_hibs; ++b) {
        for (int s = 0; s < config_.flow_steps; ++s) {
            require_invertible(invconv(b, s, table), "HIB " + std::to_string(b) + " step " + std::to_string(s));
        }
    }
}

torch::Tensor FlowModel::hib_apply(int hib, const torch::Tensor& x, const PriorLevel& prior, const ParamTable& table,
                                   Direction dir, torch::Tensor* tap) const
{
    const std::string where = "HIB " + std::to_string(hib);
    if (dir == Direction::Forward) {
        if (x.size(1) != config_.hib_channels(hib)) {
            throw std::invalid_argument(where + ": expected " + std::to_string(config_.hib_channels(hib)) +
                                        " channels, got " + shape_string(x));
        }
        auto h = x;
        for (int s = 0; s < config_.flow_steps; ++s) {
            const std::string step = where + " step " + std::to_string(s);
            h = actnorm_apply(h, actnorm(hib, s, table), Direction::Forward);
            h = invconv_apply(h, invconv(hib, s, table), Direction::Forward, step);
            if (injects_at(s)) h = prior_inject(h, prior.transmission, prior.ambient, Direction::Forward);
            h = faac_apply(h, sfa(hib, s), table, Direction::Forward);
        }
        if (tap) *tap = h;
        return squeeze(h, Direction::Inverse);
    }

    auto h = squeeze(x, Direction::Forward);
    if (h.size(1) != config_.hib_channels(hib)) {
        throw std::invalid_argument(where + ": inverse input has the wrong channel count " + shape_string(x));
    }
    for (int s = config_.flow_steps - 1; s >= 0; --s) {
        const std::string step = where + " step " + std::to_string(s);
        h = faac_apply(h, sfa(hib, s), table, Direction::Inverse);
        if (injects_at(s)) h = prior_inject(h, prior.transmission, prior.ambient, Direction::Inverse);
        h = invconv_apply(h, invconv(hib, s, table), Direction::Inverse, step);
        h = actnorm_apply(h, actnorm(hib, s, table), Direction::Inverse);
    }
    return h;
}

ImageTensor FlowModel::forward(const ImageTensor& x, const std::vector<PriorLevel>& priors, const ParamTable& table,
                               std::vector<torch::Tensor>* taps) const
{
    require_valid_input(x, "enhance");
    if (priors.size() != static_cast<std::size_t>(config_.n_hibs)) {
        throw std::invalid_argument("enhance: expected " + std::to_string(config_.n_hibs) + " prior levels");
    }
    auto h = x;
    for (int i = 0; i < config_.n_hibs; ++i) h = squeeze(h, Direction::Forward);
    if (taps) taps->clear();
    for (int b = 0; b < config_.n_hibs; ++b) {
        torch::Tensor tap;
        h = hib_apply(b, h, priors[static_cast<std::size_t>(b)], table, Direction::Forward, taps ? &tap : nullptr);
        if (taps) taps->push_back(tap);
    }
    return h;
}

ImageTensor FlowModel::inverse(const ImageTensor& y, const std::vector<PriorLevel>& priors,
                               const ParamTable& table) const
{
    require_valid_input(y, "degrade");
    if (priors.size() != static_cast<std::size_t>(config_.n_hibs)) {
        throw std::invalid_argument("degrade: expected " + std::to_string(config_.n_hibs) + " prior levels");
    }
    auto h = y;
    for (int b = config_.n_hibs - 1; b >= 0; --b) {
        h = hib_apply(b, h, priors[static_cast<std::size_t>(b)], table, Direction::Inverse);
    }
    for (int i = 0; i < config_.n_hibs; ++i) h = squeeze(h, Direction::Inverse);
    return h;
}

void FlowModel::initialize_actnorm(const ImageTensor& x, const std::vector<PriorLevel>& priors)
{
    require_valid_input(x, "initialize_actnorm");
    torch::NoGradGuard guard;
    auto h = x.detach();
    for (int i = 0; i < config_.n_hibs; ++i) h = squeeze(h, Direction::Forward);
    for (int b = 0; b < config_.n_hibs; ++b) {
        const auto& prior = priors[static_cast<std::size_t>(b)];
        for (int s = 0; s < config_.flow_steps; ++s) {
            const std::size_t i = index(b, s);
            if (!actnorm_ready_[i]) {
                const std::string p = step_prefix(b, s);
                ActnormParams fresh{params_.at(p + ".actnorm.scale"), params_.at(p + ".actnorm.bias"), false};
                const auto init = actnorm_init(h, fresh);
                params_.at(p + ".actnorm.scale").copy_(init.scale);
                params_.at(p + ".actnorm.bias").copy_(init.bias);
                actnorm_ready_[i] = 1;
            }
            h = actnorm_apply(h, actnorm(b, s, params_), Direction::Forward);
            h = invconv_apply(h, invconv(b, s, params_), Direction::Forward);
            if (injects_at(s)) h = prior_inject(h, prior.transmission.detach(), prior.ambient.detach(), Direction::Forward);
            h = faac_apply(h, sfa(b, s), params_, Direction::Forward);
        }
        h = squeeze(h, Direction::Inverse);
    }
}

void randomize_flow(FlowModel& model, uint64_t seed)
{
    torch::NoGradGuard guard;
    auto gen = make_generator(seed);
    const auto& cfg = model.config();
    auto& table = model.params();
    const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    for (int b = 0; b < cfg.n_hibs; ++b) {
        const int64_t c = cfg.hib_channels(b);
        for (int s = 0; s < cfg.flow_steps; ++s) {
            const std::string p = model.step_prefix(b, s);
            auto& scale = table.at(p + ".actnorm.scale");
            scale.copy_(torch::exp((at::rand({c}, gen, f64) * 2.0 - 1.0) * std::log(1.25)));
            table.at(p + ".actnorm.bias").copy_(at::randn({c}, gen, f64) * 0.1);
            const auto q = std::get<0>(torch::linalg_qr(at::randn({c, c}, gen, f64)));
            table.at(p + ".invconv.weight").copy_(q + 0.1 * at::randn({c, c}, gen, f64) / std::sqrt(double(c)));
            const std::string head = model.sfa(b, s).head_name();
            auto& hw = table.at(head + ".weight");
            const double fan_in = double(hw.numel() / hw.size(0));
            hw.copy_(at::randn(hw.sizes(), gen, f64) * (0.1 / std::sqrt(fan_in)));
            auto& hb = table.at(head + ".bias");
            hb.copy_(at::randn(hb.sizes(), gen, f64) * 0.05);
        }
    }
    for (auto& r : model.actnorm_state()) r = 1;
}

std::vector<PriorLevel> random_prior_levels(const FlowConfig& config, const ImageTensor& like, uint64_t seed)
{
    auto gen = make_generator(seed);
    const auto f64 = torch::TensorOptions().dtype(torch::kFloat64);
    std::vector<PriorLevel> levels;
    for (int b = 0; b < config.n_hibs; ++b) {
        const int64_t d = config.hib_divisor(b);
        const std::vector<int64_t> shape{like.size(0), config.hib_channels(b), like.size(2) / d, like.size(3) / d};
        auto T = torch::exp((at::rand(shape, gen, f64) * 2.0 - 1.0) * std::log(4.0 / 3.0)).to(like.scalar_type());
        auto B = at::rand(shape, gen, f64).to(like.scalar_type());
        levels.push_back({B, T});
    }
    return levels;
}

}  // namespace hupe
