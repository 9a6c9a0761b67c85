#include "hupe/config.hpp"

#include <fstream>
#include <set>

namespace hupe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Reader {
public:
    Reader(const json& j, std::string scope, fs::path base) : j_(j), scope_(std::move(scope)), base_(std::move(base))
    {
        if (!j_.is_object()) throw ConfigError(where("") + "must be a JSON object");
    }

    template <typename T>
    void get(const char* key, T& out)
    {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + "has the wrong type");
        }
    }

    template <typename T>
    void require(const char* key, T& out)
    {
        if (!j_.contains(key)) throw ConfigError(where(key) + "is required but missing");
        get(key, out);
    }

    void path(const char* key, fs::path& out, bool required)
    {
        std::string s;
        if (required) {
            require(key, s);
        } else {
            get(key, s);
        }
        if (!s.empty()) out = resolve(s);
    }

    template <typename Enum, typename Parse>
    void choice(const char* key, Enum& out, Parse parse)
    {
        std::string s;
        get(key, s);
        if (s.empty()) return;
        try {
            out = parse(s);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where(key) + e.what());
        }
    }

    void positive(const char* key, double v) const
    {
        if (!(v > 0.0)) throw ConfigError(where(key) + "must be > 0");
    }
    void at_least(const char* key, int64_t v, int64_t min) const
    {
        if (v < min) throw ConfigError(where(key) + "must be >= " + std::to_string(min));
    }

    void reject_unknown() const
    {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw ConfigError(where(key) + "is not a recognized key");
        }
    }

    void mark(const char* key) { seen_.insert(key); }
    bool has(const char* key) const { return j_.contains(key); }
    const json& raw(const char* key) const { return j_.at(key); }
    std::string where(const std::string& key) const
    {
        return "config" + scope_ + (key.empty() ? ": " : ": '" + key + "' ");
    }

private:
    fs::path resolve(const std::string& s) const
    {
        fs::path p(s);
        return p.is_absolute() || base_.empty() ? p : (base_ / p).lexically_normal();
    }

    const json& j_;
    std::string scope_;
    fs::path base_;
    std::set<std::string> seen_;
};

InjectionMode parse_injection(const std::string& s)
{
    if (s == "per-step") return InjectionMode::PerStep;
    if (s == "per-hib") return InjectionMode::PerHib;
    throw std::invalid_argument("must be per-step or per-hib");
}

ActnormInit parse_actnorm_init(const std::string& s)
{
    if (s == "data") return ActnormInit::Data;
    if (s == "identity") return ActnormInit::Identity;
    throw std::invalid_argument("must be data or identity");
}

InvConvInit parse_invconv_init(const std::string& s)
{
    if (s == "orthogonal") return InvConvInit::Orthogonal;
    if (s == "identity") return InvConvInit::Identity;
    throw std::invalid_argument("must be orthogonal or identity");
}

TransmissionSign parse_sign(const std::string& s)
{
    if (s == "neg") return TransmissionSign::Negative;
    if (s == "pos") return TransmissionSign::Positive;
    throw std::invalid_argument("must be neg or pos");
}

BilateralNorm parse_norm(const std::string& s)
{
    if (s == "l2") return BilateralNorm::L2;
    if (s == "l1") return BilateralNorm::L1;
    throw std::invalid_argument("must be l1 or l2");
}

ResizePolicy parse_policy(const std::string& s)
{
    try {
        return parse_resize_policy(s);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("must be pow2-512, desk or none");
    }
}

TaskKind parse_task(const std::string& s)
{
    try {
        return parse_task_kind(s);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("must be detect or segment");
    }
}

SynthesizeSection parse_synthesize(const json& j, const fs::path& base)
{
    Reader r(j, ".synthesize", base);
    SynthesizeSection s;
    r.path("clean_dir", s.clean_dir, true);
    r.path("labels_dir", s.labels_dir, false);
    r.get("beta_min", s.beta_min);
    r.get("beta_max", s.beta_max);
    r.get("light_min", s.light_min);
    r.get("light_max", s.light_max);
    r.get("seed", s.seed);
    r.reject_unknown();
    if (s.beta_min < 0.0 || s.beta_max < s.beta_min) throw ConfigError(r.where("beta_max") + "needs 0 <= beta_min <= beta_max");
    if (s.light_min < 0.0 || s.light_max > 1.0 || s.light_max < s.light_min) {
        throw ConfigError(r.where("light_max") + "needs 0 <= light_min <= light_max <= 1");
    }
    return s;
}

}  // namespace

TrainConfig parse_config(const json& j, const fs::path& base_dir)
{
    Reader r(j, "", base_dir);
    TrainConfig c;

    std::string version;
    r.require("version", version);
    if (version != kConfigVersion) {
        throw ConfigError(r.where("version") + "must be \"" + kConfigVersion + "\", got \"" + version + "\"");
    }

    r.get("n_hibs", c.n_hibs);
    r.get("flow_steps", c.flow_steps);
    r.get("sfa_width", c.sfa_width);
    r.choice("injection", c.injection, parse_injection);
    r.get("use_amplitude", c.use_amplitude);
    r.get("use_phase", c.use_phase);
    if (r.has("hpe_inputs")) {
        std::vector<std::string> inputs;
        r.get("hpe_inputs", inputs);
        c.hpe_rgb = c.hpe_gradient = c.hpe_depth = false;
        for (const auto& s : inputs) {
            if (s == "rgb") c.hpe_rgb = true;
            else if (s == "gradient") c.hpe_gradient = true;
            else if (s == "depth") c.hpe_depth = true;
            else throw ConfigError(r.where("hpe_inputs") + "entries must be rgb, gradient or depth");
        }
    }
    r.choice("actnorm_init", c.actnorm_init, parse_actnorm_init);
    r.choice("invconv_init", c.invconv_init, parse_invconv_init);

    r.get("crop", c.crop);
    r.get("lr", c.lr);
    r.get("inner_lr", c.inner_lr);
    r.get("meta_lr", c.meta_lr);
    r.get("batch", c.batch);
    r.get("epochs", c.epochs);
    r.get("task_epochs", c.task_epochs);
    r.get("joint_epochs", c.joint_epochs);
    r.get("cadence", c.cadence);
    r.get("lambdas", c.lambdas);
    r.choice("bilateral_norm", c.bilateral_norm, parse_norm);
    r.get("perceptual_backend", c.perceptual_backend);
    r.path("perceptual_weights", c.perceptual_weights, false);

    r.choice("task", c.task, parse_task);
    r.get("task_lr", c.task_lr);
    r.get("task_weight_decay", c.task_weight_decay);
    r.get("num_classes", c.num_classes);

    r.choice("resize", c.resize, parse_policy);
    r.choice("transmission_sign", c.transmission_sign, parse_sign);
    r.mark("synthesize");
    if (r.has("synthesize")) c.synthesize = parse_synthesize(r.raw("synthesize"), base_dir);
    const bool data_required = !c.synthesize.has_value();
    r.path("train_degraded", c.train_degraded, data_required);
    r.path("train_reference", c.train_reference, data_required);
    r.path("train_labels", c.train_labels, false);

    r.path("output_dir", c.output_dir, false);
    r.get("seed", c.seed);
    r.reject_unknown();

    r.at_least("n_hibs", c.n_hibs, 1);
    r.at_least("flow_steps", c.flow_steps, 1);
    r.at_least("sfa_width", c.sfa_width, 0);
    r.at_least("crop", c.crop, 0);
    r.positive("lr", c.lr);
    r.at_least("batch", c.batch, 1);
    r.at_least("epochs", c.epochs, 0);
    r.at_least("task_epochs", c.task_epochs, 0);
    r.at_least("joint_epochs", c.joint_epochs, 0);
    r.at_least("cadence", c.cadence, 1);
    r.at_least("num_classes", c.num_classes, 2);
    for (double l : c.lambdas) {
        if (!(l >= 0.0)) throw ConfigError(r.where("lambdas") + "entries must be >= 0");
    }
    if (c.perceptual_backend != "auto" && c.perceptual_backend != "pretrained-vgg19" &&
        c.perceptual_backend != "fixed-random-cnn") {
        throw ConfigError(r.where("perceptual_backend") + "must be auto, pretrained-vgg19 or fixed-random-cnn");
    }
    if (c.perceptual_backend == "pretrained-vgg19" && c.perceptual_weights.empty()) {
        throw ConfigError(r.where("perceptual_weights") + "is required for the pretrained-vgg19 backend");
    }
    if (c.crop > 0 && !is_power_of_two(c.crop)) throw ConfigError(r.where("crop") + "must be a power of two or 0");
    return c;
}

TrainConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j, path.parent_path());
}

EnhancerConfig TrainConfig::enhancer() const
{
    EnhancerConfig e;
    e.flow.n_hibs = n_hibs;
    e.flow.flow_steps = flow_steps;
    e.flow.sfa_width = sfa_width;
    e.flow.injection = injection;
    e.flow.use_amplitude = use_amplitude;
    e.flow.use_phase = use_phase;
    e.flow.actnorm_init = actnorm_init;
    e.flow.invconv_init = invconv_init;
    e.prior.use_rgb = hpe_rgb;
    e.prior.use_gradient = hpe_gradient;
    e.prior.use_depth = hpe_depth;
    e.sync();
    return e;
}

TaskHeadConfig TrainConfig::task_head() const
{
    TaskHeadConfig t;
    t.kind = task;
    t.num_classes = num_classes;
    return t;
}

SclOptions TrainConfig::scl_options() const
{
    SclOptions o;
    o.enhancement.weights = {lambdas[0], lambdas[1], lambdas[2], lambdas[3]};
    o.enhancement.norm = bilateral_norm;
    o.hin_adam.lr = lr;
    o.meta_adam.lr = meta_lr > 0.0 ? meta_lr : lr;
    o.inner_lr = inner_lr > 0.0 ? inner_lr : lr;
    const bool detect = task == TaskKind::Detect;
    o.task_sgd.lr = task_lr > 0.0 ? task_lr : (detect ? 1e-2 : 1e-3);
    o.task_sgd.momentum = 0.9;
    o.task_sgd.weight_decay = task_weight_decay >= 0.0 ? task_weight_decay : (detect ? 1e-4 : 5e-4);
    return o;
}

TrainSchedule TrainConfig::schedule() const
{
    TrainSchedule s;
    s.hin_epochs = epochs;
    s.task_epochs = task_epochs;
    s.joint_epochs = joint_epochs;
    s.batch_size = batch;
    s.crop = crop;
    s.cadence = cadence;
    s.seed = seed;
    return s;
}

}  // namespace hupe
