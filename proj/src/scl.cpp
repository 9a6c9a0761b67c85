#include "hupe/scl.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hupe {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// TaskHead
// ---------------------------------------------------------------------------

TaskKind parse_task_kind(const std::string& name)
{
    if (name == "detect") return TaskKind::Detect;
    if (name == "segment") return TaskKind::Segment;
    throw std::invalid_argument("unknown task '" + name + "' (detect | segment)");
}

std::string to_string(TaskKind kind) { return kind == TaskKind::Detect ? "detect" : "segment"; }

json TaskHeadConfig::to_json() const
{
    return {{"kind", to_string(kind)}, {"image_channels", image_channels}, {"widths", widths}, {"num_classes", num_classes}};
}

TaskHeadConfig TaskHeadConfig::from_json(const json& j)
{
    TaskHeadConfig c;
    c.kind = parse_task_kind(j.at("kind").get<std::string>());
    c.image_channels = j.at("image_channels").get<int64_t>();
    c.widths = j.at("widths").get<std::array<int64_t, 3>>();
    c.num_classes = j.at("num_classes").get<int64_t>();
    return c;
}

TaskHead::TaskHead(TaskHeadConfig config, uint64_t seed, torch::ScalarType dtype) : config_(config)
{
    if (config_.kind == TaskKind::Segment && config_.num_classes < 2) {
        throw std::invalid_argument("segmentation head needs at least 2 classes");
    }
    auto gen = make_generator(seed);
    int64_t in = config_.image_channels;
    for (std::size_t l = 0; l < config_.widths.size(); ++l) {
        const int64_t w = config_.widths[l];
        const std::string p = "task.stage" + std::to_string(l);
        backbone_.push_back({p + ".down", in, w, 3, 2});
        backbone_.push_back({p + ".conv", w, w, 3, 1});
        in = w;
    }
    for (const auto& c : backbone_) c.init(params_, gen, dtype);
    if (config_.kind == TaskKind::Detect) {
        heads_.push_back({"task.det", config_.widths.back(), 5, 1, 1});
        heads_.back().init(params_, gen, dtype);
        // Rare-foreground prior on the objectness logit.
        torch::NoGradGuard guard;
        params_.at("task.det.bias")[0].fill_(-std::log(99.0));
    } else {
        for (std::size_t l = 0; l < config_.widths.size(); ++l) {
            heads_.push_back({"task.seg" + std::to_string(l), config_.widths[l], config_.num_classes, 1, 1});
            heads_.back().init(params_, gen, dtype);
        }
    }
}

std::vector<torch::Tensor> TaskHead::features(const ImageTensor& image, const ParamTable& table) const
{
    std::vector<torch::Tensor> taps;
    auto h = image;
    for (std::size_t i = 0; i < backbone_.size(); i += 2) {
        h = torch::relu(backbone_[i](h, table));
        h = torch::relu(backbone_[i + 1](h, table));
        taps.push_back(h);
    }
    return taps;
}

TaskHead::Output TaskHead::forward(const ImageTensor& image, const ParamTable& table) const
{
    Output out;
    out.taps = features(image, table);
    if (config_.kind == TaskKind::Detect) {
        const auto raw = heads_[0](out.taps.back(), table);
        out.detection.objectness = raw.narrow(1, 0, 1);
        out.detection.box = raw.narrow(1, 1, 4);
    } else {
        const std::vector<int64_t> size{image.size(2), image.size(3)};
        torch::Tensor logits;
        for (std::size_t l = 0; l < heads_.size(); ++l) {
            const auto s = torch::upsample_bilinear2d(heads_[l](out.taps[l], table), size, false);
            logits = logits.defined() ? logits + s : s;
        }
        out.segmentation = logits;
    }
    return out;
}

torch::Tensor TaskHead::loss(const Output& out, const Batch& batch) const
{
    if (config_.kind == TaskKind::Detect) {
        return detection_task_loss(out.detection, batch.boxes, batch.degraded.size(2), batch.degraded.size(3)).total;
    }
    if (!batch.mask.defined()) throw std::invalid_argument("segmentation task needs mask labels");
    return segmentation_task_loss(out.segmentation, batch.mask);
}

std::vector<int64_t> TaskHead::tap_channels() const { return {config_.widths.begin(), config_.widths.end()}; }

Checkpoint TaskHead::to_checkpoint() const
{
    Checkpoint c;
    c.meta = {{"component", "taskhead"}, {"config", config_.to_json()}};
    c.entries = params_;
    return c;
}

namespace {

void require_component(const Checkpoint& ckpt, const std::string& kind)
{
    if (ckpt.meta.value("component", "") != kind) {
        throw std::runtime_error("checkpoint holds '" + ckpt.meta.value("component", "") + "', expected '" + kind + "'");
    }
}

void restore_table(ParamTable& into, const ParamTable& from, const std::string& kind)
{
    if (into.names() != from.names()) throw std::runtime_error(kind + " checkpoint layout does not match its config");
    into.assign_from(from);
}

}  // namespace

TaskHead TaskHead::from_checkpoint(const Checkpoint& ckpt)
{
    require_component(ckpt, "taskhead");
    TaskHead head(TaskHeadConfig::from_json(ckpt.meta.at("config")), 0);
    restore_table(head.params_, ckpt.entries, "taskhead");
    return head;
}

// ---------------------------------------------------------------------------
// MFG / FTB
// ---------------------------------------------------------------------------

json GuideConfig::to_json() const
{
    return {{"enhancer_channels", enhancer_channels}, {"task_channels", task_channels}, {"stem_width", stem_width}};
}

GuideConfig GuideConfig::from_json(const json& j)
{
    GuideConfig c;
    c.enhancer_channels = j.at("enhancer_channels").get<std::vector<int64_t>>();
    c.task_channels = j.at("task_channels").get<std::vector<int64_t>>();
    c.stem_width = j.at("stem_width").get<int64_t>();
    return c;
}

namespace {

template <std::size_t N>
std::vector<Conv2d> conv_chain(const std::string& prefix, int64_t in, const std::array<int64_t, N>& outs)
{
    std::vector<Conv2d> convs;
    for (std::size_t i = 0; i < N; ++i) {
        convs.push_back({prefix + std::to_string(i), in, outs[i], 3, 1});
        in = outs[i];
    }
    return convs;
}

torch::Tensor run_chain(const std::vector<Conv2d>& convs, torch::Tensor h, const ParamTable& table)
{
    for (const auto& c : convs) h = torch::relu(c(h, table));
    return h;
}

std::vector<int64_t> out_channels(const std::vector<Conv2d>& convs, const ParamTable& table)
{
    std::vector<int64_t> out;
    for (const auto& c : convs) out.push_back(table.at(c.name + ".weight").size(0));
    return out;
}

void validate_guide_config(const GuideConfig& c)
{
    if (c.enhancer_channels.empty() || c.enhancer_channels.size() != c.task_channels.size()) {
        throw std::invalid_argument("guide config needs one enhancer and one task width per tap");
    }
    if (c.stem_width < 1) throw std::invalid_argument("guide config stem width must be positive");
}

}  // namespace

MetaFeatureGenerator::MetaFeatureGenerator(GuideConfig config, uint64_t seed, torch::ScalarType dtype)
    : config_(std::move(config))
{
    validate_guide_config(config_);
    for (std::size_t k = 0; k < config_.taps(); ++k) {
        task_stems_.push_back({"mfg.stem_t" + std::to_string(k), config_.task_channels[k], config_.stem_width, 1, 1});
        enhancer_stems_.push_back(
            {"mfg.stem_e" + std::to_string(k), config_.enhancer_channels[k], config_.stem_width, 1, 1});
    }
    task_ = conv_chain("mfg.task", config_.stem_width, kMfgTaskChannels);
    enhancer_ = conv_chain("mfg.enh", config_.stem_width, kMfgEnhancerChannels);
    trunk_ = conv_chain("mfg.trunk", kMfgTrunkInput, kMfgTrunkChannels);

    auto gen = make_generator(seed);
    for (const auto* group : {&task_stems_, &enhancer_stems_, &task_, &enhancer_, &trunk_}) {
        for (const auto& c : *group) c.init(params_, gen, dtype);
    }
}

torch::Tensor MetaFeatureGenerator::forward(const torch::Tensor& task, const torch::Tensor& enhancer, std::size_t tap,
                                            const ParamTable& table) const
{
    if (tap >= config_.taps()) throw std::out_of_range("MFG tap " + std::to_string(tap) + " out of range");
    if (task.size(2) != enhancer.size(2) || task.size(3) != enhancer.size(3)) {
        throw std::invalid_argument("MFG inputs differ spatially: " + shape_string(task) + " vs " +
                                    shape_string(enhancer));
    }
    const auto z_task = run_chain(task_, task_stems_[tap](task, table), table);
    const auto z_enh = run_chain(enhancer_, enhancer_stems_[tap](enhancer, table), table);
    return run_chain(trunk_, torch::cat({z_enh, z_task}, 1), table);
}

std::vector<int64_t> MetaFeatureGenerator::layer_channels(MfgBranch branch, const ParamTable& table) const
{
    switch (branch) {
    case MfgBranch::Task: return out_channels(task_, table);
    case MfgBranch::Enhancer: return out_channels(enhancer_, table);
    case MfgBranch::Trunk: return out_channels(trunk_, table);
    }
    return {};
}

Checkpoint MetaFeatureGenerator::to_checkpoint() const
{
    Checkpoint c;
    c.meta = {{"component", "mfg"}, {"config", config_.to_json()}};
    c.entries = params_;
    return c;
}

MetaFeatureGenerator MetaFeatureGenerator::from_checkpoint(const Checkpoint& ckpt)
{
    require_component(ckpt, "mfg");
    MetaFeatureGenerator m(GuideConfig::from_json(ckpt.meta.at("config")), 0);
    restore_table(m.params_, ckpt.entries, "mfg");
    return m;
}

FeatureTransitionBlock::FeatureTransitionBlock(GuideConfig config, uint64_t seed, torch::ScalarType dtype)
    : config_(std::move(config))
{
    validate_guide_config(config_);
    for (std::size_t k = 0; k < config_.taps(); ++k) {
        stems_.push_back({"ftb.stem" + std::to_string(k), config_.enhancer_channels[k], config_.stem_width, 1, 1});
    }
    layers_ = conv_chain("ftb.conv", config_.stem_width, kFtbChannels);
    auto gen = make_generator(seed);
    for (const auto& c : stems_) c.init(params_, gen, dtype);
    for (const auto& c : layers_) c.init(params_, gen, dtype);
}

torch::Tensor FeatureTransitionBlock::forward(const torch::Tensor& enhancer, std::size_t tap,
                                              const ParamTable& table) const
{
    if (tap >= stems_.size()) throw std::out_of_range("FTB tap " + std::to_string(tap) + " out of range");
    return run_chain(layers_, stems_[tap](enhancer, table), table);
}

std::vector<int64_t> FeatureTransitionBlock::layer_channels(const ParamTable& table) const
{
    return out_channels(layers_, table);
}

Checkpoint FeatureTransitionBlock::to_checkpoint() const
{
    Checkpoint c;
    c.meta = {{"component", "ftb"}, {"config", config_.to_json()}};
    c.entries = params_;
    return c;
}

FeatureTransitionBlock FeatureTransitionBlock::from_checkpoint(const Checkpoint& ckpt)
{
    require_component(ckpt, "ftb");
    FeatureTransitionBlock f(GuideConfig::from_json(ckpt.meta.at("config")), 0);
    restore_table(f.params_, ckpt.entries, "ftb");
    return f;
}

// ---------------------------------------------------------------------------
// Feature tapping
// ---------------------------------------------------------------------------

std::vector<std::size_t> pair_taps(const std::vector<torch::Tensor>& enhancer, const std::vector<torch::Tensor>& task)
{
    if (task.empty()) throw std::invalid_argument("pair_taps: no task taps");
    std::vector<std::size_t> pairs;
    for (const auto& e : enhancer) {
        std::size_t best = 0;
        double best_gap = INFINITY;
        for (std::size_t j = 0; j < task.size(); ++j) {
            const double gap = std::abs(std::log2(static_cast<double>(task[j].size(2)) / e.size(2)));
            if (gap < best_gap) {
                best_gap = gap;
                best = j;
            }
        }
        pairs.push_back(best);
    }
    return pairs;
}

namespace {

/// Task tap paired with each HIB exit when both ladders halve resolution per level.
GuideConfig guide_config_for(const Enhancer& hin, const TaskHead& head)
{
    const auto& flow = hin.config().flow;
    const auto task = head.tap_channels();
    GuideConfig c;
    for (int b = 0; b < flow.n_hibs; ++b) {
        const int level = static_cast<int>(std::log2(static_cast<double>(flow.hib_divisor(b))));
        const auto j = static_cast<std::size_t>(std::clamp(level - 1, 0, static_cast<int>(task.size()) - 1));
        c.enhancer_channels.push_back(flow.hib_channels(b));
        c.task_channels.push_back(task[j]);
    }
    return c;
}

torch::ScalarType dtype_of(const ParamTable& t) { return t.tensors().front().scalar_type(); }

}  // namespace

// ---------------------------------------------------------------------------
// SclState
// ---------------------------------------------------------------------------

SclState::SclState(Enhancer hin, TaskHead head, SclOptions options, const PerceptualExtractor& extractor,
                   uint64_t seed)
    : hin_(std::move(hin)), head_(std::move(head)), options_(options), extractor_(extractor)
{
    options_.enhancement.weights.validate();
    const auto dtype = dtype_of(hin_.flow().params());
    const auto guide = guide_config_for(hin_, head_);
    mfg_ = MetaFeatureGenerator(guide, seed ^ 0x6d6667ULL, dtype);
    ftb_ = FeatureTransitionBlock(guide, seed ^ 0x667462ULL, dtype);
    head_.params().to(dtype);
    extractor_ = extractor_.to(dtype);

    auto hin_params = hin_.parameters();
    hin_params.set_requires_grad(true);
    auto meta = meta_params();
    meta.set_requires_grad(true);
    head_.params().set_requires_grad(true);

    hin_opt_ = std::make_unique<Adam>(hin_params, options_.hin_adam);
    meta_opt_ = std::make_unique<Adam>(meta, options_.meta_adam);
    task_opt_ = std::make_unique<Sgd>(head_.params(), options_.task_sgd);
}

ParamTable SclState::meta_params() const
{
    ParamTable all;
    all.merge(mfg_.params());
    all.merge(ftb_.params());
    return all;
}

void SclState::require_pretrained(const char* stage) const
{
    if (!hin_pretrained || !task_pretrained) {
        throw std::logic_error(std::string(stage) + " needs a pretrained HIN and task head");
    }
}

namespace {

FeatureBundle bundle_from(const SclState& s, const TaskHead& head, ImageTensor enhanced,
                          std::vector<torch::Tensor> enhancer_taps)
{
    FeatureBundle b;
    b.enhanced = std::move(enhanced);
    b.enhancer = std::move(enhancer_taps);
    const auto task_taps = head.features(b.enhanced, head.params());
    const auto pairs = pair_taps(b.enhancer, task_taps);
    for (std::size_t k = 0; k < b.enhancer.size(); ++k) {
        auto t = task_taps[pairs[k]];
        const auto& e = b.enhancer[k];
        if (t.size(2) != e.size(2) || t.size(3) != e.size(3)) {
            t = torch::upsample_bilinear2d(t, {e.size(2), e.size(3)}, false);
        }
        b.task.push_back(t);
        b.mfg.push_back(s.mfg().forward(t, e, k, s.mfg().params()));
        b.ftb.push_back(s.ftb().forward(e, k, s.ftb().params()));
    }
    return b;
}

}  // namespace

FeatureBundle SclState::features(const Batch& batch, const ParamTable* hin_table) const
{
    const auto table = hin_table ? *hin_table : hin_.parameters();
    const auto prior = hin_.prior(batch.degraded, &table);
    std::vector<torch::Tensor> taps;
    auto enhanced = hin_.enhance(batch.degraded, prior, &table, &taps);
    return bundle_from(*this, head_, std::move(enhanced), std::move(taps));
}

double SclState::guide_value(const Batch& batch) const
{
    torch::NoGradGuard guard;
    return guide(features(batch)).item<double>();
}

EnhancementTerms SclState::pretrain_hin_step(const Batch& batch)
{
    hin_.initialize(batch.degraded);
    const auto table = hin_.parameters();
    auto terms = enhancement_loss(hin_, batch.degraded, batch.reference, extractor_, options_.enhancement, &table);
    hin_opt_->step(gradients(terms.total, table));
    return terms;
}

double SclState::pretrain_task_step(const Batch& batch)
{
    hin_.initialize(batch.degraded);
    ImageTensor enhanced;
    {
        torch::NoGradGuard guard;
        enhanced = hin_.enhance(batch.degraded, hin_.prior(batch.degraded));
    }
    const auto loss = head_.loss(head_.forward(enhanced), batch);
    task_opt_->step(gradients(loss, head_.params()));
    return loss.item<double>();
}

InnerResult SclState::inner_update(const Batch& batch)
{
    require_pretrained("inner_update");
    hin_.initialize(batch.degraded);
    auto theta = hin_.parameters();
    const auto phi = meta_params();

    // (a) differentiable SGD step of the HIN on L_g.
    const auto lg = guide(features(batch, &theta));
    const auto g = gradients(lg, theta, /*create_graph=*/true);
    std::vector<torch::Tensor> updated;
    updated.reserve(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) updated.push_back(theta.tensors()[i] - options_.inner_lr * g[i]);
    const auto theta_next = theta.with_tensors(updated);

    // (b) L_e at the updated HIN, differentiated w.r.t. MFG/FTB through (a).
    const auto terms =
        enhancement_loss(hin_, batch.degraded, batch.reference, extractor_, options_.enhancement, &theta_next);
    const auto g_phi = gradients(terms.total, phi);

    InnerResult r{lg.item<double>(), terms.total.item<double>()};
    theta.assign_from(theta_next);
    meta_opt_->step(g_phi);
    return r;
}

OuterResult SclState::outer_update(const Batch& batch)
{
    require_pretrained("outer_update");
    hin_.initialize(batch.degraded);
    const auto theta = hin_.parameters();
    std::vector<torch::Tensor> taps;
    const auto terms =
        enhancement_loss(hin_, batch.degraded, batch.reference, extractor_, options_.enhancement, &theta, &taps);
    const auto lg = guide(bundle_from(*this, head_, terms.enhanced, taps));
    const auto total = terms.total + options_.enhancement.weights.guide * lg;
    hin_opt_->step(gradients(total, theta));
    return {terms.total.item<double>(), lg.item<double>(), total.item<double>()};
}

void SclState::save(const fs::path& dir, const json& progress) const
{
    fs::create_directories(dir);
    hin_.save(dir / "hin.ckpt");
    save_checkpoint(dir / "taskhead.ckpt", head_.to_checkpoint());
    save_checkpoint(dir / "mfg.ckpt", mfg_.to_checkpoint());
    save_checkpoint(dir / "ftb.ckpt", ftb_.to_checkpoint());
    save_checkpoint(dir / "optim_hin.ckpt", hin_opt_->state());
    save_checkpoint(dir / "optim_meta.ckpt", meta_opt_->state());
    save_checkpoint(dir / "optim_task.ckpt", task_opt_->state());
    json state = {{"hin_pretrained", hin_pretrained}, {"task_pretrained", task_pretrained}, {"progress", progress}};
    std::ofstream out(dir / "state.json");
    if (!out) throw std::runtime_error("cannot write " + (dir / "state.json").string());
    out << state.dump(2) << '\n';
}

json SclState::load(const fs::path& dir)
{
    std::ifstream in(dir / "state.json");
    if (!in) throw std::runtime_error("no training state in " + dir.string());
    const json state = json::parse(in);

    const auto hin = load_checkpoint(dir / "hin.ckpt");
    auto hin_params = hin_.parameters();
    if (hin_params.names() != hin.entries.names()) {
        throw std::runtime_error("HIN checkpoint in " + dir.string() + " does not match the configured model");
    }
    hin_params.assign_from(hin.entries);
    const auto ready = hin.meta.at("actnorm_initialized").get<std::vector<int>>();
    auto& flags = hin_.flow().actnorm_state();
    if (ready.size() != flags.size()) throw std::runtime_error("actnorm state size mismatch in " + dir.string());
    for (std::size_t i = 0; i < ready.size(); ++i) flags[i] = static_cast<uint8_t>(ready[i] != 0);

    const auto head = load_checkpoint(dir / "taskhead.ckpt");
    require_component(head, "taskhead");
    restore_table(head_.params(), head.entries, "taskhead");
    const auto mfg = load_checkpoint(dir / "mfg.ckpt");
    require_component(mfg, "mfg");
    restore_table(mfg_.params(), mfg.entries, "mfg");
    const auto ftb = load_checkpoint(dir / "ftb.ckpt");
    require_component(ftb, "ftb");
    restore_table(ftb_.params(), ftb.entries, "ftb");

    hin_opt_->load_state(load_checkpoint(dir / "optim_hin.ckpt"));
    meta_opt_->load_state(load_checkpoint(dir / "optim_meta.ckpt"));
    task_opt_->load_state(load_checkpoint(dir / "optim_task.ckpt"));
    hin_pretrained = state.at("hin_pretrained").get<bool>();
    task_pretrained = state.at("task_pretrained").get<bool>();
    return state.at("progress");
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

namespace {

uint64_t phase_tag(const std::string& phase)
{
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : phase) h = (h ^ c) * 1099511628211ULL;
    return h;
}

const std::array<std::string, 3> kPhases{"hin", "task", "joint"};

int phase_index(const std::string& phase)
{
    for (std::size_t i = 0; i < kPhases.size(); ++i) {
        if (kPhases[i] == phase) return static_cast<int>(i);
    }
    throw std::runtime_error("unknown training phase '" + phase + "'");
}

}  // namespace

std::vector<Batch> epoch_batches(const PairedDataset& data, const TrainSchedule& schedule, const std::string& phase,
                                 int epoch, torch::ScalarType dtype)
{
    if (schedule.batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    auto gen = make_generator(schedule.seed ^ phase_tag(phase) ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    const auto n = static_cast<int64_t>(data.size());
    const auto order = torch::randperm(n, gen, torch::kLong);
    std::vector<Batch> batches;
    std::vector<Sample> pending;
    for (int64_t i = 0; i < n; ++i) {
        auto s = data.load_pair(static_cast<std::size_t>(order[i].item<int64_t>()));
        const int64_t h = s.degraded.size(2), w = s.degraded.size(3);
        if (schedule.crop > 0 && schedule.crop < std::min(h, w)) s = crop_sample(s, draw_crop(h, w, schedule.crop, gen));
        pending.push_back(std::move(s));
        if (static_cast<int64_t>(pending.size()) == schedule.batch_size || i + 1 == n) {
            batches.push_back(collate(pending).to(dtype));
            pending.clear();
        }
    }
    return batches;
}

void collaborative_train(SclState& state, const PairedDataset& data, const TrainSchedule& schedule,
                         const fs::path& out_dir, const std::function<void(const TrainLogEntry&)>& log,
                         const std::optional<fs::path>& resume_from)
{
    if (schedule.cadence < 1) throw std::invalid_argument("cadence must be >= 1");
    const auto dtype = dtype_of(state.hin().flow().params());
    int start_phase = 0, start_epoch = 0;
    if (resume_from) {
        const auto progress = state.load(*resume_from);
        start_phase = phase_index(progress.at("phase").get<std::string>());
        start_epoch = progress.at("epoch").get<int>() + 1;
    }
    const auto emit = [&](const std::string& phase, int epoch, int64_t step, json losses) {
        if (log) log({phase, epoch, step, std::move(losses)});
    };
    const auto checkpoint = [&](const std::string& phase, int epoch) {
        state.save(out_dir / (phase + "-epoch" + std::to_string(epoch)), {{"phase", phase}, {"epoch", epoch}});
    };

    const std::array<int, 3> epochs{state.hin_pretrained && start_phase == 0 ? 0 : schedule.hin_epochs,
                                    state.task_pretrained && start_phase <= 1 ? 0 : schedule.task_epochs,
                                    schedule.joint_epochs};
    int64_t step = 0;
    for (int p = start_phase; p < 3; ++p) {
        const auto& phase = kPhases[static_cast<std::size_t>(p)];
        for (int e = p == start_phase ? start_epoch : 0; e < epochs[static_cast<std::size_t>(p)]; ++e) {
            for (const auto& batch : epoch_batches(data, schedule, phase, e, dtype)) {
                if (p == 0) {
                    const auto t = state.pretrain_hin_step(batch);
                    emit(phase, e, step, {{"L_e", t.total.item<double>()},
                                          {"L_c", t.contrastive.item<double>()},
                                          {"L_f", t.frequency.item<double>()},
                                          {"L_b", t.bilateral.item<double>()}});
                } else if (p == 1) {
                    emit(phase, e, step, {{"L_t", state.pretrain_task_step(batch)}});
                } else {
                    json losses;
                    for (int c = 0; c < schedule.cadence; ++c) {
                        const auto inner = state.inner_update(batch);
                        losses["inner_L_g"] = inner.guide;
                        losses["inner_L_e"] = inner.enhancement;
                    }
                    const auto outer = state.outer_update(batch);
                    losses["outer_L_e"] = outer.enhancement;
                    losses["outer_L_g"] = outer.guide;
                    emit(phase, e, step, losses);
                }
                ++step;
            }
            checkpoint(phase, e);
        }
        if (p == 0) state.hin_pretrained = true;
        if (p == 1) state.task_pretrained = true;
    }
    state.save(out_dir / "final", {{"phase", "joint"}, {"epoch", schedule.joint_epochs - 1}});
}

}  // namespace hupe
