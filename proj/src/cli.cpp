#include "hupe/cli.hpp"

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "hupe/checks.hpp"
#include "hupe/config.hpp"
#include "hupe/metrics.hpp"

namespace hupe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kUsageError = 2;

Enhancer load_enhancer(const fs::path& ckpt)
{
    return Enhancer::load(fs::is_directory(ckpt) ? ckpt / "hin.ckpt" : ckpt);
}

int64_t next_pow2(int64_t v, int64_t at_least)
{
    int64_t p = at_least;
    while (p < v) p *= 2;
    return p;
}

/// Replicate-pads both sides up to powers of two no smaller than `min_side`.
ImageTensor pad_to_pow2(const ImageTensor& x, int64_t min_side)
{
    const int64_t ph = next_pow2(x.size(2), min_side) - x.size(2);
    const int64_t pw = next_pow2(x.size(3), min_side) - x.size(3);
    if (ph == 0 && pw == 0) return x;
    return at::replication_pad2d(x, {0, pw, 0, ph});
}

Checkpoint prior_to_checkpoint(const HeuristicPrior& prior)
{
    Checkpoint c;
    c.meta = {{"component", "prior"}, {"levels", prior.levels.size()}};
    c.entries.add("gradient", prior.gradient.detach());
    c.entries.add("depth", prior.depth.detach());
    for (std::size_t b = 0; b < prior.levels.size(); ++b) {
        c.entries.add("level" + std::to_string(b) + ".ambient", prior.levels[b].ambient.detach());
        c.entries.add("level" + std::to_string(b) + ".transmission", prior.levels[b].transmission.detach());
    }
    return c;
}

HeuristicPrior prior_from_checkpoint(const Checkpoint& c)
{
    if (c.meta.value("component", "") != "prior") throw std::runtime_error("not a prior sidecar");
    HeuristicPrior p;
    p.gradient = c.entries.at("gradient");
    p.depth = c.entries.at("depth");
    const auto n = c.meta.at("levels").get<std::size_t>();
    for (std::size_t b = 0; b < n; ++b) {
        p.levels.push_back({c.entries.at("level" + std::to_string(b) + ".ambient"),
                            c.entries.at("level" + std::to_string(b) + ".transmission")});
    }
    return p;
}

int cmd_train(const fs::path& config_path, std::optional<uint64_t> seed, std::ostream& out)
{
    auto config = load_config(config_path);
    if (seed) config.seed = *seed;
    at::globalContext().setDeterministicAlgorithms(true, false);
    torch::manual_seed(config.seed);
    fs::create_directories(config.output_dir);

    std::optional<fs::path> labels;
    if (!config.train_labels.empty()) labels = config.train_labels;
    if (config.synthesize) {
        const auto& s = *config.synthesize;
        SynthOptions o;
        o.beta_min = s.beta_min;
        o.beta_max = s.beta_max;
        o.light_min = s.light_min;
        o.light_max = s.light_max;
        o.seed = s.seed;
        o.sign = config.transmission_sign;
        const auto data_dir = config.output_dir / "data";
        synth_degrade_dataset(s.clean_dir, data_dir, o);
        config.train_degraded = data_dir / "degraded";
        config.train_reference = data_dir / "clean";
        if (!s.labels_dir.empty()) labels = s.labels_dir;
    }
    const auto data = PairedDataset::from_dirs(config.train_degraded, config.train_reference, config.resize, labels);

    Enhancer hin(config.enhancer(), config.seed);
    TaskHead head(config.task_head(), config.seed ^ 0x7461736bULL);
    const auto extractor = PerceptualExtractor::create(config.perceptual_backend, config.perceptual_weights);
    SclState state(std::move(hin), std::move(head), config.scl_options(), extractor, config.seed);

    std::ofstream log(config.output_dir / "train_log.jsonl");
    if (!log) throw std::runtime_error("cannot write " + (config.output_dir / "train_log.jsonl").string());
    collaborative_train(state, data, config.schedule(), config.output_dir, [&](const TrainLogEntry& e) {
        log << json{{"phase", e.phase}, {"epoch", e.epoch}, {"step", e.step}, {"losses", e.losses}}.dump() << '\n';
    });
    out << "trained on " << data.size() << " pairs; checkpoints in " << (config.output_dir / "final").string() << '\n';
    return 0;
}

int cmd_enhance(const fs::path& in_dir, const fs::path& out_dir, const fs::path& ckpt, const std::string& direction,
                std::ostream& out, std::ostream& err)
{
    const auto images = list_images(in_dir);
    if (images.empty()) {
        err << "warning: no images in " << in_dir.string() << '\n';
        return 0;
    }
    auto model = load_enhancer(ckpt);
    const bool inverse = direction == "inverse";
    const int64_t min_side = int64_t{1} << model.config().flow.n_hibs;
    fs::create_directories(out_dir);
    torch::NoGradGuard guard;
    for (const auto& path : images) {
        const auto stem = path.stem().string();
        auto x = read_image(path);
        const auto crop = [&](const torch::Tensor& t) {
            return t.index({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(0, x.size(2)),
                            torch::indexing::Slice(0, x.size(3))});
        };
        if (inverse) {
            const auto sidecar = in_dir / (stem + ".prior");
            std::optional<Checkpoint> saved;
            if (fs::exists(sidecar)) saved = load_checkpoint(sidecar);
            if (saved && saved->entries.contains("clipped")) x = x + saved->entries.at("clipped");
            auto padded = pad_to_pow2(x, min_side);
            if (saved && saved->entries.contains("padded")) {
                padded = saved->entries.at("padded").clone();
                crop(padded).copy_(x);
            }
            model.initialize(padded);
            const auto prior = saved ? prior_from_checkpoint(*saved) : model.prior(padded);
            write_image(out_dir / (stem + ".png"), crop(model.degrade(padded, prior)), 16);
        } else {
            const auto padded = pad_to_pow2(x, min_side);
            model.initialize(padded);
            const auto prior = model.prior(padded);
            const auto full = model.enhance(padded, prior);
            const auto y = crop(full);
            // Values outside [0,1] and the padding border do not survive the
            // PNG; keep them so the inverse direction can undo the enhancement.
            auto saved = prior_to_checkpoint(prior);
            saved.entries.add("clipped", y - y.clamp(0.0, 1.0));
            if (!padded.sizes().equals(x.sizes())) saved.entries.add("padded", full);
            save_checkpoint(out_dir / (stem + ".prior"), saved);
            write_image(out_dir / (stem + ".png"), y, 16);
        }
    }
    out << (inverse ? "degraded " : "enhanced ") << images.size() << " images into " << out_dir.string() << '\n';
    return 0;
}

int cmd_eval(const fs::path& pred_dir, const std::optional<fs::path>& ref_dir, const fs::path& report_path,
             std::ostream& out)
{
    const auto preds = list_images(pred_dir);
    if (preds.empty()) throw std::runtime_error("no images in " + pred_dir.string());
    std::map<std::string, fs::path> refs;
    if (ref_dir) {
        for (const auto& p : list_images(*ref_dir)) refs[p.stem().string()] = p;
    }
    MetricReport report;
    for (const auto& p : preds) {
        const auto stem = p.stem().string();
        ImageTensor ref;
        if (ref_dir) {
            const auto it = refs.find(stem);
            if (it == refs.end()) throw std::runtime_error("no reference for " + p.string() + " in " + ref_dir->string());
            ref = read_image(it->second).to(torch::kFloat64);
        }
        report.add(p.filename().string(), evaluate_image(read_image(p).to(torch::kFloat64), ref));
    }
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    std::ofstream f(report_path);
    if (!f) throw std::runtime_error("cannot write " + report_path.string());
    const auto j = report.to_json();
    f << j.dump(2) << '\n';
    for (const auto& [metric, stats] : j.at("aggregate").items()) {
        out << metric << ": " << stats.at("mean").get<double>() << " +- " << stats.at("std").get<double>() << '\n';
    }
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Heuristic invertible underwater image enhancement"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "pretrain and jointly train from a JSON config");
    fs::path config_path;
    std::optional<uint64_t> train_seed;
    train->add_option("--config", config_path, "training config")->required();
    train->add_option("--seed", train_seed, "overrides the config seed");

    auto* enhance = app.add_subcommand("enhance", "enhance (or degrade) every image of a directory");
    fs::path in_dir, out_dir, ckpt;
    std::string direction = "forward";
    enhance->add_option("--in", in_dir)->required();
    enhance->add_option("--out", out_dir)->required();
    enhance->add_option("--ckpt", ckpt, "hin.ckpt or a checkpoint directory")->required();
    enhance->add_option("--direction", direction)->check(CLI::IsMember({"forward", "inverse"}));

    auto* eval = app.add_subcommand("eval", "full- and no-reference metrics");
    fs::path pred_dir, report_path;
    std::optional<fs::path> ref_dir;
    eval->add_option("--pred", pred_dir)->required();
    eval->add_option("--ref", ref_dir);
    eval->add_option("--report", report_path)->required();

    auto* check = app.add_subcommand("check", "property suites: invertibility, gradients, spectral, losses");
    std::string suite;
    CheckOptions check_options;
    std::optional<fs::path> check_ckpt;
    check->add_option("--suite", suite)->required();
    check->add_option("--ckpt", check_ckpt, "invertibility: check a trained enhancer instead of random ones");
    check->add_option("--seed", check_options.seed);
    check->add_option("--trials", check_options.trials);

    auto* synth = app.add_subcommand("synth", "degrade clean images with the physical model");
    fs::path clean_dir, synth_out;
    SynthOptions synth_options;
    synth->add_option("--clean", clean_dir)->required();
    synth->add_option("--out", synth_out)->required();
    synth->add_option("--beta-min", synth_options.beta_min)->required();
    synth->add_option("--beta-max", synth_options.beta_max)->required();
    synth->add_option("--seed", synth_options.seed)->required();
    synth->add_option("--light-min", synth_options.light_min);
    synth->add_option("--light-max", synth_options.light_max);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n' << "run with --help for usage\n";
        return kUsageError;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, train_seed, out);
        if (enhance->parsed()) return cmd_enhance(in_dir, out_dir, ckpt, direction, out, err);
        if (eval->parsed()) return cmd_eval(pred_dir, ref_dir, report_path, out);
        if (check->parsed()) {
            if (std::find(kCheckSuites.begin(), kCheckSuites.end(), suite) == kCheckSuites.end()) {
                err << "error: unknown suite '" << suite << "' (expected invertibility, gradients, spectral or losses)\n";
                return kUsageError;
            }
            check_options.checkpoint = check_ckpt;
            return print_check_table(out, suite, run_check_suite(suite, check_options)) ? 0 : 1;
        }
        if (synth->parsed()) {
            const auto manifest = synth_degrade_dataset(clean_dir, synth_out, synth_options);
            out << "synthesized " << manifest.at("count").get<std::size_t>() << " pairs into " << synth_out.string() << '\n';
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return kUsageError;
}

}  // namespace hupe
