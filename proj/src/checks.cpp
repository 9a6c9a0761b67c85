#include "hupe/checks.hpp"

#include <cmath>
#include <complex>
#include <iomanip>
#include <numbers>
#include <stdexcept>

#include "hupe/losses.hpp"
#include "hupe/spectral.hpp"

namespace hupe {

namespace {

constexpr auto kF64 = torch::kFloat64;

CheckResult at_most(std::string name, double value, double tol, std::string detail = {})
{
    return {std::move(name), value, tol, std::isfinite(value) && value <= tol, std::move(detail)};
}

CheckResult close_to(std::string name, double value, double expected, double tol)
{
    const double err = std::abs(value - expected);
    std::ostringstream d;
    d << std::setprecision(10) << "got " << value << ", expected " << expected;
    return at_most(std::move(name), err, tol, d.str());
}

ParamTable replace(const ParamTable& table, const std::string& name, const torch::Tensor& value)
{
    auto tensors = table.tensors();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        if (table.names()[i] == name) tensors[i] = value;
    }
    return table.with_tensors(tensors);
}

Enhancer random_enhancer(uint64_t seed, torch::ScalarType dtype)
{
    Enhancer model(EnhancerConfig{}, seed, dtype);
    randomize_flow(model.flow(), seed);
    randomize_encoder_heads(model, seed);
    return model;
}

// --------------------------------------------------------------------------

std::vector<CheckResult> invertibility_suite(const CheckOptions& o)
{
    std::vector<CheckResult> out;
    if (o.checkpoint) {
        auto model = Enhancer::load(*o.checkpoint);
        try {
            model.flow().check_invertible();
        } catch (const std::domain_error& e) {
            out.push_back({"invconv determinants", 0.0, kMinInvConvDet, false, e.what()});
            return out;
        }
        out.push_back({"invconv determinants", 0.0, kMinInvConvDet, true, "all blocks invertible"});
        auto gen = make_generator(o.seed);
        const auto x = at::rand({1, 3, 64, 64}, gen);
        torch::NoGradGuard guard;
        model.initialize(x);
        const auto prior = model.prior(x);
        const auto back = model.degrade(model.enhance(x, prior), prior);
        out.push_back(at_most("checkpoint round trip (float32)", (back - x).abs().max().item<double>(), 1e-4));
        return out;
    }

    torch::NoGradGuard guard;
    double worst32 = 0.0, worst64 = 0.0;
    for (int i = 0; i < o.trials; ++i) {
        const uint64_t seed = o.seed + static_cast<uint64_t>(i);
        FlowModel model(FlowConfig{}, seed, kF64);
        randomize_flow(model, seed);
        auto gen = make_generator(seed);
        const auto x = at::rand({1, 3, 64, 64}, gen, kF64);
        const auto priors = random_prior_levels(model.config(), x, seed);
        worst64 = std::max(worst64, (model.inverse(model.forward(x, priors), priors) - x).abs().max().item<double>());

        model.params().to(torch::kFloat32);
        std::vector<PriorLevel> p32;
        for (const auto& p : priors) p32.push_back({p.ambient.to(torch::kFloat32), p.transmission.to(torch::kFloat32)});
        const auto x32 = x.to(torch::kFloat32);
        worst32 = std::max(worst32, (model.inverse(model.forward(x32, p32), p32) - x32).abs().max().item<double>());
    }
    const auto n = std::to_string(o.trials);
    out.push_back(at_most("round trip float64, " + n + " random models", worst64, 1e-8));
    out.push_back(at_most("round trip float32, " + n + " random models", worst32, 1e-4));
    return out;
}

// --------------------------------------------------------------------------

std::vector<CheckResult> gradients_suite(const CheckOptions& o)
{
    constexpr double kTol = 1e-3;
    std::vector<CheckResult> out;
    auto gen = make_generator(o.seed);
    const auto img = [&] { return at::rand({1, 3, 8, 8}, gen, kF64); };

    const auto extractor = PerceptualExtractor::fixed_random().to(kF64);
    const auto ref = img(), deg = img(), x = img();
    out.push_back(at_most("contrastive_loss",
                          gradient_check([&](const torch::Tensor& v) { return contrastive_loss(v, ref, deg, extractor); }, x),
                          kTol));
    out.push_back(at_most("frequency_loss",
                          gradient_check([&](const torch::Tensor& v) { return frequency_loss(v, ref); }, x), kTol));
    out.push_back(at_most(
        "bilateral_loss",
        gradient_check([&](const torch::Tensor& v) { return bilateral_from_outputs(v, ref, deg * 0.5, x, BilateralNorm::L2); },
                       deg),
        kTol));
    out.push_back(at_most("guide_loss", gradient_check([&](const torch::Tensor& v) { return guide_loss(v, ref); }, x), kTol));
    const auto target = (at::rand({1, 1, 4, 4}, gen, kF64) > 0.5).to(kF64);
    out.push_back(at_most("focal_loss",
                          gradient_check([&](const torch::Tensor& v) { return focal_loss(v, target); },
                                         at::rand({1, 1, 4, 4}, gen, kF64) * 0.8 + 0.1),
                          kTol));
    const auto gt = torch::tensor({{0.1, 0.1, 0.6, 0.5}, {0.3, 0.2, 0.9, 0.8}}, kF64);
    const auto pred = torch::tensor({{0.2, 0.05, 0.7, 0.45}, {0.25, 0.3, 0.8, 0.95}}, kF64);
    out.push_back(at_most("giou_loss", gradient_check([&](const torch::Tensor& v) { return giou_loss(v, gt); }, pred), kTol));
    const auto labels = at::randint(0, 4, {1, 8, 8}, gen, torch::kLong);
    out.push_back(at_most("segmentation_task_loss",
                          gradient_check([&](const torch::Tensor& v) { return segmentation_task_loss(v, labels); },
                                         at::randn({1, 4, 8, 8}, gen, kF64)),
                          kTol));
    const std::vector<std::vector<Box>> boxes{{{1.0, 1.5, 5.0, 6.0, 0}}};
    const auto obj = at::randn({1, 1, 2, 2}, gen, kF64), box = at::randn({1, 4, 2, 2}, gen, kF64);
    out.push_back(at_most("detection_task_loss (objectness)",
                          gradient_check([&](const torch::Tensor& v) { return detection_task_loss({v, box}, boxes, 8, 8).total; }, obj),
                          kTol));
    out.push_back(at_most("detection_task_loss (boxes)",
                          gradient_check([&](const torch::Tensor& v) { return detection_task_loss({obj, v}, boxes, 8, 8).total; }, box),
                          kTol));

    // Enhancement path on a random well-conditioned model.
    const auto model = random_enhancer(o.seed + 1, kF64);
    const auto table = model.parameters();
    const auto weights = at::randn({1, 3, 8, 8}, gen, kF64);
    const auto fixed_prior = model.prior(x);
    out.push_back(at_most("enhance w.r.t. input (fixed prior)",
                          gradient_check([&](const torch::Tensor& v) { return (model.enhance(v, fixed_prior) * weights).sum(); }, x),
                          kTol));
    out.push_back(at_most("degrade w.r.t. input (fixed prior)",
                          gradient_check([&](const torch::Tensor& v) { return (model.degrade(v, fixed_prior) * weights).sum(); }, x),
                          kTol));
    const std::string head = "hpe.head1.weight";
    out.push_back(at_most("enhance w.r.t. prior encoder head",
                          gradient_check(
                              [&](const torch::Tensor& v) {
                                  const auto t = replace(table, head, v);
                                  return (model.enhance(x, model.prior(x, &t), &t) * weights).sum();
                              },
                              table.at(head)),
                          kTol));
    const std::string mix = model.flow().step_prefix(2, 0) + ".invconv.weight";
    EnhancementLossOptions opts;
    out.push_back(at_most("enhancement_loss w.r.t. invconv weight",
                          gradient_check(
                              [&](const torch::Tensor& v) {
                                  const auto t = replace(table, mix, v);
                                  return enhancement_loss(model, x, ref, extractor, opts, &t).total;
                              },
                              table.at(mix)),
                          kTol));
    const std::string coupling = model.flow().sfa(1, 3).head_name() + ".weight";
    out.push_back(at_most("enhancement_loss w.r.t. coupling head",
                          gradient_check(
                              [&](const torch::Tensor& v) {
                                  const auto t = replace(table, coupling, v);
                                  return enhancement_loss(model, x, ref, extractor, opts, &t).total;
                              },
                              table.at(coupling)),
                          kTol));
    for (const char* branch : {"amp", "phase"}) {
        const std::string conv = model.flow().sfa(2, 0).prefix() + "." + branch + ".weight";
        out.push_back(at_most(std::string("enhancement_loss w.r.t. ") + branch + " conv",
                              gradient_check(
                                  [&](const torch::Tensor& v) {
                                      const auto t = replace(table, conv, v);
                                      return enhancement_loss(model, x, ref, extractor, opts, &t).total;
                                  },
                                  table.at(conv)),
                              kTol));
    }
    return out;
}

// --------------------------------------------------------------------------

/// Direct O(N^2) DFT of the last two dims.
std::vector<std::complex<double>> brute_dft(const torch::Tensor& x2d)
{
    const auto x = x2d.contiguous();
    const int64_t m = x.size(0), n = x.size(1);
    const auto* px = x.data_ptr<double>();
    std::vector<std::complex<double>> out(static_cast<std::size_t>(m * n));
    for (int64_t k = 0; k < m; ++k) {
        for (int64_t l = 0; l < n; ++l) {
            std::complex<double> acc = 0.0;
            for (int64_t a = 0; a < m; ++a) {
                for (int64_t b = 0; b < n; ++b) {
                    const double ang = -2.0 * std::numbers::pi * (double(k * a) / m + double(l * b) / n);
                    acc += px[a * n + b] * std::polar(1.0, ang);
                }
            }
            out[static_cast<std::size_t>(k * n + l)] = acc;
        }
    }
    return out;
}

std::vector<CheckResult> spectral_suite(const CheckOptions& o)
{
    std::vector<CheckResult> out;
    auto gen = make_generator(o.seed);
    const auto x = at::rand({2, 3, 16, 16}, gen);
    out.push_back(at_most("decompose/recompose round trip (float32)",
                          (fft_recompose(fft_decompose(x)) - x).abs().max().item<double>(), 1e-5));
    for (int64_t side : {2, 4}) {
        const auto v = at::randn({side, side}, gen, kF64);
        const auto s = fft_decompose(v);
        const auto ref = brute_dft(v);
        const auto a = s.amplitude.contiguous(), p = s.phase.contiguous();
        double err = 0.0;
        for (int64_t i = 0; i < side * side; ++i) {
            const auto z = std::polar(a.data_ptr<double>()[i], p.data_ptr<double>()[i]);
            err = std::max(err, std::abs(z - ref[static_cast<std::size_t>(i)]));
        }
        const auto tag = std::to_string(side) + "x" + std::to_string(side);
        out.push_back(at_most(tag + " spectrum vs direct DFT", err, 1e-9));
    }
    return out;
}

// --------------------------------------------------------------------------

std::vector<CheckResult> losses_suite(const CheckOptions& o)
{
    std::vector<CheckResult> out;
    auto gen = make_generator(o.seed);

    out.push_back(close_to("uniform 4-class cross entropy",
                           segmentation_task_loss(torch::zeros({1, 4, 3, 3}, kF64), at::randint(0, 4, {1, 3, 3}, gen, torch::kLong))
                               .item<double>(),
                           std::log(4.0), 1e-6));
    out.push_back(close_to("GIoU loss of disjoint unit boxes",
                           giou_loss(torch::tensor({{0.0, 0.0, 1.0, 1.0}}, kF64), torch::tensor({{1.0, 1.0, 2.0, 2.0}}, kF64))
                               .item<double>(),
                           1.5, 1e-6));

    EnhancerConfig identity;
    identity.flow.actnorm_init = ActnormInit::Identity;
    identity.flow.invconv_init = InvConvInit::Identity;
    const Enhancer model(identity, o.seed, kF64);
    const auto iu = at::rand({1, 3, 16, 16}, gen, kF64) * 0.9;
    out.push_back(close_to("bilateral loss, identity model, offset 0.1",
                           bilateral_loss(model, iu, iu + 0.1).item<double>(), 0.02, 1e-6));

    std::vector<torch::Tensor> f, pos, neg;
    for (int i = 0; i < 5; ++i) {
        f.push_back(at::randn({1, 4, 4, 4}, gen, kF64));
        pos.push_back(f.back() + 1.0);
        neg.push_back(f.back() - 1.0);
    }
    out.push_back(close_to("contrastive loss, equal distances", contrastive_from_features(f, pos, neg).item<double>(),
                           1.46875, 1e-6));
    out.push_back(close_to("focal loss p_t = 0.9",
                           focal_loss(torch::tensor({0.9}, kF64), torch::tensor({1.0}, kF64)).item<double>(),
                           0.25 * 0.01 * -std::log(0.9), 1e-9));
    out.push_back(close_to("focal loss gamma 0 alpha 1 p_t = 0.5",
                           focal_loss(torch::tensor({0.5}, kF64), torch::tensor({1.0}, kF64), 1.0, 0.0).item<double>(),
                           std::log(2.0), 1e-9));
    auto a = torch::zeros({1, 1, 2, 2}, kF64), b = a.clone();
    b[0][0][1][0] = 0.1;
    out.push_back(close_to("frequency loss, one pixel off by 0.1", frequency_loss(a, b).item<double>(), 0.1, 1e-9));
    out.push_back(close_to("guide loss, constant difference 0.5",
                           guide_loss(torch::zeros({1, 2, 3, 3}, kF64), torch::full({1, 2, 3, 3}, 0.5, kF64)).item<double>(),
                           0.25, 1e-12));
    out.push_back(close_to("weighted enhancement sum",
                           combine_enhancement({1.0, 0.05, 1.0, 0.2}, torch::tensor(0.4, kF64), torch::tensor(2.0, kF64),
                                               torch::tensor(0.02, kF64))
                               .item<double>(),
                           0.52, 1e-12));
    return out;
}

}  // namespace

double gradient_check(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x, double h,
                      int64_t max_coords)
{
    auto x0 = x.detach().clone().to(kF64).requires_grad_(true);
    const auto y = f(x0);
    const auto grad = torch::autograd::grad({y}, {x0})[0].detach().flatten();

    torch::NoGradGuard guard;
    const int64_t n = x0.numel();
    const int64_t count = std::min(n, max_coords);
    auto flat = x0.detach().clone().flatten();
    std::vector<double> analytic, numeric;
    for (int64_t k = 0; k < count; ++k) {
        const int64_t i = count == n ? k : (k * n) / count;
        const double orig = flat[i].item<double>();
        flat[i] = orig + h;
        const double up = f(flat.view(x0.sizes())).item<double>();
        flat[i] = orig - h;
        const double down = f(flat.view(x0.sizes())).item<double>();
        flat[i] = orig;
        numeric.push_back((up - down) / (2.0 * h));
        analytic.push_back(grad[i].item<double>());
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
        na += analytic[k] * analytic[k];
        nn += numeric[k] * numeric[k];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
}

void randomize_encoder_heads(Enhancer& model, uint64_t seed, double scale)
{
    torch::NoGradGuard guard;
    auto gen = make_generator(seed ^ 0x68656164ULL);
    auto& table = model.encoder_params();
    for (std::size_t i = 0; i < table.size(); ++i) {
        if (table.names()[i].rfind("hpe.head", 0) != 0) continue;
        auto& t = const_cast<torch::Tensor&>(table.tensors()[i]);
        t.add_(at::randn(t.sizes(), gen, kF64).to(t.scalar_type()) * scale);
    }
}

std::vector<CheckResult> run_check_suite(const std::string& suite, const CheckOptions& options)
{
    if (suite == "invertibility") return invertibility_suite(options);
    if (suite == "gradients") return gradients_suite(options);
    if (suite == "spectral") return spectral_suite(options);
    if (suite == "losses") return losses_suite(options);
    throw std::invalid_argument("unknown suite '" + suite + "'");
}

bool print_check_table(std::ostream& out, const std::string& suite, const std::vector<CheckResult>& results)
{
    bool all = true;
    out << "suite: " << suite << '\n';
    for (const auto& r : results) {
        all = all && r.pass;
        out << (r.pass ? "  PASS  " : "  FAIL  ") << std::left << std::setw(44) << r.name << std::right
            << std::setw(14) << std::scientific << std::setprecision(3) << r.value << "  <= " << r.tolerance
            << std::defaultfloat;
        if (!r.detail.empty()) out << "  (" << r.detail << ')';
        out << '\n';
    }
    out << (all ? "all checks passed" : "some checks FAILED") << '\n';
    return all;
}

}  // namespace hupe
