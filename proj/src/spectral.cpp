#include "hupe/spectral.hpp"

#include <numbers>
#include <stdexcept>

namespace hupe {

Spectrum fft_decompose(const torch::Tensor& x)
{
    require_pow2_spatial(x, "fft_decompose");
    const auto f = torch::fft::fft2(x);
    auto re = torch::real(f), im = torch::imag(f);
    if (!x.is_complex()) {
        // Self-conjugate bins of a real signal are real. Rounding leaves a
        // signed residue there that would flip their phase between pi and -pi.
        const int64_t m = x.size(-2), n = x.size(-1);
        auto real_bins = torch::zeros({m, n}, torch::kBool);
        for (int64_t k : {int64_t{0}, m / 2}) {
            for (int64_t l : {int64_t{0}, n / 2}) real_bins[k][l] = true;
        }
        im = torch::where(real_bins, torch::zeros_like(im), im);
    }
    auto phase = torch::atan2(im, re);
    // atan2 on a negative-zero imaginary part lands on -pi; keep the half-open range.
    phase = torch::where(phase <= -std::numbers::pi, phase + 2.0 * std::numbers::pi, phase);
    return {torch::abs(f), phase};
}

torch::Tensor fft_recompose(const Spectrum& s)
{
    if (!s.amplitude.sizes().equals(s.phase.sizes())) {
        throw std::invalid_argument("fft_recompose: amplitude " + shape_string(s.amplitude) + " vs phase " +
                                    shape_string(s.phase));
    }
    require_pow2_spatial(s.amplitude, "fft_recompose");
    const auto spec = torch::complex(s.amplitude * torch::cos(s.phase), s.amplitude * torch::sin(s.phase));
    return torch::real(torch::fft::ifft2(spec));
}

SfaBlock::SfaBlock(std::string prefix, SfaConfig config) : prefix_(std::move(prefix)), config_(config)
{
    if (config_.channels <= 0) throw std::invalid_argument("SfaBlock: channels must be positive");
    const int64_t c = config_.channels;
    const int64_t w = config_.hidden();
    res1_ = {prefix_ + ".res1", c, w, 3, 1};
    res2_ = {prefix_ + ".res2", w, c, 3, 1};
    amp_ = {prefix_ + ".amp", c, c, 3, 1};
    phase_ = {prefix_ + ".phase", 2 * c, 2 * c, 3, 1};
    fuse1_ = {prefix_ + ".fuse1", 3 * c, w, 3, 1};
    fuse2_ = {prefix_ + ".fuse2", w, w, 3, 1};
    fuse3_ = {prefix_ + ".fuse3", w, w, 3, 1};
    head_ = {prefix_ + ".head", w, 2 * c, 3, 1};
}

void SfaBlock::init(ParamTable& table, at::Generator& gen, torch::ScalarType dtype) const
{
    for (const Conv2d* conv : {&res1_, &res2_, &amp_, &phase_, &fuse1_, &fuse2_, &fuse3_}) {
        conv->init(table, gen, dtype);
    }
    head_.init_zero(table, 0.0, dtype);
}

SfaBlock::Output SfaBlock::forward(const torch::Tensor& u1, const ParamTable& table) const
{
    const auto spatial = u1 + res2_(torch::relu(res1_(u1, table)), table);

    // Phase enters as a softened unit phasor F / sqrt(|F|^2 + k^2), with k a
    // fraction of the channel's RMS amplitude: exp(iP) on strong bins, and no
    // jump where a weak bin's phase wraps around pi or becomes undefined.
    const auto softened = [](const torch::Tensor& re, const torch::Tensor& im) {
        const auto power = re * re + im * im;
        const auto floor = kPhasorSoftening * kPhasorSoftening * power.mean({-2, -1}, true) + kPhasorEps;
        return torch::rsqrt(power + floor);
    };
    const auto f = torch::fft::fft2(u1);
    const auto amplitude = torch::abs(f);
    const auto soft = softened(torch::real(f), torch::imag(f));
    const auto cos_p = torch::real(f) * soft, sin_p = torch::imag(f) * soft;
    const auto back = [](const torch::Tensor& re, const torch::Tensor& im) {
        return torch::real(torch::fft::ifft2(torch::complex(re, im)));
    };

    torch::Tensor amplitude_branch, phase_branch;
    if (config_.use_amplitude) {
        const auto a = amp_(amplitude, table);
        amplitude_branch = back(a * cos_p, a * sin_p);
    } else {
        amplitude_branch = torch::zeros_like(u1);
    }
    if (config_.use_phase) {
        const int64_t c = u1.size(1);
        const auto mixed = phase_(torch::cat({cos_p, sin_p}, 1), table);
        const auto re = mixed.narrow(1, 0, c), im = mixed.narrow(1, c, c);
        const auto gain = amplitude * softened(re, im);
        phase_branch = back(gain * re, gain * im);
    } else {
        phase_branch = torch::zeros_like(u1);
    }

    auto h = torch::cat({spatial, amplitude_branch, phase_branch}, 1);
    h = torch::relu(fuse1_(h, table));
    h = torch::relu(fuse2_(h, table));
    h = torch::relu(fuse3_(h, table));
    const auto out = head_(h, table);

    const auto parts = out.chunk(2, 1);
    auto scale = torch::exp(torch::clamp(parts[0], -kLogScaleBound, kLogScaleBound));
    return {scale, parts[1]};
}

torch::Tensor faac_apply(const torch::Tensor& u, const SfaBlock& sfa, const ParamTable& table, Direction dir)
{
    if (u.dim() != 4 || u.size(1) % 2 != 0) {
        throw std::invalid_argument("faac_apply: channel count must be even, got " + shape_string(u));
    }
    if (u.size(1) / 2 != sfa.config().channels) {
        throw std::invalid_argument("faac_apply: " + sfa.prefix() + " expects " +
                                    std::to_string(2 * sfa.config().channels) + " channels, got " +
                                    std::to_string(u.size(1)));
    }
    const auto halves = u.chunk(2, 1);
    const auto& u1 = halves[0];
    const auto& u2 = halves[1];
    const auto [scale, shift] = sfa.forward(u1, table);
    const auto v2 = dir == Direction::Forward ? scale * u2 + shift : (u2 - shift) / scale;
    return torch::cat({u1, v2}, 1);
}

}  // namespace hupe
