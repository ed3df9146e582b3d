#pragma once

#include <cstdint>
#include <vector>

#include "garment/denoiser.hpp"
#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

/// Noise schedule as cumulative signal coefficients. alpha_bar[0] is exactly
/// 1, so t=0 carries no noise; the sequence is strictly decreasing and stays
/// in (0, 1].
struct Schedule {
    enum class Kind { linear, cosine };
    Kind kind = Kind::linear;
    int T = 200;
    std::vector<double> alpha_bar;

    static Schedule make(Kind kind = Kind::linear, int T = 200);
    void validate() const;

    double signal(int t) const;  // sqrt(alpha_bar[t])
    double noise(int t) const;   // sqrt(1 - alpha_bar[t])
};

/// x_t = signal(t) * x0 + noise(t) * eps.
Grid forward_diffuse(const Grid& x0, int t, const Grid& eps, const Schedule& schedule);

/// v = signal(t) * eps - noise(t) * x0, the regression target.
Grid v_target(const Grid& x0, const Grid& eps, int t, const Schedule& schedule);

/// x0 = signal(t) * x_t - noise(t) * v; exact inverse of the pair above.
Grid estimate_x0(const Grid& x_t, const Grid& v_pred, int t, const Schedule& schedule);

struct SamplerConfig {
    int steps = 10;    // strided denoising steps
    double eta = 1.0;  // 0 deterministic, 1 full ancestral noise
};

/// Generates one image for a caption. Deterministic in (model, caption,
/// config, seed); the running estimate of the clean image is clipped to
/// [0,1] each step and the final output lies in [0,1].
Grid sample(const Denoiser& model, const Schedule& schedule, const ComponentVocabulary& vocab,
            const std::string& caption, const SamplerConfig& cfg, std::uint64_t seed);

}  // namespace garment
