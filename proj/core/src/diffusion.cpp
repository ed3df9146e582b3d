#include "garment/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "garment/rng.hpp"

namespace garment {

Schedule Schedule::make(Kind kind, int T) {
    if (T < 2) throw std::invalid_argument("Schedule: T must be >= 2");
    Schedule s;
    s.kind = kind;
    s.T = T;
    s.alpha_bar.assign(T, 1.0);
    if (kind == Kind::linear) {
        // Beta range rescaled so total noise injected matches the usual
        // 1000-step setting; beta_0 = 0 keeps alpha_bar[0] at exactly 1.
        const double lo = 1e-4 * 1000.0 / T;
        const double hi = 0.02 * 1000.0 / T;
        double prod = 1.0;
        for (int t = 1; t < T; ++t) {
            const double beta = lo + (hi - lo) * double(t - 1) / double(std::max(1, T - 2));
            prod *= 1.0 - beta;
            s.alpha_bar[t] = prod;
        }
    } else {
        using std::numbers::pi;
        const double offset = 0.008;
        auto f = [&](double t) {
            const double a = (t / T + offset) / (1.0 + offset) * pi / 2.0;
            return std::cos(a) * std::cos(a);
        };
        double prev_f = f(0.0);
        double prod = 1.0;
        for (int t = 1; t < T; ++t) {
            const double ft = f(double(t));
            const double beta = std::min(0.999, 1.0 - ft / prev_f);
            prod *= 1.0 - beta;
            s.alpha_bar[t] = prod;
            prev_f = ft;
        }
    }
    s.validate();
    return s;
}

void Schedule::validate() const {
    if (T < 2 || int(alpha_bar.size()) != T) throw std::invalid_argument("Schedule: alpha_bar must have T entries");
    if (alpha_bar[0] != 1.0) throw std::invalid_argument("Schedule: alpha_bar[0] must be exactly 1");
    for (int t = 0; t < T; ++t) {
        if (!(alpha_bar[t] > 0.0) || alpha_bar[t] > 1.0)
            throw std::invalid_argument("Schedule: alpha_bar out of (0,1]");
        if (t > 0 && alpha_bar[t] >= alpha_bar[t - 1])
            throw std::invalid_argument("Schedule: alpha_bar must be strictly decreasing");
    }
}

double Schedule::signal(int t) const { return std::sqrt(alpha_bar.at(t)); }
double Schedule::noise(int t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }

namespace {

void check_t(int t, const Schedule& s, const char* who) {
    if (t < 0 || t >= s.T) throw std::out_of_range(std::string(who) + ": t out of [0,T)");
}

}  // namespace

Grid forward_diffuse(const Grid& x0, int t, const Grid& eps, const Schedule& schedule) {
    check_t(t, schedule, "forward_diffuse");
    if (x0.shape() != eps.shape()) throw std::invalid_argument("forward_diffuse: shape mismatch");
    const double a = schedule.signal(t), b = schedule.noise(t);
    Grid out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

Grid v_target(const Grid& x0, const Grid& eps, int t, const Schedule& schedule) {
    check_t(t, schedule, "v_target");
    if (x0.shape() != eps.shape()) throw std::invalid_argument("v_target: shape mismatch");
    const double a = schedule.signal(t), b = schedule.noise(t);
    Grid out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * eps[i] - b * x0[i];
    return out;
}

Grid estimate_x0(const Grid& x_t, const Grid& v_pred, int t, const Schedule& schedule) {
    check_t(t, schedule, "estimate_x0");
    if (x_t.shape() != v_pred.shape()) throw std::invalid_argument("estimate_x0: shape mismatch");
    const double a = schedule.signal(t), b = schedule.noise(t);
    Grid out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_t[i] - b * v_pred[i];
    return out;
}

Grid sample(const Denoiser& model, const Schedule& schedule, const ComponentVocabulary& vocab,
            const std::string& caption, const SamplerConfig& cfg, std::uint64_t seed) {
    if (cfg.steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
    if (cfg.eta < 0) throw std::invalid_argument("sample: eta must be >= 0");
    const Conditioning cond = conditioning_from_caption(vocab, caption);

    const int S = model.spec().image_size;
    Rng rng(seed, "sample/" + caption);
    Grid x(3, S, S);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.gaussian();

    // Strided timestep ladder from T-1 down to 0. A single step predicts once
    // at full noise and keeps that clean estimate.
    std::vector<int> ts(cfg.steps);
    for (int i = 0; i < cfg.steps; ++i) {
        const double frac = cfg.steps == 1 ? 0.0 : double(i) / double(cfg.steps - 1);
        ts[i] = int(std::lround((1.0 - frac) * (schedule.T - 1)));
    }
    if (cfg.steps > 1) ts.back() = 0;

    Grid x0_hat;
    for (int i = 0; i < cfg.steps; ++i) {
        const int t = ts[i];
        const auto out = model.predict(x, t, cond);
        x0_hat = estimate_x0(x, out.v_pred, t, schedule);
        for (std::size_t j = 0; j < x0_hat.size(); ++j) x0_hat[j] = std::clamp(x0_hat[j], 0.0, 1.0);
        if (i + 1 == cfg.steps) break;

        const int t_prev = ts[i + 1];
        const double a_t = schedule.signal(t), b_t = schedule.noise(t);
        const double ab_prev = schedule.alpha_bar[t_prev];
        Grid eps_hat(x.shape());
        if (b_t > 0) {
            for (std::size_t j = 0; j < x.size(); ++j) eps_hat[j] = (x[j] - a_t * x0_hat[j]) / b_t;
        }
        const double sigma = cfg.eta *
                             std::sqrt((1.0 - ab_prev) / (1.0 - schedule.alpha_bar[t])) *
                             std::sqrt(1.0 - schedule.alpha_bar[t] / ab_prev);
        const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
        const double a_prev = std::sqrt(ab_prev);
        for (std::size_t j = 0; j < x.size(); ++j)
            x[j] = a_prev * x0_hat[j] + dir * eps_hat[j] + sigma * rng.gaussian();
    }
    return x0_hat;
}

}  // namespace garment
