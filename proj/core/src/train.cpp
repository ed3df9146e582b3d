#include "garment/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "garment/glyph.hpp"
#include "garment/log.hpp"
#include "garment/rng.hpp"

namespace garment {

void TrainConfig::validate() const {
    weights.validate();
    if (!(lr > 0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (momentum < 0 || momentum >= 1) throw std::invalid_argument("TrainConfig: momentum must be in [0,1)");
    if (grad_clip < 0) throw std::invalid_argument("TrainConfig: grad_clip must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (threads < 1) throw std::invalid_argument("TrainConfig: threads must be >= 1");
}

StepResult item_objective(const Denoiser& model, const Schedule& schedule, const TrainItem& item,
                          const ComponentVocabulary& vocab, int t, const Grid& eps, const TrainConfig& cfg,
                          std::vector<double>* grad) {
    const auto& w = cfg.weights;
    const GarmentRecord& anchor = *item.anchor;
    const Conditioning cond = conditioning_from_components(anchor.components);

    const Grid x_t = forward_diffuse(anchor.image, t, eps, schedule);
    Denoiser::Workspace ws;
    const PredictOutput out = model.forward(x_t, t, cond, ws);

    const Grid target = v_target(anchor.image, eps, t, schedule);
    StepResult res;
    res.base = mse(out.v_pred, target);

    const std::size_t n = out.v_pred.size();
    Grid d_v(out.v_pred.shape());
    for (std::size_t i = 0; i < n; ++i) d_v[i] = 2.0 * (out.v_pred[i] - target[i]) / double(n);

    const bool corrections_on = cfg.correction_t_cutoff < 0 || t <= cfg.correction_t_cutoff;
    double visual = 0.0, spatial = 0.0, quant = 0.0, racl = 0.0;
    AttentionMapSet d_attn;
    Grid d_heat;

    if (corrections_on) {
        const double b_t = schedule.noise(t);
        Grid x0_hat;
        Grid d_x0;
        const bool need_x0 = w.omega_r > 0 || w.omega_v > 0;
        if (need_x0) {
            x0_hat = estimate_x0(x_t, out.v_pred, t, schedule);
            d_x0 = Grid(x0_hat.shape());
        }
        if (w.omega_r > 0) {
            racl = racl_loss(x0_hat, item.positive->image, item.negative->image, cfg.racl_clamp);
            const Grid gr = racl_grad(x0_hat, item.positive->image, item.negative->image, cfg.racl_clamp);
            for (std::size_t i = 0; i < d_x0.size(); ++i) d_x0[i] += w.omega_r * gr[i];
        }
        if (w.omega_v > 0) {
            const CosineAlignmentScorer scorer(vocab);
            Grid gv;
            visual = visual_loss_with_grad(x0_hat, anchor.components, scorer, gv, w.epsilon);
            for (std::size_t i = 0; i < d_x0.size(); ++i) d_x0[i] += w.omega_v * gv[i];
        }
        if (need_x0) {
            // x0_hat is affine in v_pred with slope -noise(t).
            for (std::size_t i = 0; i < n; ++i) d_v[i] += -b_t * d_x0[i];
        }
        if (w.omega_s > 0) {
            spatial = spatial_loss_with_grad(out.attention, anchor.components, d_attn);
            for (auto& layers : d_attn.maps)
                for (auto& m : layers)
                    for (std::size_t i = 0; i < m.size(); ++i) m[i] *= w.omega_s;
        }
        if (w.omega_q > 0) {
            if (!model.spec().heatmap_head)
                throw std::invalid_argument("quantitative correction requires the heatmap head");
            const int K = model.spec().n_classes;
            const int S = model.spec().image_size;
            std::vector<double> q_hat(K);
            std::vector<int> q(K);
            std::vector<double> areas(K);
            for (int i = 0; i < K; ++i) {
                areas[i] = double(nominal_glyph_area(i, S));
                Grid hm(1, S, S);
                std::copy(out.heatmaps.channel(i), out.heatmaps.channel(i) + std::size_t(S) * S, hm.data());
                q_hat[i] = soft_count(hm, areas[i]);
                q[i] = anchor.components[i].quantity;
            }
            quant = quantitative_loss(q_hat, q, CountErrorMode::smooth);
            const auto dq = quantitative_loss_grad(q_hat, q);
            d_heat = Grid(out.heatmaps.shape());
            for (int i = 0; i < K; ++i) {
                const double gq = w.omega_q * dq[i] / areas[i];
                double* plane = d_heat.channel(i);
                std::fill(plane, plane + std::size_t(S) * S, gq);
            }
        }
    }

    res.corrections = total_loss(visual, spatial, quant, racl, w);
    res.objective = res.base + res.corrections.total;
    if (!std::isfinite(res.objective))
        throw std::runtime_error("non-finite training objective (base " + std::to_string(res.base) + ", total " +
                                 std::to_string(res.corrections.total) + ")");

    if (grad) model.backward(ws, d_v, d_attn, d_heat, *grad);
    return res;
}

Trainer::Trainer(Denoiser model, Schedule schedule, const Dataset& dataset, std::vector<ContrastivePair> pairs,
                 TrainConfig cfg)
    : model_(std::move(model)), schedule_(std::move(schedule)), dataset_(dataset), cfg_(cfg) {
    cfg_.validate();
    schedule_.validate();
    if (pairs.empty()) throw std::invalid_argument("Trainer: no contrastive pairs");
    if (cfg_.weights.omega_q > 0 && !model_.spec().heatmap_head)
        throw std::invalid_argument("Trainer: quantitative correction requires the heatmap head");
    if (model_.spec().n_classes != dataset_.vocabulary.k())
        throw std::invalid_argument("Trainer: model class count does not match the dataset vocabulary");
    items_.reserve(pairs.size());
    for (const auto& p : pairs)
        items_.push_back({&dataset_.by_id(p.anchor_id), &dataset_.by_id(p.positive_id),
                          &dataset_.by_id(p.negative_id)});
    velocity_.assign(model_.n_parameters(), 0.0);
    reshuffle();
}

void Trainer::reshuffle() {
    order_.resize(items_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    Rng rng(cfg_.seed, "order/" + std::to_string(epoch_));
    for (std::size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[std::size_t(rng.below(i))]);
    cursor_ = 0;
}

StepResult Trainer::step() {
    const int B = cfg_.batch_size;
    const int S = model_.spec().image_size;

    struct Slot {
        const TrainItem* item;
        int t;
        Grid eps;
        StepResult result;
        std::vector<double> grad;
    };
    std::vector<Slot> slots(B);

    // All randomness is drawn serially here so thread count cannot change it.
    Rng draw(cfg_.seed, "draw/" + std::to_string(model_.training_steps));
    for (auto& slot : slots) {
        if (cursor_ >= order_.size()) {
            ++epoch_;
            reshuffle();
        }
        slot.item = &items_[order_[cursor_++]];
        slot.t = int(draw.below(std::uint64_t(schedule_.T)));
        slot.eps = Grid(3, S, S);
        for (std::size_t i = 0; i < slot.eps.size(); ++i) slot.eps[i] = draw.gaussian();
        slot.grad.assign(model_.n_parameters(), 0.0);
    }

    auto run_slot = [&](Slot& slot) {
        slot.result = item_objective(model_, schedule_, *slot.item, dataset_.vocabulary, slot.t, slot.eps, cfg_,
                                     &slot.grad);
    };
    const int n_threads = std::max(1, std::min(cfg_.threads, B));
    if (n_threads == 1) {
        for (auto& slot : slots) run_slot(slot);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int i = 0; i < n_threads; ++i)
            pool.emplace_back([&] {
                for (int j = next.fetch_add(1); j < B; j = next.fetch_add(1)) run_slot(slots[j]);
            });
        for (auto& th : pool) th.join();
    }

    // Reduce in slot order: deterministic at any thread count.
    std::vector<double> grad(model_.n_parameters(), 0.0);
    StepResult mean;
    for (const auto& slot : slots) {
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += slot.grad[i];
        mean.base += slot.result.base;
        mean.corrections.visual += slot.result.corrections.visual;
        mean.corrections.spatial += slot.result.corrections.spatial;
        mean.corrections.quantitative += slot.result.corrections.quantitative;
        mean.corrections.racl += slot.result.corrections.racl;
    }
    const double inv_b = 1.0 / double(B);
    for (auto& gv : grad) gv *= inv_b;
    mean.base *= inv_b;
    mean.corrections = total_loss(mean.corrections.visual * inv_b, mean.corrections.spatial * inv_b,
                                  mean.corrections.quantitative * inv_b, mean.corrections.racl * inv_b,
                                  cfg_.weights);
    mean.objective = mean.base + mean.corrections.total;

    if (cfg_.grad_clip > 0) {
        double norm2 = 0.0;
        for (double gv : grad) norm2 += gv * gv;
        const double norm = std::sqrt(norm2);
        if (norm > cfg_.grad_clip) {
            const double scale = cfg_.grad_clip / norm;
            for (auto& gv : grad) gv *= scale;
        }
    }

    auto& params = model_.parameters();
    if (cfg_.momentum > 0) {
        for (std::size_t i = 0; i < params.size(); ++i) {
            velocity_[i] = cfg_.momentum * velocity_[i] + grad[i];
            params[i] -= cfg_.lr * velocity_[i];
        }
    } else {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg_.lr * grad[i];
    }
    ++model_.training_steps;
    return mean;
}

}  // namespace garment
