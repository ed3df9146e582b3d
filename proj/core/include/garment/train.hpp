#pragma once

#include <cstdint>
#include <vector>

#include "garment/corrections.hpp"
#include "garment/dataset.hpp"
#include "garment/denoiser.hpp"
#include "garment/diffusion.hpp"
#include "garment/retrieval.hpp"

namespace garment {

struct TrainConfig {
    CorrectionWeights weights;
    double lr = 1e-3;
    double momentum = 0.0;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
    int batch_size = 2;
    std::uint64_t seed = 0;
    bool racl_clamp = false;
    int correction_t_cutoff = -1;  // corrections only at t <= cutoff; -1 applies them at every t
    int threads = 1;

    void validate() const;
};

/// One training example: an anchor record with its retrieved contrast images.
struct TrainItem {
    const GarmentRecord* anchor = nullptr;
    const GarmentRecord* positive = nullptr;
    const GarmentRecord* negative = nullptr;
};

struct StepResult {
    LossBreakdown corrections;
    double base = 0.0;       // v-prediction mse, weight 1
    double objective = 0.0;  // base + corrections.total
};

/// Objective and parameter gradient for a single item at fixed noise draws.
/// Touches no RNG and applies no update, so it is the unit the
/// finite-difference harness probes. grad may be null for value-only
/// evaluation; when given it must be zeroed and sized n_parameters.
StepResult item_objective(const Denoiser& model, const Schedule& schedule, const TrainItem& item,
                          const ComponentVocabulary& vocab, int t, const Grid& eps, const TrainConfig& cfg,
                          std::vector<double>* grad);

class Trainer {
public:
    Trainer(Denoiser model, Schedule schedule, const Dataset& dataset, std::vector<ContrastivePair> pairs,
            TrainConfig cfg);

    /// One optimizer update over the next batch of pairs. Draw order is fixed
    /// by (seed, step index) and gradient reduction runs in slot order, so
    /// results are bitwise identical at any thread count.
    StepResult step();

    const Denoiser& model() const { return model_; }
    Denoiser& model() { return model_; }
    const Schedule& schedule() const { return schedule_; }
    std::uint64_t steps_done() const { return model_.training_steps; }

private:
    Denoiser model_;
    Schedule schedule_;
    const Dataset& dataset_;
    std::vector<TrainItem> items_;
    TrainConfig cfg_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    int epoch_ = 0;
    std::vector<double> velocity_;

    void reshuffle();
};

}  // namespace garment
