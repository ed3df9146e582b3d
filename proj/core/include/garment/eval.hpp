#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "garment/dataset.hpp"
#include "garment/denoiser.hpp"
#include "garment/diffusion.hpp"

namespace garment {

/// One generated sample scored by the oracle. spatial_ok_per_class uses -1
/// for classes the caption does not mention.
struct TrialLog {
    int caption_index = 0;
    int sample_index = 0;
    std::string caption;
    bool quantity_ok = false;
    bool spatial_ok = false;
    std::vector<int> counts;                // per class, oracle detections
    std::vector<int> spatial_ok_per_class;  // -1 absent, 0 miss, 1 hit
};

struct AccuracyReport {
    std::vector<std::string> classes;
    std::uint64_t model_steps = 0;  // training-step counter of the evaluated checkpoint
    int n_captions = 0;
    int n_samples_per_caption = 0;
    int skipped_captions = 0;
    double quantity_accuracy = 0.0;  // all class counts match the caption
    double spatial_accuracy = 0.0;   // every mentioned component centered in its bucket
    std::vector<double> per_class_quantity;
    std::vector<double> per_class_spatial;
    std::vector<TrialLog> trials;
};

/// Samples n_samples images per caption and scores each with the counting
/// oracle. Captions that fail to parse are skipped and counted. Trial seeds
/// derive from (seed, caption index, sample index), so reports are
/// reproducible and individual trials can be replayed.
AccuracyReport evaluate_accuracy(const Denoiser& model, const Schedule& schedule,
                                 const ComponentVocabulary& vocab, const std::vector<std::string>& captions,
                                 int n_samples, const SamplerConfig& sampler, std::uint64_t seed,
                                 int threads = 1);

/// Recomputes the headline and per-class fractions from the trial log;
/// the writers call this and tests use it as the aggregation oracle.
void aggregate_report(AccuracyReport& report);

void save_accuracy_json(const AccuracyReport& report, const std::filesystem::path& path);
void save_accuracy_csv(const AccuracyReport& report, const std::filesystem::path& path);
AccuracyReport load_accuracy_json(const std::filesystem::path& path);

/// Mean IoU between each present component's max-normalized attention maps
/// (thresholded at 0.5) and its mask resampled to map resolution (same
/// threshold), over the given records at one noise level. Noise draws derive
/// from (seed, record id).
double attention_mask_iou(const Denoiser& model, const Schedule& schedule, const Dataset& dataset,
                          const std::vector<std::string>& record_ids, int t, std::uint64_t seed);

}  // namespace garment
