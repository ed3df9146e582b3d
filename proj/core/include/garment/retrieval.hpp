#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "garment/dataset.hpp"
#include "garment/similarity.hpp"

namespace garment {

struct RetrievalConfig {
    int subset_size = 64;
    int n_positive = 2;
    int n_negative = 2;
    std::uint64_t seed = 0;
    enum class FilterMode { median, none };
    FilterMode filter_mode = FilterMode::median;
    int epoch = 0;  // folded into the per-anchor stream when resampling per epoch

    void validate(int dataset_size) const;
};

struct RankedNeighbor {
    std::string candidate_id;
    double similarity = 0.0;
    double evaluation = 0.0;

    bool operator==(const RankedNeighbor&) const = default;
};

struct ContrastivePair {
    std::string anchor_id;
    std::string positive_id;
    std::string negative_id;
    double s_pos = 0.0;
    double s_neg = 0.0;
    double e_pos = 0.0;
    double e_neg = 0.0;
};

/// Combined evaluation score E = (aesthetic + preference) / 2.
double evaluation_score(const GarmentRecord& record);

/// N distinct candidate ids excluding the anchor, a pure function of
/// (cfg.seed, cfg.epoch, anchor_id).
std::vector<std::string> draw_candidate_subset(const Dataset& dataset, const std::string& anchor_id,
                                               const RetrievalConfig& cfg);

/// Candidates sorted descending by overall similarity to the anchor, ties
/// broken by ascending id.
std::vector<RankedNeighbor> rank_candidates(const Dataset& dataset, const GarmentRecord& anchor,
                                            const std::vector<std::string>& candidates,
                                            const SimilarityConfig& sim_cfg);

/// Positive picks come from the top half of the ranking, negatives from the
/// bottom half; the median evaluation score gates each pool, with a logged
/// relaxation when a gated pool runs short. Emits the full cross product of
/// n_positive x n_negative pairs.
std::vector<ContrastivePair> select_contrastive_pairs(const std::string& anchor_id,
                                                      const std::vector<RankedNeighbor>& ranked,
                                                      const RetrievalConfig& cfg);

/// Runs subset draw, ranking and selection for every record in the dataset.
std::vector<ContrastivePair> build_all_pairs(const Dataset& dataset, const RetrievalConfig& cfg,
                                             const SimilarityConfig& sim_cfg, int threads = 1);

void save_pairs(const std::vector<ContrastivePair>& pairs, const std::filesystem::path& file);
std::vector<ContrastivePair> load_pairs(const std::filesystem::path& file);

/// Caches each record's (id, evaluation score, per-component quantities and
/// descriptions) so ranking inputs can be audited without reloading images.
void save_index(const Dataset& dataset, const std::filesystem::path& file);

}  // namespace garment
