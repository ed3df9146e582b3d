#include "garment/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "garment/log.hpp"
#include "garment/rng.hpp"

namespace garment {

namespace {

using ordered_json = nlohmann::ordered_json;

double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void RetrievalConfig::validate(int dataset_size) const {
    if (subset_size < 1) throw std::invalid_argument("RetrievalConfig: subset_size must be >= 1");
    if (n_positive < 1 || n_negative < 1)
        throw std::invalid_argument("RetrievalConfig: pool sizes must be >= 1");
    if (n_positive + n_negative > subset_size)
        throw std::invalid_argument("RetrievalConfig: n_positive + n_negative must be <= subset_size");
    if (subset_size > dataset_size - 1)
        throw std::invalid_argument("RetrievalConfig: subset_size must be <= dataset size - 1");
}

double evaluation_score(const GarmentRecord& record) {
    return 0.5 * (record.aesthetic_score + record.preference_score);
}

std::vector<std::string> draw_candidate_subset(const Dataset& dataset, const std::string& anchor_id,
                                               const RetrievalConfig& cfg) {
    const int n = int(dataset.records.size());
    cfg.validate(n);
    const int anchor_idx = dataset.index_of(anchor_id);
    if (anchor_idx < 0) throw std::out_of_range("unknown anchor id " + anchor_id);

    // Partial Fisher-Yates over the non-anchor indices, seeded per anchor.
    std::vector<int> pool;
    pool.reserve(n - 1);
    for (int i = 0; i < n; ++i)
        if (i != anchor_idx) pool.push_back(i);

    Rng rng(cfg.seed, anchor_id + "/subset/" + std::to_string(cfg.epoch));
    std::vector<std::string> out;
    out.reserve(cfg.subset_size);
    for (int i = 0; i < cfg.subset_size; ++i) {
        const std::size_t j = i + std::size_t(rng.below(std::uint64_t(pool.size() - i)));
        std::swap(pool[i], pool[j]);
        out.push_back(dataset.records[pool[i]].id);
    }
    return out;
}

std::vector<RankedNeighbor> rank_candidates(const Dataset& dataset, const GarmentRecord& anchor,
                                            const std::vector<std::string>& candidates,
                                            const SimilarityConfig& sim_cfg) {
    std::vector<RankedNeighbor> ranked;
    ranked.reserve(candidates.size());
    for (const auto& id : candidates) {
        const auto& cand = dataset.by_id(id);
        ranked.push_back({id, overall_similarity(anchor, cand, sim_cfg), evaluation_score(cand)});
    }
    std::sort(ranked.begin(), ranked.end(), [](const RankedNeighbor& a, const RankedNeighbor& b) {
        if (a.similarity != b.similarity) return a.similarity > b.similarity;
        return a.candidate_id < b.candidate_id;
    });
    return ranked;
}

std::vector<ContrastivePair> select_contrastive_pairs(const std::string& anchor_id,
                                                      const std::vector<RankedNeighbor>& ranked,
                                                      const RetrievalConfig& cfg) {
    const int n = int(ranked.size());
    if (cfg.n_positive + cfg.n_negative > n)
        throw std::invalid_argument("select_contrastive_pairs: ranking shorter than requested pools");

    const int top = (n + 1) / 2;
    std::vector<const RankedNeighbor*> top_half, bottom_half;
    for (int i = 0; i < n; ++i) (i < top ? top_half : bottom_half).push_back(&ranked[i]);

    std::vector<double> evals;
    evals.reserve(n);
    for (const auto& r : ranked) evals.push_back(r.evaluation);
    const double med = median(evals);

    const bool gate = cfg.filter_mode == RetrievalConfig::FilterMode::median;
    auto pick = [&](const std::vector<const RankedNeighbor*>& half, int want, bool positive) {
        std::vector<const RankedNeighbor*> pool;
        if (gate)
            for (const auto* r : half)
                if (positive ? r->evaluation >= med : r->evaluation <= med) pool.push_back(r);
        if (int(pool.size()) < want) {
            if (gate)
                log::info("anchor " + anchor_id + ": relaxing evaluation filter for the " +
                          (positive ? std::string("positive") : std::string("negative")) + " pool");
            pool.assign(half.begin(), half.end());
        }
        // Halves are already in similarity order: high similarity first.
        // Positives take the front of the top half, negatives the back of the
        // bottom half.
        std::vector<const RankedNeighbor*> out;
        if (positive)
            out.assign(pool.begin(), pool.begin() + want);
        else
            out.assign(pool.end() - want, pool.end());
        return out;
    };

    // Pools must be satisfiable from their halves even unfiltered.
    if (cfg.n_positive > int(top_half.size()) || cfg.n_negative > int(bottom_half.size()))
        throw std::invalid_argument("select_contrastive_pairs: half of the ranking is smaller than a pool");

    const auto positives = pick(top_half, cfg.n_positive, true);
    const auto negatives = pick(bottom_half, cfg.n_negative, false);

    std::vector<ContrastivePair> pairs;
    pairs.reserve(std::size_t(cfg.n_positive) * cfg.n_negative);
    for (const auto* p : positives)
        for (const auto* q : negatives)
            pairs.push_back({anchor_id, p->candidate_id, q->candidate_id, p->similarity, q->similarity,
                             p->evaluation, q->evaluation});
    return pairs;
}

std::vector<ContrastivePair> build_all_pairs(const Dataset& dataset, const RetrievalConfig& cfg,
                                             const SimilarityConfig& sim_cfg, int threads) {
    cfg.validate(int(dataset.records.size()));
    const int n = int(dataset.records.size());
    std::vector<std::vector<ContrastivePair>> slots(n);

    auto process = [&](int i) {
        const auto& anchor = dataset.records[i];
        const auto subset = draw_candidate_subset(dataset, anchor.id, cfg);
        const auto ranked = rank_candidates(dataset, anchor, subset, sim_cfg);
        slots[i] = select_contrastive_pairs(anchor.id, ranked, cfg);
    };

    const int n_threads = std::max(1, std::min(threads, n));
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) process(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) process(i);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<ContrastivePair> all;
    for (auto& s : slots) all.insert(all.end(), s.begin(), s.end());
    return all;
}

void save_pairs(const std::vector<ContrastivePair>& pairs, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    for (const auto& p : pairs) {
        ordered_json j;
        j["anchor_id"] = p.anchor_id;
        j["positive_id"] = p.positive_id;
        j["negative_id"] = p.negative_id;
        j["s_pos"] = p.s_pos;
        j["s_neg"] = p.s_neg;
        j["e_pos"] = p.e_pos;
        j["e_neg"] = p.e_neg;
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

std::vector<ContrastivePair> load_pairs(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + file.string());
    std::vector<ContrastivePair> pairs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = ordered_json::parse(line);
        ContrastivePair p;
        p.anchor_id = j.at("anchor_id").get<std::string>();
        p.positive_id = j.at("positive_id").get<std::string>();
        p.negative_id = j.at("negative_id").get<std::string>();
        p.s_pos = j.at("s_pos").get<double>();
        p.s_neg = j.at("s_neg").get<double>();
        p.e_pos = j.at("e_pos").get<double>();
        p.e_neg = j.at("e_neg").get<double>();
        pairs.push_back(std::move(p));
    }
    return pairs;
}

void save_index(const Dataset& dataset, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    ordered_json header;
    header["schema_version"] = kDatasetSchemaVersion;
    header["n_records"] = dataset.records.size();
    header["classes"] = dataset.vocabulary.classes;
    out << header.dump() << "\n";
    for (const auto& rec : dataset.records) {
        ordered_json j;
        j["id"] = rec.id;
        j["evaluation"] = evaluation_score(rec);
        j["quantities"] = ordered_json::array();
        j["descriptions"] = ordered_json::array();
        for (const auto& c : rec.components) {
            j["quantities"].push_back(c.quantity);
            j["descriptions"].push_back(c.description);
        }
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

}  // namespace garment
