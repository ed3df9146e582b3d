#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "garment/caption.hpp"
#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

struct QuantityRange {
    int lo = 0;
    int hi = 0;
    bool operator==(const QuantityRange&) const = default;
};

struct DatasetSpec {
    int n_samples = 1;
    int image_size = 32;  // H == W
    ComponentVocabulary vocabulary = ComponentVocabulary::standard();
    std::vector<QuantityRange> quantity_range;  // per class; empty = defaults
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<QuantityRange> effective_ranges() const;

    static DatasetSpec standard(int n, int size, std::uint64_t seed);
};

struct Dataset {
    ComponentVocabulary vocabulary;
    std::vector<GarmentRecord> records;

    const GarmentRecord& by_id(const std::string& id) const;
    int index_of(const std::string& id) const;  // -1 when unknown
    void rebuild_index();

private:
    std::map<std::string, int> index_;
};

/// Procedurally renders n_samples garments with exact per-component ground
/// truth. Pure function of the spec; safe to parallelize because each record
/// derives its own random stream from (seed, id).
Dataset generate_dataset(const DatasetSpec& spec, int threads = 1);

/// Directory layout: manifest.jsonl with one object per record plus one
/// <id>.pfm image per record (little-endian portable float map).
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

constexpr int kDatasetSchemaVersion = 1;

/// Row-major (value, run) pairs starting with value 0.
std::vector<std::pair<int, int>> mask_to_rle(const BinaryMask& mask);
BinaryMask rle_to_mask(const std::vector<std::pair<int, int>>& rle, int h, int w);

void write_pfm(const std::filesystem::path& path, const Grid& image);
Grid read_pfm(const std::filesystem::path& path);

}  // namespace garment
