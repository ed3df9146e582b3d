#include "garment/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "garment/glyph.hpp"
#include "garment/log.hpp"
#include "garment/rng.hpp"

namespace garment {

namespace {

using ordered_json = nlohmann::ordered_json;

struct Box {
    int x0, y0, x1, y1;  // half-open
    bool intersects(const Box& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
};

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

/// Contrast + edge-density proxy with a small hash jitter; only has to induce
/// a deterministic ordering over the corpus.
std::pair<double, double> heuristic_scores(const Grid& image, Rng& rng) {
    const int h = image.height(), w = image.width(), c = image.channels();
    std::vector<double> lum(std::size_t(h) * w, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double* p = image.channel(ch);
        for (std::size_t i = 0; i < lum.size(); ++i) lum[i] += p[i] / c;
    }
    double mean = 0.0;
    for (double v : lum) mean += v;
    mean /= double(lum.size());
    double var = 0.0;
    for (double v : lum) var += (v - mean) * (v - mean);
    const double contrast = std::sqrt(var / double(lum.size()));

    double edge = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) edge += std::abs(lum[y * w + x + 1] - lum[y * w + x]);
    for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) edge += std::abs(lum[(y + 1) * w + x] - lum[y * w + x]);
    edge /= double(2.0 * h * w);

    const double c_norm = std::min(1.0, contrast / 0.25);
    const double e_norm = std::min(1.0, edge / 0.05);
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double aesthetic = clamp01(0.55 * c_norm + 0.25 * e_norm + 0.20 * u1);
    const double preference = clamp01(0.45 * c_norm + 0.30 * e_norm + 0.25 * u2);
    return {double(float(aesthetic)), double(float(preference))};
}

GarmentRecord generate_record(const DatasetSpec& spec, const std::vector<QuantityRange>& ranges, int index) {
    const int s = spec.image_size;
    const int k = spec.vocabulary.k();
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "g%06d", index);

    GarmentRecord rec;
    rec.id = idbuf;
    rec.image = Grid(3, s, s);
    const auto bg = background_color();
    for (int ch = 0; ch < 3; ++ch) {
        double* p = rec.image.channel(ch);
        std::fill(p, p + std::size_t(s) * s, bg[ch]);
    }

    Rng rng(spec.seed, rec.id);
    std::vector<Box> occupied;
    rec.components.resize(k);

    for (int ci = 0; ci < k; ++ci) {
        auto& comp = rec.components[ci];
        comp.class_index = ci;
        comp.mask = BinaryMask(s, s);
        const int target = rng.range_int(ranges[ci].lo, ranges[ci].hi);
        const Glyph glyph = glyph_for_class(ci, s);

        int placed = 0;
        for (int inst = 0; inst < target; ++inst) {
            bool ok = false;
            // Bounded retries; unplaceable glyphs reduce the recorded quantity
            // so annotations always match the render.
            for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
                const int max_x = s - 1 - glyph.box_w;
                const int max_y = s - 1 - glyph.box_h;
                if (max_x < 1 || max_y < 1) break;
                const int x0 = rng.range_int(1, max_x);
                const int y0 = rng.range_int(1, max_y);
                const Box candidate{x0, y0, x0 + glyph.box_w, y0 + glyph.box_h};
                const Box dilated{x0 - 1, y0 - 1, candidate.x1 + 1, candidate.y1 + 1};
                bool clash = false;
                for (const auto& b : occupied)
                    if (b.intersects(dilated)) {
                        clash = true;
                        break;
                    }
                if (clash) continue;

                occupied.push_back(candidate);
                double sx = 0.0, sy = 0.0;
                for (const auto& [dy, dx] : glyph.pixels) {
                    const int y = y0 + dy, x = x0 + dx;
                    comp.mask.at(y, x) = 1;
                    for (int ch = 0; ch < 3; ++ch) rec.image.at(ch, y, x) = glyph.color[ch];
                    sx += x + 0.5;
                    sy += y + 0.5;
                }
                const double n = double(glyph.pixels.size());
                comp.centers.push_back({sx / n / s, sy / n / s});
                ++placed;
                ok = true;
            }
            if (!ok) {
                log::debug("record " + rec.id + ": reduced " + spec.vocabulary.name(ci) + " quantity " +
                           std::to_string(target) + " -> " + std::to_string(placed));
                break;
            }
        }
        comp.quantity = placed;
        if (placed > 0) {
            const auto c = comp.mean_center();
            comp.description =
                compose_clause(spec.vocabulary, ci, placed, PositionBucket::of_point(c[0], c[1]));
        }
    }

    rec.caption = compose_caption(spec.vocabulary, rec.components);
    Rng score_rng(spec.seed, rec.id + "/score");
    std::tie(rec.aesthetic_score, rec.preference_score) = heuristic_scores(rec.image, score_rng);
    return rec;
}

std::string checksum_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", (unsigned long long)fnv1a64(bytes));
    return hex;
}

}  // namespace

void DatasetSpec::validate() const {
    if (n_samples < 1) throw std::invalid_argument("DatasetSpec: n_samples must be >= 1");
    if (image_size < 16) throw std::invalid_argument("DatasetSpec: image_size must be >= 16");
    vocabulary.validate();
    if (!quantity_range.empty() && int(quantity_range.size()) != vocabulary.k())
        throw std::invalid_argument("DatasetSpec: quantity_range arity mismatch");
    for (const auto& r : effective_ranges())
        if (r.lo < 0 || r.hi < r.lo) throw std::invalid_argument("DatasetSpec: invalid quantity range");
}

std::vector<QuantityRange> DatasetSpec::effective_ranges() const {
    if (!quantity_range.empty()) return quantity_range;
    // Defaults keep placements feasible at 32x32 with non-overlapping glyphs.
    static const QuantityRange defaults[4] = {{0, 4}, {0, 2}, {0, 1}, {0, 2}};
    std::vector<QuantityRange> out;
    for (int i = 0; i < vocabulary.k(); ++i) out.push_back(defaults[i % 4]);
    return out;
}

DatasetSpec DatasetSpec::standard(int n, int size, std::uint64_t seed) {
    DatasetSpec spec;
    spec.n_samples = n;
    spec.image_size = size;
    spec.seed = seed;
    return spec;
}

const GarmentRecord& Dataset::by_id(const std::string& id) const {
    const int idx = index_of(id);
    if (idx < 0) throw std::out_of_range("unknown record id " + id);
    return records[idx];
}

int Dataset::index_of(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? -1 : it->second;
}

void Dataset::rebuild_index() {
    index_.clear();
    for (int i = 0; i < int(records.size()); ++i) index_[records[i].id] = i;
}

Dataset generate_dataset(const DatasetSpec& spec, int threads) {
    spec.validate();
    const auto ranges = spec.effective_ranges();
    Dataset ds;
    ds.vocabulary = spec.vocabulary;
    ds.records.resize(spec.n_samples);

    const int n_threads = std::max(1, std::min(threads, spec.n_samples));
    if (n_threads == 1) {
        for (int i = 0; i < spec.n_samples; ++i) ds.records[i] = generate_record(spec, ranges, i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int t = 0; t < n_threads; ++t)
            pool.emplace_back([&] {
                for (int i = next.fetch_add(1); i < spec.n_samples; i = next.fetch_add(1))
                    ds.records[i] = generate_record(spec, ranges, i);
            });
        for (auto& th : pool) th.join();
    }
    ds.rebuild_index();
    return ds;
}

std::vector<std::pair<int, int>> mask_to_rle(const BinaryMask& mask) {
    std::vector<std::pair<int, int>> rle;
    int value = 0;
    int run = 0;
    for (std::uint8_t b : mask.v) {
        if (int(b) == value) {
            ++run;
        } else {
            rle.emplace_back(value, run);
            value = int(b);
            run = 1;
        }
    }
    rle.emplace_back(value, run);
    return rle;
}

BinaryMask rle_to_mask(const std::vector<std::pair<int, int>>& rle, int h, int w) {
    BinaryMask mask(h, w);
    std::size_t pos = 0;
    for (const auto& [value, run] : rle) {
        if (value != 0 && value != 1) throw std::runtime_error("mask_rle: value must be 0 or 1");
        if (run < 0 || pos + run > mask.v.size()) throw std::runtime_error("mask_rle: runs exceed mask size");
        std::fill(mask.v.begin() + pos, mask.v.begin() + pos + run, std::uint8_t(value));
        pos += run;
    }
    if (pos != mask.v.size()) throw std::runtime_error("mask_rle: runs do not cover mask");
    return mask;
}

void write_pfm(const std::filesystem::path& path, const Grid& image) {
    if (image.channels() != 3) throw std::invalid_argument("write_pfm: expected 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "PF\n" << image.width() << " " << image.height() << "\n-1.0\n";
    // Rows bottom-to-top per the format convention.
    std::vector<float> row(std::size_t(image.width()) * 3);
    for (int y = image.height() - 1; y >= 0; --y) {
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c) row[std::size_t(x) * 3 + c] = float(image.at(c, y, x));
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

Grid read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "PF") throw std::runtime_error("not a color PFM file: " + path.string());
    int w = 0, h = 0;
    double scale = 0.0;
    in >> w >> h >> scale;
    if (w <= 0 || h <= 0) throw std::runtime_error("bad PFM dimensions in " + path.string());
    if (scale >= 0) throw std::runtime_error("big-endian PFM unsupported: " + path.string());
    in.get();  // single whitespace after the scale line

    Grid image(3, h, w);
    std::vector<float> row(std::size_t(w) * 3);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()), std::streamsize(row.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated PFM file: " + path.string());
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) image.at(c, y, x) = double(row[std::size_t(x) * 3 + c]);
    }
    return image;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());

    for (const auto& rec : dataset.records) {
        const std::string image_file = rec.id + ".pfm";
        write_pfm(dir / image_file, rec.image);

        ordered_json line;
        line["schema_version"] = kDatasetSchemaVersion;
        line["id"] = rec.id;
        line["caption"] = rec.caption;
        line["components"] = ordered_json::array();
        for (const auto& comp : rec.components) {
            ordered_json c;
            c["class"] = dataset.vocabulary.name(comp.class_index);
            c["description"] = comp.description;
            c["quantity"] = comp.quantity;
            c["centers"] = ordered_json::array();
            for (const auto& center : comp.centers) c["centers"].push_back({center[0], center[1]});
            c["mask_rle"] = ordered_json::array();
            for (const auto& [value, run] : mask_to_rle(comp.mask)) c["mask_rle"].push_back({value, run});
            line["components"].push_back(std::move(c));
        }
        line["aesthetic"] = rec.aesthetic_score;
        line["preference"] = rec.preference_score;
        line["image_file"] = image_file;
        line["image_checksum"] = checksum_file(dir / image_file);
        manifest << line.dump() << "\n";
    }
    if (!manifest) throw std::runtime_error("manifest write failed in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.jsonl", std::ios::binary);
    if (!manifest) throw std::runtime_error("cannot open manifest in " + dir.string());

    Dataset ds;
    std::string line;
    int line_no = 0;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line);
        const int version = j.at("schema_version").get<int>();
        if (version != kDatasetSchemaVersion)
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": unsupported schema_version " +
                                     std::to_string(version));

        GarmentRecord rec;
        rec.id = j.at("id").get<std::string>();
        rec.caption = j.at("caption").get<std::string>();
        rec.aesthetic_score = j.at("aesthetic").get<double>();
        rec.preference_score = j.at("preference").get<double>();

        std::vector<std::string> class_names;
        const auto& comps = j.at("components");
        rec.components.reserve(comps.size());
        rec.image = read_pfm(dir / j.at("image_file").get<std::string>());
        const std::string expect = j.at("image_checksum").get<std::string>();
        const std::string actual = checksum_file(dir / j.at("image_file").get<std::string>());
        if (expect != actual)
            throw std::runtime_error("checksum mismatch for " + rec.id + ": manifest " + expect + ", file " + actual);

        int ci = 0;
        for (const auto& c : comps) {
            ComponentAnnotation comp;
            comp.class_index = ci++;
            class_names.push_back(c.at("class").get<std::string>());
            comp.description = c.at("description").get<std::string>();
            comp.quantity = c.at("quantity").get<int>();
            for (const auto& center : c.at("centers"))
                comp.centers.push_back({center.at(0).get<double>(), center.at(1).get<double>()});
            std::vector<std::pair<int, int>> rle;
            for (const auto& pair : c.at("mask_rle")) rle.emplace_back(pair.at(0).get<int>(), pair.at(1).get<int>());
            comp.mask = rle_to_mask(rle, rec.image.height(), rec.image.width());
            rec.components.push_back(std::move(comp));
        }

        if (ds.records.empty()) {
            ds.vocabulary = ComponentVocabulary(class_names);
        } else if (class_names != ds.vocabulary.classes) {
            throw std::runtime_error("record " + rec.id + ": component classes diverge from manifest head");
        }
        ds.records.push_back(std::move(rec));
    }
    if (ds.records.empty()) throw std::runtime_error("empty dataset in " + dir.string());
    ds.rebuild_index();
    return ds;
}

}  // namespace garment
