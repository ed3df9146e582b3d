#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <string>

#include "garment/dataset.hpp"
#include "garment/oracle.hpp"

using namespace garment;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("garment_test_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("single-record generation fills every annotation field") {
    auto spec = DatasetSpec::standard(1, 32, 123);
    const auto ds = generate_dataset(spec);
    REQUIRE(ds.records.size() == 1);
    const auto& rec = ds.records[0];
    CHECK(rec.id == "g000000");
    CHECK_FALSE(rec.caption.empty());
    CHECK(rec.components.size() == 4);
    CHECK(rec.image.shape().c == 3);
    CHECK(rec.image.height() == 32);
    CHECK(rec.image.width() == 32);
    CHECK(rec.aesthetic_score >= 0.0);
    CHECK(rec.aesthetic_score <= 1.0);
    CHECK(rec.preference_score >= 0.0);
    CHECK(rec.preference_score <= 1.0);

    for (const auto& c : rec.components) {
        CHECK(int(c.centers.size()) == c.quantity);
        if (c.present()) {
            CHECK_FALSE(c.description.empty());
            CHECK(c.mask.any());
            for (const auto& center : c.centers) {
                CHECK(center[0] > 0.0);
                CHECK(center[0] < 1.0);
                CHECK(center[1] > 0.0);
                CHECK(center[1] < 1.0);
            }
        } else {
            CHECK(c.description.empty());
            CHECK_FALSE(c.mask.any());
        }
    }
}

TEST_CASE("generation is deterministic in the seed and free of it otherwise") {
    auto spec = DatasetSpec::standard(6, 32, 99);
    const auto a = generate_dataset(spec, 1);
    const auto b = generate_dataset(spec, 3);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i] == b.records[i]);

    spec.seed = 100;
    const auto c = generate_dataset(spec);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.records.size(); ++i)
        if (!(a.records[i] == c.records[i])) any_difference = true;
    CHECK(any_difference);
}

TEST_CASE("pinned quantity ranges are honored and the oracle agrees") {
    auto spec = DatasetSpec::standard(8, 32, 7);
    spec.quantity_range = {{3, 3}, {0, 0}, {0, 0}, {0, 0}};
    const auto ds = generate_dataset(spec);
    for (const auto& rec : ds.records) {
        CHECK(rec.components[0].quantity == 3);
        CHECK(rec.components[1].quantity == 0);
        const auto found = count_components(rec.image, 0);
        CHECK(found.first == 3);
    }
}

TEST_CASE("records round-trip through the on-disk format unchanged") {
    TempDir dir("roundtrip");
    auto spec = DatasetSpec::standard(5, 32, 2024);
    const auto ds = generate_dataset(spec);
    save_dataset(ds, dir.path);

    const auto loaded = load_dataset(dir.path);
    CHECK(loaded.vocabulary.classes == ds.vocabulary.classes);
    REQUIRE(loaded.records.size() == ds.records.size());
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        const auto& orig = ds.records[i];
        const auto& back = loaded.records[i];
        CHECK(back.id == orig.id);
        CHECK(back.caption == orig.caption);
        CHECK(back.aesthetic_score == doctest::Approx(orig.aesthetic_score).epsilon(1e-12));
        CHECK(back.preference_score == doctest::Approx(orig.preference_score).epsilon(1e-12));
        REQUIRE(back.components.size() == orig.components.size());
        for (std::size_t k = 0; k < orig.components.size(); ++k) {
            CHECK(back.components[k].quantity == orig.components[k].quantity);
            CHECK(back.components[k].description == orig.components[k].description);
            CHECK(back.components[k].mask.v == orig.components[k].mask.v);
            REQUIRE(back.components[k].centers.size() == orig.components[k].centers.size());
            for (std::size_t c = 0; c < orig.components[k].centers.size(); ++c) {
                CHECK(back.components[k].centers[c][0] ==
                      doctest::Approx(orig.components[k].centers[c][0]).epsilon(1e-12));
                CHECK(back.components[k].centers[c][1] ==
                      doctest::Approx(orig.components[k].centers[c][1]).epsilon(1e-12));
            }
        }
        // Pixels pass through a float32 file, so compare at that precision.
        REQUIRE(back.image.shape() == orig.image.shape());
        for (std::size_t p = 0; p < orig.image.size(); ++p)
            CHECK(back.image.data()[p] == doctest::Approx(orig.image.data()[p]).epsilon(1e-6));
    }

    CHECK(loaded.index_of("g000003") == 3);
    CHECK(loaded.index_of("missing") == -1);
}

TEST_CASE("unsupported manifest schema version is rejected") {
    TempDir dir("schema");
    const auto ds = generate_dataset(DatasetSpec::standard(1, 32, 1));
    save_dataset(ds, dir.path);

    std::ifstream in(dir.path / "manifest.jsonl");
    std::string line;
    std::getline(in, line);
    in.close();
    const auto pos = line.find("\"schema_version\":1");
    REQUIRE(pos != std::string::npos);
    line.replace(pos, 18, "\"schema_version\":9");
    std::ofstream out(dir.path / "manifest.jsonl", std::ios::trunc);
    out << line << "\n";
    out.close();

    CHECK_THROWS_WITH_AS(load_dataset(dir.path), doctest::Contains("schema_version"), std::runtime_error);
}

TEST_CASE("corrupted image files fail the checksum comparison") {
    TempDir dir("checksum");
    const auto ds = generate_dataset(DatasetSpec::standard(1, 32, 5));
    save_dataset(ds, dir.path);

    std::fstream f(dir.path / "g000000.pfm", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-4, std::ios::end);
    const char junk[4] = {0x13, 0x37, 0x13, 0x37};
    f.write(junk, 4);
    f.close();

    CHECK_THROWS_WITH_AS(load_dataset(dir.path), doctest::Contains("checksum"), std::runtime_error);
}

TEST_CASE("mask run-length coding round-trips and validates") {
    BinaryMask m;
    m.h = 4;
    m.w = 3;
    m.v.assign(12, 0);
    m.at(0, 1) = 1;
    m.at(2, 2) = 1;
    m.at(3, 0) = 1;
    m.at(3, 1) = 1;

    const auto rle = mask_to_rle(m);
    REQUIRE_FALSE(rle.empty());
    CHECK(rle.front().first == 0);  // encoding starts with the zero run
    const auto back = rle_to_mask(rle, 4, 3);
    CHECK(back.v == m.v);

    // All-zero and all-one masks are the degenerate single-run cases.
    BinaryMask zeros;
    zeros.h = 2;
    zeros.w = 2;
    zeros.v.assign(4, 0);
    CHECK(rle_to_mask(mask_to_rle(zeros), 2, 2).v == zeros.v);
    BinaryMask ones = zeros;
    ones.v.assign(4, 1);
    CHECK(rle_to_mask(mask_to_rle(ones), 2, 2).v == ones.v);

    CHECK_THROWS_AS(rle_to_mask({{0, 3}}, 2, 2), std::runtime_error);  // short
    CHECK_THROWS_AS(rle_to_mask({{0, 5}}, 2, 2), std::runtime_error);  // long
    CHECK_THROWS_AS(rle_to_mask({{2, 4}}, 2, 2), std::runtime_error);  // bad value
}

TEST_CASE("pfm files persist pixel data at float precision") {
    TempDir dir("pfm");
    Grid img(3, 4, 5);
    for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = double(i) / 59.0;
    const auto file = dir.path / "img.pfm";
    write_pfm(file, img);
    const auto back = read_pfm(file);
    REQUIRE(back.shape() == img.shape());
    for (std::size_t i = 0; i < img.size(); ++i)
        CHECK(back.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-7));
}

TEST_CASE("dataset spec validation rejects nonsense") {
    auto spec = DatasetSpec::standard(0, 32, 1);
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = DatasetSpec::standard(1, 8, 1);
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec = DatasetSpec::standard(1, 32, 1);
    spec.quantity_range = {{2, 1}, {0, 0}, {0, 0}, {0, 0}};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
    spec.quantity_range = {{-1, 1}, {0, 0}, {0, 0}, {0, 0}};
    CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}
