#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "garment/dataset.hpp"
#include "garment/eval.hpp"

using namespace garment;

namespace {

Denoiser tiny_model(std::uint64_t seed) {
    DenoiserSpec spec;
    spec.image_size = 32;
    spec.base_channels = 4;
    return Denoiser(spec, seed);
}

}  // namespace

TEST_CASE("accuracy evaluation is deterministic and bounded") {
    const auto model = tiny_model(1);
    const auto sched = Schedule::make(Schedule::Kind::linear, 30);
    const auto vocab = ComponentVocabulary::standard();
    const std::vector<std::string> captions{
        "one button at the top left",
        "two stripes at the bottom center, one collar at the top center",
    };
    SamplerConfig sampler;
    sampler.steps = 3;

    const auto a = evaluate_accuracy(model, sched, vocab, captions, 2, sampler, 42);
    const auto b = evaluate_accuracy(model, sched, vocab, captions, 2, sampler, 42, 3);
    CHECK(a.n_captions == 2);
    CHECK(a.n_samples_per_caption == 2);
    CHECK(a.skipped_captions == 0);
    REQUIRE(a.trials.size() == 4);
    CHECK(a.quantity_accuracy >= 0.0);
    CHECK(a.quantity_accuracy <= 1.0);

    // Thread count changes nothing: per-trial seeds are positional.
    REQUIRE(b.trials.size() == a.trials.size());
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
        CHECK(a.trials[i].quantity_ok == b.trials[i].quantity_ok);
        CHECK(a.trials[i].spatial_ok == b.trials[i].spatial_ok);
        CHECK(a.trials[i].counts == b.trials[i].counts);
    }
}

TEST_CASE("unparseable captions are skipped and counted") {
    const auto model = tiny_model(2);
    const auto sched = Schedule::make(Schedule::Kind::linear, 30);
    const auto vocab = ComponentVocabulary::standard();
    SamplerConfig sampler;
    sampler.steps = 2;
    const auto r = evaluate_accuracy(model, sched, vocab,
                                     {"one button at the top left", "complete gibberish"}, 1, sampler, 7);
    CHECK(r.n_captions == 1);
    CHECK(r.skipped_captions == 1);
    CHECK(r.trials.size() == 1);
}

TEST_CASE("aggregation recomputes the headline numbers from trials") {
    const auto vocab = ComponentVocabulary::standard();
    AccuracyReport report;
    report.classes = vocab.classes;
    report.n_samples_per_caption = 1;

    // Two hand-built trials: one full hit, one miss on quantity.
    TrialLog hit;
    hit.caption_index = 0;
    hit.caption = "one button at the top left";
    hit.quantity_ok = true;
    hit.spatial_ok = true;
    hit.counts = {1, 0, 0, 0};
    hit.spatial_ok_per_class = {1, -1, -1, -1};
    TrialLog miss = hit;
    miss.caption_index = 1;
    miss.quantity_ok = false;
    miss.spatial_ok = true;
    miss.counts = {3, 0, 0, 0};
    report.trials = {hit, miss};
    report.n_captions = 2;

    aggregate_report(report);
    CHECK(report.quantity_accuracy == doctest::Approx(0.5));
    CHECK(report.spatial_accuracy == doctest::Approx(1.0));
    REQUIRE(report.per_class_quantity.size() == 4);
    CHECK(report.per_class_quantity[0] == doctest::Approx(0.5));
    CHECK(report.per_class_spatial[0] == doctest::Approx(1.0));
}

TEST_CASE("reports round-trip through json and csv has one row per trial") {
    const auto model = tiny_model(3);
    const auto sched = Schedule::make(Schedule::Kind::linear, 30);
    const auto vocab = ComponentVocabulary::standard();
    SamplerConfig sampler;
    sampler.steps = 2;
    auto report = evaluate_accuracy(model, sched, vocab,
                                    {"one button at the top left", "two pockets at the middle center"}, 3,
                                    sampler, 5);
    report.model_steps = 777;

    const auto dir = std::filesystem::temp_directory_path();
    const auto jfile = dir / "garment_test_report.json";
    const auto cfile = dir / "garment_test_report.csv";
    save_accuracy_json(report, jfile);
    save_accuracy_csv(report, cfile);

    const auto back = load_accuracy_json(jfile);
    CHECK(back.model_steps == 777);
    CHECK(back.n_captions == report.n_captions);
    CHECK(back.quantity_accuracy == report.quantity_accuracy);
    CHECK(back.spatial_accuracy == report.spatial_accuracy);
    REQUIRE(back.trials.size() == report.trials.size());
    for (std::size_t i = 0; i < report.trials.size(); ++i) {
        CHECK(back.trials[i].caption == report.trials[i].caption);
        CHECK(back.trials[i].counts == report.trials[i].counts);
        CHECK(back.trials[i].spatial_ok_per_class == report.trials[i].spatial_ok_per_class);
    }

    std::ifstream csv(cfile);
    std::string line;
    int rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 1 + 6);  // header plus 2 captions x 3 samples

    std::filesystem::remove(jfile);
    std::filesystem::remove(cfile);
}

TEST_CASE("attention iou compares maps against component masks") {
    const auto ds = generate_dataset(DatasetSpec::standard(4, 32, 616));
    DenoiserSpec spec;
    spec.image_size = 32;
    spec.base_channels = 4;
    const Denoiser model(spec, 8);
    const auto sched = Schedule::make(Schedule::Kind::linear, 30);

    std::vector<std::string> ids;
    for (const auto& rec : ds.records)
        for (const auto& comp : rec.components)
            if (comp.present()) {
                ids.push_back(rec.id);
                break;
            }
    REQUIRE_FALSE(ids.empty());

    const double iou1 = attention_mask_iou(model, sched, ds, ids, 5, 99);
    const double iou2 = attention_mask_iou(model, sched, ds, ids, 5, 99);
    CHECK(iou1 == iou2);
    CHECK(iou1 >= 0.0);
    CHECK(iou1 <= 1.0);

    CHECK_THROWS_AS(attention_mask_iou(model, sched, ds, {"g999999"}, 5, 99), std::out_of_range);
    CHECK_THROWS_AS(attention_mask_iou(model, sched, ds, {}, 5, 99), std::invalid_argument);
}
