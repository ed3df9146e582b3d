#include "garment/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "garment/log.hpp"
#include "garment/oracle.hpp"
#include "garment/rng.hpp"

namespace garment {

namespace {

using ordered_json = nlohmann::ordered_json;

std::uint64_t trial_seed(std::uint64_t seed, int caption_index, int sample_index) {
    return fnv1a64("trial/" + std::to_string(caption_index) + "/" + std::to_string(sample_index)) ^
           splitmix64(seed);
}

TrialLog score_sample(const Grid& image, const ComponentVocabulary& vocab,
                      const std::vector<CaptionClause>& clauses) {
    const int k = vocab.k();
    TrialLog trial;
    trial.counts.assign(k, 0);
    trial.spatial_ok_per_class.assign(k, -1);

    std::vector<int> want(k, 0);
    for (const auto& cl : clauses) want[cl.class_index] = cl.quantity;

    trial.quantity_ok = true;
    trial.spatial_ok = true;
    for (int c = 0; c < k; ++c) {
        auto [count, detections] = count_components(image, c);
        trial.counts[c] = count;
        if (count != want[c]) trial.quantity_ok = false;
    }
    for (const auto& cl : clauses) {
        auto [count, detections] = count_components(image, cl.class_index);
        bool ok = false;
        if (!detections.empty()) {
            double mx = 0.0, my = 0.0;
            for (const auto& d : detections) {
                mx += d.center_x;
                my += d.center_y;
            }
            mx /= double(detections.size());
            my /= double(detections.size());
            ok = PositionBucket::of_point(mx, my) == cl.bucket;
        }
        trial.spatial_ok_per_class[cl.class_index] = ok ? 1 : 0;
        if (!ok) trial.spatial_ok = false;
    }
    return trial;
}

}  // namespace

void aggregate_report(AccuracyReport& report) {
    const int k = int(report.classes.size());
    report.per_class_quantity.assign(k, 0.0);
    report.per_class_spatial.assign(k, 0.0);
    std::vector<std::int64_t> class_present(k, 0);
    std::vector<std::int64_t> class_q_hits(k, 0), class_s_hits(k, 0);
    std::int64_t q_hits = 0, s_hits = 0;

    for (const auto& trial : report.trials) {
        q_hits += trial.quantity_ok;
        s_hits += trial.spatial_ok;
        for (int c = 0; c < k; ++c) {
            if (trial.spatial_ok_per_class[c] >= 0) {
                ++class_present[c];
                class_s_hits[c] += trial.spatial_ok_per_class[c] == 1;
            }
        }
    }

    // Per-class quantity needs the caption's expectation; reparse per trial.
    if (!report.trials.empty()) {
        ComponentVocabulary vocab(report.classes);
        std::vector<std::int64_t> per_q(k, 0);
        for (const auto& trial : report.trials) {
            std::vector<int> want(k, 0);
            for (const auto& cl : parse_caption(vocab, trial.caption).clauses) want[cl.class_index] = cl.quantity;
            for (int c = 0; c < k; ++c) per_q[c] += trial.counts[c] == want[c];
        }
        for (int c = 0; c < k; ++c) report.per_class_quantity[c] = double(per_q[c]) / double(report.trials.size());
    }

    const double n = double(std::max<std::size_t>(1, report.trials.size()));
    report.quantity_accuracy = double(q_hits) / n;
    report.spatial_accuracy = double(s_hits) / n;
    for (int c = 0; c < k; ++c)
        report.per_class_spatial[c] = class_present[c] ? double(class_s_hits[c]) / double(class_present[c]) : 0.0;
}

AccuracyReport evaluate_accuracy(const Denoiser& model, const Schedule& schedule,
                                 const ComponentVocabulary& vocab, const std::vector<std::string>& captions,
                                 int n_samples, const SamplerConfig& sampler, std::uint64_t seed,
                                 int threads) {
    if (n_samples < 1) throw std::invalid_argument("evaluate_accuracy: n_samples must be >= 1");
    AccuracyReport report;
    report.classes = vocab.classes;
    report.n_samples_per_caption = n_samples;

    struct Job {
        int caption_index;
        std::string caption;
        std::vector<CaptionClause> clauses;
    };
    std::vector<Job> jobs;
    for (int i = 0; i < int(captions.size()); ++i) {
        const ParseResult parsed = parse_caption(vocab, captions[i]);
        if (parsed.warning_count > 0) {
            ++report.skipped_captions;
            log::warn("skipping unparseable caption " + std::to_string(i) + ": " + captions[i]);
            continue;
        }
        jobs.push_back({i, captions[i], parsed.clauses});
    }
    report.n_captions = int(jobs.size());

    std::vector<std::vector<TrialLog>> slots(jobs.size());
    auto run_job = [&](std::size_t j) {
        const Job& job = jobs[j];
        slots[j].reserve(n_samples);
        for (int s = 0; s < n_samples; ++s) {
            const Grid image =
                sample(model, schedule, vocab, job.caption, sampler, trial_seed(seed, job.caption_index, s));
            TrialLog trial = score_sample(image, vocab, job.clauses);
            trial.caption_index = job.caption_index;
            trial.sample_index = s;
            trial.caption = job.caption;
            slots[j].push_back(std::move(trial));
        }
    };

    const int n_threads = std::max(1, std::min<int>(threads, int(jobs.size())));
    if (n_threads == 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i)
            pool.emplace_back([&] {
                for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) run_job(j);
            });
        for (auto& th : pool) th.join();
    }

    for (auto& s : slots)
        for (auto& t : s) report.trials.push_back(std::move(t));
    aggregate_report(report);
    return report;
}

void save_accuracy_json(const AccuracyReport& report, const std::filesystem::path& path) {
    ordered_json j;
    j["classes"] = report.classes;
    j["model_steps"] = report.model_steps;
    j["n_captions"] = report.n_captions;
    j["n_samples_per_caption"] = report.n_samples_per_caption;
    j["skipped_captions"] = report.skipped_captions;
    j["quantity_accuracy"] = report.quantity_accuracy;
    j["spatial_accuracy"] = report.spatial_accuracy;
    j["per_class_quantity"] = report.per_class_quantity;
    j["per_class_spatial"] = report.per_class_spatial;
    j["trials"] = ordered_json::array();
    for (const auto& t : report.trials) {
        ordered_json jt;
        jt["caption_index"] = t.caption_index;
        jt["sample_index"] = t.sample_index;
        jt["caption"] = t.caption;
        jt["quantity_ok"] = t.quantity_ok;
        jt["spatial_ok"] = t.spatial_ok;
        jt["counts"] = t.counts;
        jt["spatial_ok_per_class"] = t.spatial_ok_per_class;
        j["trials"].push_back(std::move(jt));
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

AccuracyReport load_accuracy_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    ordered_json j = ordered_json::parse(in);
    AccuracyReport report;
    report.classes = j.at("classes").get<std::vector<std::string>>();
    report.model_steps = j.at("model_steps").get<std::uint64_t>();
    report.n_captions = j.at("n_captions").get<int>();
    report.n_samples_per_caption = j.at("n_samples_per_caption").get<int>();
    report.skipped_captions = j.at("skipped_captions").get<int>();
    report.quantity_accuracy = j.at("quantity_accuracy").get<double>();
    report.spatial_accuracy = j.at("spatial_accuracy").get<double>();
    report.per_class_quantity = j.at("per_class_quantity").get<std::vector<double>>();
    report.per_class_spatial = j.at("per_class_spatial").get<std::vector<double>>();
    for (const auto& jt : j.at("trials")) {
        TrialLog t;
        t.caption_index = jt.at("caption_index").get<int>();
        t.sample_index = jt.at("sample_index").get<int>();
        t.caption = jt.at("caption").get<std::string>();
        t.quantity_ok = jt.at("quantity_ok").get<bool>();
        t.spatial_ok = jt.at("spatial_ok").get<bool>();
        t.counts = jt.at("counts").get<std::vector<int>>();
        t.spatial_ok_per_class = jt.at("spatial_ok_per_class").get<std::vector<int>>();
        report.trials.push_back(std::move(t));
    }
    return report;
}

void save_accuracy_csv(const AccuracyReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "caption_index,sample_index,quantity_ok,spatial_ok";
    for (const auto& c : report.classes) out << ",count_" << c << ",spatial_" << c;
    out << ",caption\n";
    for (const auto& t : report.trials) {
        out << t.caption_index << "," << t.sample_index << "," << int(t.quantity_ok) << "," << int(t.spatial_ok);
        for (std::size_t c = 0; c < report.classes.size(); ++c)
            out << "," << t.counts[c] << "," << t.spatial_ok_per_class[c];
        out << ",\"" << t.caption << "\"\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

double attention_mask_iou(const Denoiser& model, const Schedule& schedule, const Dataset& dataset,
                          const std::vector<std::string>& record_ids, int t, std::uint64_t seed) {
    double iou_sum = 0.0;
    std::int64_t iou_n = 0;
    for (const auto& id : record_ids) {
        const GarmentRecord& rec = dataset.by_id(id);
        Rng rng(seed, "iou/" + id);
        Grid eps(rec.image.shape());
        for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.gaussian();
        const Grid x_t = forward_diffuse(rec.image, t, eps, schedule);
        const auto out = model.predict(x_t, t, conditioning_from_components(rec.components));

        for (const auto& comp : rec.components) {
            if (!comp.present()) continue;
            for (const Grid& map : out.attention.maps[comp.class_index]) {
                double mx = 0.0;
                for (std::size_t i = 0; i < map.size(); ++i) mx = std::max(mx, map[i]);
                const Grid target = interpolate_mask(comp.mask, map.height(), map.width());
                std::int64_t inter = 0, uni = 0;
                for (std::size_t i = 0; i < map.size(); ++i) {
                    const bool a = mx > 0 && map[i] / mx >= 0.5;
                    const bool b = target[i] >= 0.5;
                    inter += a && b;
                    uni += a || b;
                }
                iou_sum += uni ? double(inter) / double(uni) : 1.0;
                ++iou_n;
            }
        }
    }
    if (iou_n == 0) throw std::invalid_argument("attention_mask_iou: no present components in the given records");
    return iou_sum / double(iou_n);
}

}  // namespace garment
