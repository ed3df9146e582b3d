#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "garment/dataset.hpp"
#include "garment/denoiser.hpp"
#include "garment/diffusion.hpp"
#include "garment/eval.hpp"
#include "garment/log.hpp"
#include "garment/retrieval.hpp"
#include "garment/train.hpp"

namespace {

using garment::log::info;
using ordered_json = nlohmann::ordered_json;

std::vector<garment::QuantityRange> parse_qranges(const std::string& text) {
    std::vector<garment::QuantityRange> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos) throw CLI::ValidationError("--qrange", "expected lo:hi pairs");
        out.push_back({std::stoi(part.substr(0, colon)), std::stoi(part.substr(colon + 1))});
    }
    return out;
}

std::array<double, 4> parse_weights(const std::string& text) {
    std::array<double, 4> w{};
    std::stringstream ss(text);
    std::string part;
    int i = 0;
    while (std::getline(ss, part, ',')) {
        if (i >= 4) throw CLI::ValidationError("--weights", "expected exactly four comma-separated values");
        w[i++] = std::stod(part);
    }
    if (i != 4) throw CLI::ValidationError("--weights", "expected exactly four comma-separated values");
    return w;
}

/// Flat key=value config support: entries are rewritten as flags placed right
/// after the subcommand token, so explicit command-line flags win.
std::vector<std::string> apply_config(std::vector<std::string> args, CLI::App& app) {
    std::string config_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            config_path = args[i + 1];
            args.erase(args.begin() + i, args.begin() + i + 2);
            break;
        }
    }
    if (config_path.empty()) return args;

    std::size_t sub_pos = args.size();
    CLI::App* sub = nullptr;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].starts_with("-")) {
            try {
                sub = app.get_subcommand(args[i]);
            } catch (const CLI::OptionNotFound&) {
                break;
            }
            sub_pos = i + 1;
            break;
        }
    }
    if (!sub) throw CLI::ValidationError("--config", "config requires a recognized subcommand");

    std::ifstream in(config_path);
    if (!in) throw CLI::ValidationError("--config", "cannot open " + config_path);
    std::vector<std::string> injected;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--config", "line " + std::to_string(line_no) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string flag = "--" + key;
        const CLI::Option* opt = nullptr;
        try {
            opt = sub->get_option(flag);
        } catch (const CLI::OptionNotFound&) {
            garment::log::warn("config key '" + key + "' does not apply to this subcommand, ignored");
            continue;
        }
        if (opt->get_expected_min() == 0) {
            if (value == "true" || value == "1") injected.push_back(flag);
        } else {
            injected.push_back(flag);
            injected.push_back(value);
        }
    }
    args.insert(args.begin() + std::ptrdiff_t(sub_pos), injected.begin(), injected.end());
    return args;
}

garment::Schedule::Kind schedule_kind(const std::string& name) {
    if (name == "linear") return garment::Schedule::Kind::linear;
    if (name == "cosine") return garment::Schedule::Kind::cosine;
    throw CLI::ValidationError("--schedule", "must be linear or cosine");
}

std::vector<std::string> read_caption_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open caption file " + path);
    std::vector<std::string> captions;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) captions.push_back(line);
    }
    return captions;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"component-aligned garment generation laboratory"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

    // gen-data -------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic garment dataset");
    struct {
        int n = 100;
        int size = 32;
        std::uint64_t seed = 0;
        std::string out = "data";
        std::string qrange;
        int threads = 1;
    } gen_args;
    gen->add_option("--n", gen_args.n, "number of records");
    gen->add_option("--size", gen_args.size, "image side length");
    gen->add_option("--seed", gen_args.seed, "generation seed");
    gen->add_option("--out", gen_args.out, "output directory");
    gen->add_option("--qrange", gen_args.qrange, "per-class quantity ranges lo:hi,lo:hi,...");
    gen->add_option("--threads", gen_args.threads, "worker threads");
    gen->callback([&] {
        garment::DatasetSpec spec = garment::DatasetSpec::standard(gen_args.n, gen_args.size, gen_args.seed);
        if (!gen_args.qrange.empty()) spec.quantity_range = parse_qranges(gen_args.qrange);
        const auto ds = garment::generate_dataset(spec, gen_args.threads);
        garment::save_dataset(ds, gen_args.out);
        info("wrote " + std::to_string(ds.records.size()) + " records to " + gen_args.out);
    });

    // index ----------------------------------------------------------------
    auto* index = app.add_subcommand("index", "precompute the similarity input cache");
    struct {
        std::string data = "data";
        std::string out = "index.jsonl";
    } index_args;
    index->add_option("--data", index_args.data, "dataset directory");
    index->add_option("--out", index_args.out, "output file");
    index->callback([&] {
        const auto ds = garment::load_dataset(index_args.data);
        garment::save_index(ds, index_args.out);
        info("indexed " + std::to_string(ds.records.size()) + " records into " + index_args.out);
    });

    // pairs ----------------------------------------------------------------
    auto* pairs = app.add_subcommand("pairs", "build contrastive training pairs");
    struct {
        std::string data = "data";
        std::string out = "pairs.jsonl";
        int n = 64;
        int np = 2;
        int nn = 2;
        std::uint64_t seed = 0;
        double alpha = 1.0;
        double epsilon = 1e-6;
        std::string filter = "median";
        int threads = 1;
    } pairs_args;
    pairs->add_option("--data", pairs_args.data, "dataset directory");
    pairs->add_option("--out", pairs_args.out, "output manifest");
    pairs->add_option("--n", pairs_args.n, "retrieval subset size");
    pairs->add_option("--np", pairs_args.np, "positives per anchor");
    pairs->add_option("--nn", pairs_args.nn, "negatives per anchor");
    pairs->add_option("--seed", pairs_args.seed, "subset seed");
    pairs->add_option("--alpha", pairs_args.alpha, "caption-distance weight");
    pairs->add_option("--epsilon", pairs_args.epsilon, "similarity denominator guard");
    pairs->add_option("--filter", pairs_args.filter, "evaluation filter: median or none");
    pairs->add_option("--threads", pairs_args.threads, "worker threads");
    pairs->callback([&] {
        const auto ds = garment::load_dataset(pairs_args.data);
        garment::RetrievalConfig rc;
        rc.subset_size = pairs_args.n;
        rc.n_positive = pairs_args.np;
        rc.n_negative = pairs_args.nn;
        rc.seed = pairs_args.seed;
        if (pairs_args.filter == "median")
            rc.filter_mode = garment::RetrievalConfig::FilterMode::median;
        else if (pairs_args.filter == "none")
            rc.filter_mode = garment::RetrievalConfig::FilterMode::none;
        else
            throw CLI::ValidationError("--filter", "must be median or none");
        garment::SimilarityConfig sc;
        sc.alpha = pairs_args.alpha;
        sc.epsilon = pairs_args.epsilon;
        const auto result = garment::build_all_pairs(ds, rc, sc, pairs_args.threads);
        garment::save_pairs(result, pairs_args.out);
        info("wrote " + std::to_string(result.size()) + " pairs to " + pairs_args.out);
    });

    // train ----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train the conditional denoiser");
    struct {
        std::string data = "data";
        std::string pairs = "pairs.jsonl";
        std::string ckpt_out = "model.ckpt";
        std::string ckpt_in;
        std::string metrics = "metrics.jsonl";
        std::string weights = "0.1,1.0,0.1,1.0";
        std::string schedule = "linear";
        int timesteps = 200;
        int steps = 8000;
        int batch = 2;
        int width = 8;
        double alpha = 1.0;
        double lr = 1e-3;
        double momentum = 0.0;
        double clip = 0.0;
        std::uint64_t seed = 0;
        bool racl_clamp = false;
        int cutoff = -1;
        int threads = 1;
        bool single_thread = false;
    } train_args;
    train->add_option("--data", train_args.data, "dataset directory");
    train->add_option("--pairs", train_args.pairs, "pair manifest");
    train->add_option("--steps", train_args.steps, "optimizer steps");
    train->add_option("--weights", train_args.weights, "correction weights v,s,q,r");
    train->add_option("--alpha", train_args.alpha, "caption-distance weight recorded with the run");
    train->add_option("--lr", train_args.lr, "learning rate");
    train->add_option("--momentum", train_args.momentum, "SGD momentum");
    train->add_option("--clip", train_args.clip, "global gradient-norm clip, 0 off");
    train->add_option("--batch", train_args.batch, "pairs per step");
    train->add_option("--width", train_args.width, "denoiser base channels");
    train->add_option("--schedule", train_args.schedule, "noise schedule: linear or cosine");
    train->add_option("--timesteps", train_args.timesteps, "schedule length T");
    train->add_option("--seed", train_args.seed, "training seed");
    train->add_option("--ckpt-out", train_args.ckpt_out, "checkpoint output path");
    train->add_option("--ckpt-in", train_args.ckpt_in, "resume from checkpoint");
    train->add_option("--metrics", train_args.metrics, "metrics stream path");
    train->add_option("--cutoff", train_args.cutoff, "apply corrections only at t <= cutoff, -1 always");
    train->add_flag("--racl-clamp", train_args.racl_clamp, "clamp the contrastive loss at zero");
    train->add_option("--threads", train_args.threads, "worker threads");
    train->add_flag("--single-thread", train_args.single_thread, "force one worker thread");
    train->callback([&] {
        const auto ds = garment::load_dataset(train_args.data);
        const auto pair_list = garment::load_pairs(train_args.pairs);

        garment::TrainConfig tc;
        const auto w = parse_weights(train_args.weights);
        tc.weights.omega_v = w[0];
        tc.weights.omega_s = w[1];
        tc.weights.omega_q = w[2];
        tc.weights.omega_r = w[3];
        tc.lr = train_args.lr;
        tc.momentum = train_args.momentum;
        tc.grad_clip = train_args.clip;
        tc.batch_size = train_args.batch;
        tc.seed = train_args.seed;
        tc.racl_clamp = train_args.racl_clamp;
        tc.correction_t_cutoff = train_args.cutoff;
        tc.threads = train_args.single_thread ? 1 : train_args.threads;

        auto [model, sched] = [&] {
            if (!train_args.ckpt_in.empty()) return garment::load_checkpoint(train_args.ckpt_in);
            garment::DenoiserSpec spec;
            spec.image_size = ds.records.at(0).image.height();
            spec.base_channels = train_args.width;
            spec.n_classes = ds.vocabulary.k();
            return std::make_pair(garment::Denoiser(spec, train_args.seed),
                                  garment::Schedule::make(schedule_kind(train_args.schedule),
                                                          train_args.timesteps));
        }();

        garment::Trainer trainer(std::move(model), std::move(sched), ds, pair_list, tc);

        std::ofstream metrics(train_args.metrics,
                              train_args.ckpt_in.empty() ? std::ios::trunc : std::ios::app);
        if (!metrics) throw std::runtime_error("cannot write " + train_args.metrics);
        {
            ordered_json header;
            header["config"] = {{"steps", train_args.steps},    {"weights", train_args.weights},
                                {"alpha", train_args.alpha},    {"lr", tc.lr},
                                {"momentum", tc.momentum},      {"batch", tc.batch_size},
                                {"seed", tc.seed},              {"schedule", train_args.schedule},
                                {"timesteps", train_args.timesteps}, {"width", train_args.width},
                                {"pairs", pair_list.size()},    {"records", ds.records.size()}};
            metrics << header.dump() << "\n";
        }

        for (int s = 0; s < train_args.steps; ++s) {
            const auto t0 = std::chrono::steady_clock::now();
            const auto r = trainer.step();
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            ordered_json line;
            line["step"] = trainer.steps_done();
            line["base"] = r.base;
            line["visual"] = r.corrections.visual;
            line["spatial"] = r.corrections.spatial;
            line["quantitative"] = r.corrections.quantitative;
            line["racl"] = r.corrections.racl;
            line["total"] = r.corrections.total;
            line["objective"] = r.objective;
            line["wall_ms"] = wall_ms;
            metrics << line.dump() << "\n";
            if ((s + 1) % 500 == 0)
                info("step " + std::to_string(s + 1) + "/" + std::to_string(train_args.steps) + " objective " +
                     std::to_string(r.objective));
        }
        garment::save_checkpoint(trainer.model(), trainer.schedule(), train_args.ckpt_out);
        info("saved checkpoint to " + train_args.ckpt_out + " after " +
             std::to_string(trainer.steps_done()) + " total steps");
    });

    // eval -----------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "sample from a checkpoint and score accuracy");
    struct {
        std::string ckpt = "model.ckpt";
        std::string data;
        std::string captions;
        std::string classes;
        std::string out_json = "eval.json";
        std::string out_csv;
        int n_samples = 25;
        int max_captions = 0;
        int sampler_steps = 10;
        double eta = 1.0;
        std::uint64_t seed = 0;
        int threads = 1;
    } eval_args;
    eval->add_option("--ckpt", eval_args.ckpt, "checkpoint to evaluate");
    eval->add_option("--data", eval_args.data, "dataset directory supplying captions");
    eval->add_option("--captions", eval_args.captions, "caption file, one per line");
    eval->add_option("--classes", eval_args.classes, "comma-separated class names for --captions mode");
    eval->add_option("--n-samples", eval_args.n_samples, "samples per caption");
    eval->add_option("--max-captions", eval_args.max_captions, "cap the caption count, 0 = all");
    eval->add_option("--sampler-steps", eval_args.sampler_steps, "denoising steps per sample");
    eval->add_option("--eta", eval_args.eta, "sampler noise scale");
    eval->add_option("--seed", eval_args.seed, "evaluation seed");
    eval->add_option("--out-json", eval_args.out_json, "report JSON path");
    eval->add_option("--out-csv", eval_args.out_csv, "per-trial CSV path");
    eval->add_option("--threads", eval_args.threads, "worker threads");
    eval->callback([&] {
        auto [model, sched] = garment::load_checkpoint(eval_args.ckpt);
        garment::ComponentVocabulary vocab = garment::ComponentVocabulary::standard();
        std::vector<std::string> captions;
        if (!eval_args.data.empty()) {
            const auto ds = garment::load_dataset(eval_args.data);
            vocab = ds.vocabulary;
            for (const auto& rec : ds.records) captions.push_back(rec.caption);
        } else if (!eval_args.captions.empty()) {
            captions = read_caption_lines(eval_args.captions);
            if (!eval_args.classes.empty()) {
                std::vector<std::string> names;
                std::stringstream ss(eval_args.classes);
                std::string part;
                while (std::getline(ss, part, ',')) names.push_back(part);
                vocab = garment::ComponentVocabulary(names);
            }
        } else {
            throw CLI::ValidationError("eval", "one of --data or --captions is required");
        }
        if (eval_args.max_captions > 0 && int(captions.size()) > eval_args.max_captions)
            captions.resize(eval_args.max_captions);

        garment::SamplerConfig sampler;
        sampler.steps = eval_args.sampler_steps;
        sampler.eta = eval_args.eta;
        auto report = garment::evaluate_accuracy(model, sched, vocab, captions, eval_args.n_samples, sampler,
                                                 eval_args.seed, eval_args.threads);
        report.model_steps = model.training_steps;
        garment::save_accuracy_json(report, eval_args.out_json);
        if (!eval_args.out_csv.empty()) garment::save_accuracy_csv(report, eval_args.out_csv);
        std::printf("quantity_accuracy=%.4f spatial_accuracy=%.4f over %d captions x %d samples\n",
                    report.quantity_accuracy, report.spatial_accuracy, report.n_captions,
                    report.n_samples_per_caption);
    });

    // export-metrics -------------------------------------------------------
    auto* exp = app.add_subcommand("export-metrics", "flatten metrics and eval reports to CSV");
    struct {
        std::string metrics = "metrics.jsonl";
        std::vector<std::string> evals;
        std::string out = "metrics.csv";
    } exp_args;
    exp->add_option("--metrics", exp_args.metrics, "training metrics stream");
    exp->add_option("--eval", exp_args.evals, "accuracy report JSONs keyed by model step")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    exp->add_option("--out", exp_args.out, "output CSV");
    exp->callback([&] {
        std::ifstream in(exp_args.metrics);
        if (!in) throw std::runtime_error("cannot open " + exp_args.metrics);
        struct Row {
            ordered_json line;
            double qacc = -1.0, sacc = -1.0;
        };
        std::map<std::uint64_t, Row> rows;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            auto j = ordered_json::parse(line);
            if (!j.contains("step")) continue;  // config echo line
            const auto step = j.at("step").get<std::uint64_t>();
            rows[step].line = std::move(j);
        }
        for (const auto& path : exp_args.evals) {
            const auto report = garment::load_accuracy_json(path);
            auto& row = rows[report.model_steps];
            row.qacc = report.quantity_accuracy;
            row.sacc = report.spatial_accuracy;
        }

        std::ofstream out(exp_args.out, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + exp_args.out);
        out << "step,base,visual,spatial,quantitative,racl,total,objective,wall_ms,"
               "quantity_accuracy,spatial_accuracy\n";
        auto num = [](const ordered_json& j, const char* key) {
            return j.contains(key) ? std::to_string(j.at(key).get<double>()) : std::string();
        };
        for (const auto& [step, row] : rows) {
            out << step << "," << num(row.line, "base") << "," << num(row.line, "visual") << ","
                << num(row.line, "spatial") << "," << num(row.line, "quantitative") << ","
                << num(row.line, "racl") << "," << num(row.line, "total") << ","
                << num(row.line, "objective") << "," << num(row.line, "wall_ms") << ",";
            if (row.qacc >= 0) out << row.qacc;
            out << ",";
            if (row.sacc >= 0) out << row.sacc;
            out << "\n";
        }
        info("wrote " + exp_args.out);
    });

    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        args = apply_config(args, app);
        std::vector<const char*> cargs;
        cargs.push_back(argv[0]);
        for (const auto& a : args) cargs.push_back(a.c_str());
        app.parse(int(cargs.size()), cargs.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
