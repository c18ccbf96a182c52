#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmnd/dataset.hpp"
#include "mmnd/eval.hpp"
#include "mmnd/gradcheck.hpp"
#include "mmnd/synthetic.hpp"
#include "mmnd/train.hpp"

namespace mmnd::cli {

inline constexpr const char* kVersion = "0.1.0";

// Every run persists a manifest next to its primary output; re-running
//   mmnd <subcommand> --config <manifest>
// reproduces the outputs byte for byte. Flags given alongside --config win.

namespace detail {

inline std::string manifest_path(const std::string& primary_output) {
    return primary_output + ".manifest.json";
}

inline void write_manifest(const std::string& subcommand, std::uint64_t seed,
                           const nlohmann::json& config, const std::string& primary_output) {
    nlohmann::json m{{"artifact", "mmnd"},
                     {"version", kVersion},
                     {"subcommand", subcommand},
                     {"seed", seed},
                     {"config", config}};
    write_text_file(manifest_path(primary_output), m.dump(2) + "\n");
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline std::string json_scalar_to_token(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

// expand --config <file> into ordinary tokens placed before the remaining
// user flags, so explicitly passed flags override the file
inline std::vector<std::string> expand_config(const std::vector<std::string>& args,
                                              const std::string& subcommand) {
    std::vector<std::string> out;
    std::vector<std::string> tail;
    nlohmann::json config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            require(i + 1 < args.size(), ErrorCode::Config, "--config needs a file argument");
            std::ifstream in(args[i + 1]);
            require(in.good(), ErrorCode::Io, "cannot open config: " + args[i + 1]);
            nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
            require(!j.is_discarded(), ErrorCode::Format, "malformed config JSON: " + args[i + 1]);
            if (j.contains("subcommand")) {
                require(j.at("subcommand").get<std::string>() == subcommand, ErrorCode::Config,
                        "config file is a manifest for subcommand '" +
                            j.at("subcommand").get<std::string>() + "', not '" + subcommand + "'");
                config = j.at("config");
            } else {
                config = j;
            }
            ++i;
            continue;
        }
        tail.push_back(args[i]);
    }
    if (config.is_object()) {
        for (const auto& [key, value] : config.items())
            out.push_back("--" + key + "=" + json_scalar_to_token(value));
    }
    out.insert(out.end(), tail.begin(), tail.end());
    return out;
}

inline std::vector<double> parse_rate_list(const std::string& csv) {
    std::vector<double> rates;
    std::string token;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!token.empty()) rates.push_back(std::stod(token));
            token.clear();
        } else {
            token += c;
        }
    }
    return rates;
}

inline std::vector<std::pair<double, double>> parse_cell_list(const std::string& csv) {
    std::vector<std::pair<double, double>> cells;
    std::string token;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!token.empty()) {
                auto colon = token.find(':');
                require(colon != std::string::npos, ErrorCode::Config,
                        "cell must look like video_rate:text_rate, got " + token);
                cells.emplace_back(std::stod(token.substr(0, colon)),
                                   std::stod(token.substr(colon + 1)));
            }
            token.clear();
        } else {
            token += c;
        }
    }
    return cells;
}

inline std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> items;
    std::string token;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!token.empty()) items.push_back(token);
            token.clear();
        } else {
            token += c;
        }
    }
    return items;
}

inline std::vector<std::string> vocabulary_of_size(std::size_t n) {
    static const std::vector<std::string> kBase = {"red car",      "blue sky",   "tall tree",
                                                   "small dog",    "old house",  "fast train",
                                                   "bright light", "quiet street"};
    std::vector<std::string> vocab;
    for (std::size_t i = 0; i < n; ++i) {
        if (i < kBase.size())
            vocab.push_back(kBase[i]);
        else
            vocab.push_back("object " + std::to_string(i));
    }
    return vocab;
}

inline TaskKind task_from_name(const std::string& name) {
    if (name == "retrieval") return TaskKind::Retrieval;
    if (name == "classification") return TaskKind::Classification;
    fail(ErrorCode::Config, "unknown task: " + name + " (use retrieval|classification)");
}

struct TrainFlags {
    std::size_t epochs = 30;
    std::size_t batch = 32;
    double lr = 1e-2;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double alpha1 = 1.0, alpha2 = 1.0, beta = 0.5;
    double mu_mlt = 0.5, mu_dir = 0.5, alpha_w = 0.3;
    double sigma_kd = 2.0, sigma_nce = 0.07;
    std::size_t k = 5, k0 = 3;
    double dropout = 0.3;
    std::string task = "retrieval";
    std::size_t embed_dim = 16;
    std::size_t num_prototypes = 4;
    std::size_t bank_heads = 2;
    bool train_bank = true;

    void bind(CLI::App& app) {
        app.add_option("--epochs", epochs);
        app.add_option("--batch", batch);
        app.add_option("--lr", lr);
        app.add_option("--momentum", momentum);
        app.add_option("--seed", seed);
        app.add_option("--alpha1", alpha1);
        app.add_option("--alpha2", alpha2);
        app.add_option("--beta", beta);
        app.add_option("--mu-mlt", mu_mlt);
        app.add_option("--mu-dir", mu_dir);
        app.add_option("--alpha-w", alpha_w);
        app.add_option("--sigma-kd", sigma_kd);
        app.add_option("--sigma-nce", sigma_nce);
        app.add_option("--k", k);
        app.add_option("--k0", k0);
        app.add_option("--dropout", dropout);
        app.add_option("--task", task);
        app.add_option("--embed-dim", embed_dim);
        app.add_option("--num-prototypes", num_prototypes);
        app.add_option("--heads", bank_heads);
        app.add_option("--train-bank", train_bank);
    }

    TrainConfig to_config() const {
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = batch;
        cfg.learning_rate = lr;
        cfg.momentum = momentum;
        cfg.seed = seed;
        cfg.alpha1 = alpha1;
        cfg.alpha2 = alpha2;
        cfg.beta = beta;
        cfg.mu_mlt = mu_mlt;
        cfg.mu_dir = mu_dir;
        cfg.alpha_w = alpha_w;
        cfg.sigma_kd = sigma_kd;
        cfg.sigma_nce = sigma_nce;
        cfg.k = k;
        cfg.k0 = k0;
        cfg.dropout = dropout;
        cfg.task = task_from_name(task);
        cfg.embed_dim = embed_dim;
        cfg.num_prototypes = num_prototypes;
        cfg.bank_heads = bank_heads;
        cfg.train_bank = train_bank;
        return cfg;
    }

    nlohmann::json to_manifest() const {
        return nlohmann::json{
            {"epochs", epochs},       {"batch", batch},
            {"lr", lr},               {"momentum", momentum},
            {"seed", seed},           {"alpha1", alpha1},
            {"alpha2", alpha2},       {"beta", beta},
            {"mu-mlt", mu_mlt},       {"mu-dir", mu_dir},
            {"alpha-w", alpha_w},     {"sigma-kd", sigma_kd},
            {"sigma-nce", sigma_nce}, {"k", k},
            {"k0", k0},               {"dropout", dropout},
            {"task", task},           {"embed-dim", embed_dim},
            {"num-prototypes", num_prototypes},
            {"heads", bank_heads},    {"train-bank", train_bank}};
    }
};

}  // namespace detail

inline int run(std::vector<std::string> args) {
    // global worker cap: flag wins over MMND_THREADS
    unsigned env_threads = 0;
    if (const char* env = std::getenv("MMND_THREADS")) env_threads = std::stoul(env);

    std::string subcommand = args.empty() ? "" : args[0];
    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());

    CLI::App app{"mmnd: completion, distillation and retrieval over incomplete video-text pairs"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);

    unsigned threads = env_threads;

    // ---- generate ----
    auto* gen = app.add_subcommand("generate", "write a synthetic JSONL dataset");
    struct {
        std::string out;
        std::size_t pairs = 64, frames = 16, words = 12, dim = 32, latent = 8, vocab_size = 8;
        double noise = 0.0;
        double cluster_spread = SyntheticConfig{}.cluster_spread;
        double trajectory_drift = SyntheticConfig{}.trajectory_drift;
        std::uint64_t seed = 0;
    } g;
    gen->add_option("--out", g.out)->required();
    gen->add_option("--pairs", g.pairs);
    gen->add_option("--frames", g.frames);
    gen->add_option("--words", g.words);
    gen->add_option("--dim", g.dim);
    gen->add_option("--latent", g.latent);
    gen->add_option("--noise", g.noise);
    gen->add_option("--cluster-spread", g.cluster_spread);
    gen->add_option("--trajectory-drift", g.trajectory_drift);
    gen->add_option("--vocab-size", g.vocab_size);
    gen->add_option("--seed", g.seed);
    gen->add_option("--threads", threads);

    // ---- corrupt ----
    auto* cor = app.add_subcommand("corrupt", "mask elements of a dataset at given rates");
    struct {
        std::string in, out;
        double video_rate = 0.3, text_rate = 0.3;
        std::uint64_t seed = 0;
    } c;
    cor->add_option("--in", c.in)->required();
    cor->add_option("--out", c.out)->required();
    cor->add_option("--video-rate", c.video_rate);
    cor->add_option("--text-rate", c.text_rate);
    cor->add_option("--seed", c.seed);
    cor->add_option("--threads", threads);

    // ---- complete ----
    auto* com = app.add_subcommand("complete", "fill missing elements of a dataset");
    struct {
        std::string in, out, snapshot, strategy = "pipeline";
        std::size_t k = 5, k0 = 3, num_prototypes = 4, heads = 2;
        std::uint64_t seed = 0;
    } q;
    com->add_option("--in", q.in)->required();
    com->add_option("--out", q.out)->required();
    com->add_option("--strategy", q.strategy);
    com->add_option("--snapshot", q.snapshot);
    com->add_option("--k", q.k);
    com->add_option("--k0", q.k0);
    com->add_option("--num-prototypes", q.num_prototypes);
    com->add_option("--heads", q.heads);
    com->add_option("--seed", q.seed);
    com->add_option("--threads", threads);

    // ---- train-teacher ----
    auto* tt = app.add_subcommand("train-teacher", "train the teacher on complete pairs");
    struct {
        std::string data, out_snapshot, out_report;
        detail::TrainFlags flags;
    } t;
    tt->add_option("--data", t.data)->required();
    tt->add_option("--out-snapshot", t.out_snapshot)->required();
    tt->add_option("--out-report", t.out_report);
    t.flags.bind(*tt);
    tt->add_option("--threads", threads);

    // ---- train-student ----
    auto* ts = app.add_subcommand("train-student",
                                  "train the student with dropout, completion and distillation");
    struct {
        std::string data, teacher, out_snapshot, out_report;
        detail::TrainFlags flags;
    } s;
    ts->add_option("--data", s.data)->required();
    ts->add_option("--teacher", s.teacher)->required();
    ts->add_option("--out-snapshot", s.out_snapshot)->required();
    ts->add_option("--out-report", s.out_report);
    s.flags.bind(*ts);
    ts->add_option("--threads", threads);

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "retrieval recall under incompleteness");
    struct {
        std::string data, snapshot, out, strategy = "pipeline";
        double video_rate = 0.3, text_rate = 0.3;
        std::size_t k = 5, k0 = 3;
        std::uint64_t seed = 0;
    } e;
    ev->add_option("--data", e.data)->required();
    ev->add_option("--snapshot", e.snapshot)->required();
    ev->add_option("--out", e.out)->required();
    ev->add_option("--strategy", e.strategy);
    ev->add_option("--video-rate", e.video_rate);
    ev->add_option("--text-rate", e.text_rate);
    ev->add_option("--k", e.k);
    ev->add_option("--k0", e.k0);
    ev->add_option("--seed", e.seed);
    ev->add_option("--threads", threads);

    // ---- sweep ----
    auto* sw = app.add_subcommand("sweep", "recall across an incompleteness grid");
    struct {
        std::string data, snapshot, out_csv, out_json;
        std::string rates = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7";
        std::string cells;
        std::string strategies = "zero,pipeline";
        std::size_t k = 5, k0 = 3;
        std::uint64_t seed = 0;
    } w;
    sw->add_option("--data", w.data)->required();
    sw->add_option("--snapshot", w.snapshot)->required();
    sw->add_option("--out-csv", w.out_csv)->required();
    sw->add_option("--out-json", w.out_json);
    sw->add_option("--rates", w.rates);
    sw->add_option("--cells", w.cells);
    sw->add_option("--strategies", w.strategies);
    sw->add_option("--k", w.k);
    sw->add_option("--k0", w.k0);
    sw->add_option("--seed", w.seed);
    sw->add_option("--threads", threads);

    // ---- grad-check ----
    auto* gc = app.add_subcommand("grad-check", "finite-difference check of every gradient");
    struct {
        std::uint64_t seed = 0;
        std::size_t trials = 5;
        double threshold = 1e-4;
        std::string out;
    } d;
    gc->add_option("--seed", d.seed);
    gc->add_option("--trials", d.trials);
    gc->add_option("--threshold", d.threshold);
    gc->add_option("--out", d.out);
    gc->add_option("--threads", threads);

    try {
        std::vector<std::string> expanded = detail::expand_config(rest, subcommand);
        std::vector<std::string> argv_like;
        argv_like.push_back(subcommand);
        argv_like.insert(argv_like.end(), expanded.begin(), expanded.end());
        // CLI11 consumes tokens in reverse order
        std::vector<std::string> reversed(argv_like.rbegin(), argv_like.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& err) {
        int code = app.exit(err);
        return code == 0 ? 0 : 1;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    }

    set_thread_cap(threads);

    try {
        if (gen->parsed()) {
            SyntheticConfig cfg;
            cfg.num_pairs = g.pairs;
            cfg.frames_per_video = g.frames;
            cfg.words_per_text = g.words;
            cfg.dim = g.dim;
            cfg.latent_dim = g.latent;
            cfg.noise_std = g.noise;
            cfg.cluster_spread = g.cluster_spread;
            cfg.trajectory_drift = g.trajectory_drift;
            cfg.vocabulary = detail::vocabulary_of_size(g.vocab_size);
            cfg.seed = g.seed;
            save_dataset(generate_synthetic(cfg), g.out);
            detail::write_manifest("generate", g.seed,
                                   {{"out", g.out},
                                    {"pairs", g.pairs},
                                    {"frames", g.frames},
                                    {"words", g.words},
                                    {"dim", g.dim},
                                    {"latent", g.latent},
                                    {"noise", g.noise},
                                    {"cluster-spread", g.cluster_spread},
                                    {"trajectory-drift", g.trajectory_drift},
                                    {"vocab-size", g.vocab_size},
                                    {"seed", g.seed}},
                                   g.out);
            std::cerr << "wrote " << g.pairs << " pairs to " << g.out << "\n";
        } else if (cor->parsed()) {
            Dataset data = load_dataset(c.in);
            IncompletenessConfig cfg{c.video_rate, c.text_rate, c.seed};
            save_dataset(apply_incompleteness(data, cfg), c.out);
            detail::write_manifest("corrupt", c.seed,
                                   {{"in", c.in},
                                    {"out", c.out},
                                    {"video-rate", c.video_rate},
                                    {"text-rate", c.text_rate},
                                    {"seed", c.seed}},
                                   c.out);
            std::cerr << "corrupted " << data.size() << " pairs into " << c.out << "\n";
        } else if (com->parsed()) {
            Dataset data = load_dataset(q.in);
            CompletionStrategy strategy = strategy_from_name(q.strategy);
            PrototypeBank bank;
            if (strategy == CompletionStrategy::Pipeline) {
                if (!q.snapshot.empty()) {
                    bank = read_snapshot(q.snapshot).bank;
                } else {
                    require(!data.empty(), ErrorCode::Config, "complete: empty dataset");
                    bank = PrototypeBank::init(data[0].video.dim(), q.num_prototypes, q.heads,
                                               q.seed);
                }
            }
            Dataset out(data.size());
            parallel_for(data.size(), [&](std::size_t i) {
                out[i] = complete_with_strategy(data[i], strategy, bank, q.k, q.k0);
            });
            save_dataset(out, q.out);
            detail::write_manifest("complete", q.seed,
                                   {{"in", q.in},
                                    {"out", q.out},
                                    {"strategy", q.strategy},
                                    {"snapshot", q.snapshot},
                                    {"k", q.k},
                                    {"k0", q.k0},
                                    {"num-prototypes", q.num_prototypes},
                                    {"heads", q.heads},
                                    {"seed", q.seed}},
                                   q.out);
            std::cerr << "completed " << data.size() << " pairs into " << q.out << "\n";
        } else if (tt->parsed()) {
            Dataset data = load_dataset(t.data);
            auto [model, report] = train_teacher(data, t.flags.to_config());
            write_snapshot(model, t.out_snapshot);
            report.snapshot_path = t.out_snapshot;
            if (!t.out_report.empty()) detail::write_json_file(t.out_report, to_json(report));
            nlohmann::json config = t.flags.to_manifest();
            config["data"] = t.data;
            config["out-snapshot"] = t.out_snapshot;
            config["out-report"] = t.out_report;
            detail::write_manifest("train-teacher", t.flags.seed, config, t.out_snapshot);
            std::cerr << "teacher trained for " << report.curve.size() << " epochs in "
                      << report.wall_time_seconds << " s\n";
        } else if (ts->parsed()) {
            Dataset data = load_dataset(s.data);
            TwoTowerModel teacher = read_snapshot(s.teacher);
            auto [model, report] = train_student(data, teacher, s.flags.to_config());
            write_snapshot(model, s.out_snapshot);
            report.snapshot_path = s.out_snapshot;
            if (!s.out_report.empty()) detail::write_json_file(s.out_report, to_json(report));
            nlohmann::json config = s.flags.to_manifest();
            config["data"] = s.data;
            config["teacher"] = s.teacher;
            config["out-snapshot"] = s.out_snapshot;
            config["out-report"] = s.out_report;
            detail::write_manifest("train-student", s.flags.seed, config, s.out_snapshot);
            std::cerr << "student trained for " << report.curve.size() << " epochs in "
                      << report.wall_time_seconds << " s\n";
        } else if (ev->parsed()) {
            Dataset data = load_dataset(e.data);
            TwoTowerModel model = read_snapshot(e.snapshot);
            auto [t2v, v2t] = evaluate_retrieval(model, data, strategy_from_name(e.strategy),
                                                 e.video_rate, e.text_rate, e.seed, e.k, e.k0);
            detail::write_json_file(e.out, nlohmann::json::array({to_json(t2v), to_json(v2t)}));
            detail::write_manifest("eval", e.seed,
                                   {{"data", e.data},
                                    {"snapshot", e.snapshot},
                                    {"out", e.out},
                                    {"strategy", e.strategy},
                                    {"video-rate", e.video_rate},
                                    {"text-rate", e.text_rate},
                                    {"k", e.k},
                                    {"k0", e.k0},
                                    {"seed", e.seed}},
                                   e.out);
            std::cerr << "t2v R@1 " << t2v.r1 << "  v2t R@1 " << v2t.r1 << "\n";
        } else if (sw->parsed()) {
            Dataset data = load_dataset(w.data);
            TwoTowerModel model = read_snapshot(w.snapshot);
            std::vector<std::pair<double, double>> cells;
            for (double r : detail::parse_rate_list(w.rates)) cells.emplace_back(r, r);
            for (const auto& cell : detail::parse_cell_list(w.cells)) cells.push_back(cell);
            std::vector<CompletionStrategy> strategies;
            for (const auto& name : detail::split_csv(w.strategies))
                strategies.push_back(strategy_from_name(name));
            SweepReport report =
                sweep_incompleteness(model, data, cells, strategies, w.seed, w.k, w.k0);
            write_text_file(w.out_csv, sweep_csv(report));
            if (!w.out_json.empty()) detail::write_json_file(w.out_json, to_json(report));
            detail::write_manifest("sweep", w.seed,
                                   {{"data", w.data},
                                    {"snapshot", w.snapshot},
                                    {"out-csv", w.out_csv},
                                    {"out-json", w.out_json},
                                    {"rates", w.rates},
                                    {"cells", w.cells},
                                    {"strategies", w.strategies},
                                    {"k", w.k},
                                    {"k0", w.k0},
                                    {"seed", w.seed}},
                                   w.out_csv);
            std::cerr << "swept " << report.cells.size() << " cells into " << w.out_csv << "\n";
        } else if (gc->parsed()) {
            GradCheckReport report = run_standard_grad_checks(d.seed, d.trials);
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& entry : report.entries) {
                std::cerr << (entry.max_rel_err < d.threshold ? "ok   " : "FAIL ") << entry.name
                          << "  max rel err " << entry.max_rel_err << "\n";
                rows.push_back({{"name", entry.name}, {"max_rel_err", entry.max_rel_err}});
            }
            if (!d.out.empty()) {
                detail::write_json_file(d.out, {{"threshold", d.threshold},
                                                {"pass", report.pass(d.threshold)},
                                                {"checks", rows}});
                detail::write_manifest("grad-check", d.seed,
                                       {{"seed", d.seed},
                                        {"trials", d.trials},
                                        {"threshold", d.threshold},
                                        {"out", d.out}},
                                       d.out);
            }
            if (!report.pass(d.threshold)) {
                std::cerr << "grad-check failed: worst " << report.worst() << " >= threshold "
                          << d.threshold << "\n";
                return 2;
            }
            std::cerr << "grad-check passed: worst " << report.worst() << " < " << d.threshold
                      << "\n";
        }
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 0;
}

inline int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(std::move(args));
}

}  // namespace mmnd::cli
