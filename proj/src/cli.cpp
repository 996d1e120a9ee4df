#include "divts/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <vector>

#include "CLI11.hpp"
#include "divts/detect.hpp"
#include "divts/metrics.hpp"
#include "divts/rng.hpp"

namespace divts::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(Err kind) {
    switch (kind) {
        case Err::InvalidConfig:
            return 2;
        case Err::NonFiniteGradient:
        case Err::NonFiniteLoss:
        case Err::SingularCovariance:
        case Err::DegenerateWeights:
        case Err::EmptyCluster:
            return 4;
        default:
            return 3;
    }
}

namespace {

void write_text_atomic(const fs::path& file, const std::string& text) {
    const fs::path tmp = file.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) fail(Err::IOFailure, "cannot write " + tmp.string());
        f << text;
    }
    std::error_code ec;
    fs::rename(tmp, file, ec);
    if (ec) fail(Err::IOFailure, "cannot move " + tmp.string() + " into place");
}

json read_json_file(const fs::path& file, Err missing_kind = Err::IOFailure) {
    std::ifstream f(file);
    if (!f) fail(missing_kind, "cannot open " + file.string());
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail(Err::FormatError, file.string() + ": " + e.what());
    }
    return j;
}

data::Dataset load_train_pool(const fs::path& dir, const std::string& normalize_unused) {
    (void)normalize_unused;  // datasets on disk are already normalized
    data::Dataset ds = data::load_dataset(dir);
    if (!ds.ood_classes.empty()) {
        data::IdOodSplit split = data::partition_id_ood(ds, ds.ood_classes);
        return std::move(split.train_pool);
    }
    return ds;
}

std::pair<data::Dataset, data::Dataset> apply_split(const data::Dataset& pool, double ratio,
                                                    std::uint64_t seed, std::vector<int>* train_idx,
                                                    std::vector<int>* val_idx) {
    const int n = static_cast<int>(pool.size());
    const int n_train = static_cast<int>(std::llround(ratio * n));
    if (n_train <= 0 || n_train >= n) fail(Err::EmptySplit, "train/val split leaves an empty side");
    const std::vector<int> perm = Rng::permutation(seed, "data.split", n);
    data::Dataset train = pool, val = pool;
    train.instances.clear();
    val.instances.clear();
    for (int i = 0; i < n; ++i) {
        const int src = perm[static_cast<std::size_t>(i)];
        if (i < n_train) {
            train.instances.push_back(pool.instances[static_cast<std::size_t>(src)]);
            if (train_idx) train_idx->push_back(src);
        } else {
            val.instances.push_back(pool.instances[static_cast<std::size_t>(src)]);
            if (val_idx) val_idx->push_back(src);
        }
    }
    return {std::move(train), std::move(val)};
}

json round_to_json(const diversify::RoundRecord& r) {
    return json{{"round", r.round},
                {"loss_feature", r.loss_feature},
                {"loss_latent_domain", r.loss_latent_domain},
                {"loss_latent_adv", r.loss_latent_adv},
                {"loss_task_class", r.loss_task_class},
                {"loss_task_adv", r.loss_task_adv},
                {"val_acc", r.val_acc},
                {"assignments", r.assignments},
                {"cluster_sizes", r.cluster_sizes}};
}

struct SingleRun {
    diversify::TrainResult result;
    long optimizer_steps = 0;
};

SingleRun train_once(const ExperimentConfig& cfg, const data::Dataset& train, const data::Dataset& val,
                     const fs::path& history_file, const std::string& algorithm) {
    const model::ModelConfig mc = cfg.model_config(train.channels, train.window, train.c_id());
    const diversify::TrainConfig tc = cfg.train_config();

    json rounds = json::array();
    auto sink = [&](const diversify::RoundRecord& rec) {
        rounds.push_back(round_to_json(rec));
        json hist{{"algorithm", algorithm},
                  {"latent_domains", tc.latent_domains},
                  {"seed", cfg.seed},
                  {"rounds", rounds}};
        write_text_atomic(history_file, hist.dump(2) + "\n");
    };

    SingleRun run;
    if (algorithm == "erm")
        run.result = diversify::train_erm(train, val, mc, tc, sink);
    else if (algorithm == "dann")
        run.result = diversify::train_dann(train, val, mc, tc, sink);
    else
        run.result = diversify::train_diversify(train, val, mc, tc, sink);

    const long batches =
        (static_cast<long>(train.size()) + tc.sched.batch - 1) / tc.sched.batch;
    run.optimizer_steps = static_cast<long>(run.result.best_round) * tc.sched.epochs_per_round() * batches;
    return run;
}

}  // namespace

void run_synth(const synth::SynthConfig& scfg, const fs::path& out_dir) {
    const synth::SynthResult result = synth::generate(scfg);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(Err::IOFailure, "cannot create " + out_dir.string());
    data::save_dataset(result.train, out_dir / "train");
    data::save_dataset(result.target, out_dir / "target");

    const json j{{"k_true", scfg.k_true},
                 {"classes", scfg.classes},
                 {"ood_extra", scfg.ood_extra},
                 {"channels", scfg.channels},
                 {"series_length", scfg.series_length},
                 {"window", scfg.window},
                 {"step", scfg.step},
                 {"series_per_pair", scfg.series_per_pair},
                 {"noise_sigma", scfg.noise_sigma},
                 {"drift_rate", scfg.drift_rate},
                 {"seed", scfg.seed}};
    write_text_atomic(out_dir / "synth_config.json", j.dump(2) + "\n");
}

TrainSummary run_train(ExperimentConfig cfg, std::optional<std::pair<int, int>> k_grid) {
    cfg.validate();
    if (cfg.data_dir.empty()) fail(Err::InvalidConfig, "train needs a dataset directory");
    if (k_grid && (k_grid->first < 2 || k_grid->second > 10 || k_grid->first > k_grid->second))
        fail(Err::InvalidConfig, "k grid must lie within [2, 10]");

    const data::Dataset pool = load_train_pool(cfg.data_dir, cfg.normalize);
    std::vector<int> train_idx, val_idx;
    auto [train, val] = apply_split(pool, cfg.val_ratio, cfg.seed, &train_idx, &val_idx);

    const fs::path run_dir = cfg.out_dir;
    std::error_code ec;
    fs::create_directories(run_dir, ec);
    if (ec) fail(Err::IOFailure, "cannot create run directory " + run_dir.string());

    write_text_atomic(run_dir / "split.json",
                      json{{"train_idx", train_idx}, {"val_idx", val_idx}}.dump() + "\n");

    TrainSummary summary;
    summary.run_dir = run_dir;

    SingleRun best;
    json grid_report = json::array();
    if (k_grid && cfg.algorithm == "diversify") {
        bool have = false;
        for (int k = k_grid->first; k <= k_grid->second; ++k) {
            ExperimentConfig candidate = cfg;
            candidate.latent_domains = k;
            SingleRun run = train_once(candidate, train, val,
                                       run_dir / ("history_k" + std::to_string(k) + ".json"),
                                       cfg.algorithm);
            grid_report.push_back(json{{"k", k}, {"best_val_acc", run.result.best_val_acc}});
            if (!have || run.result.best_val_acc > best.result.best_val_acc) {
                best = std::move(run);
                summary.chosen_k = k;
                have = true;
            }
        }
        cfg.latent_domains = summary.chosen_k;
        write_text_atomic(run_dir / "kgrid.json",
                          json{{"candidates", grid_report}, {"chosen_k", summary.chosen_k}}.dump(2) + "\n");
        // Mirror the winning candidate's history as the run's history.
        fs::copy_file(run_dir / ("history_k" + std::to_string(summary.chosen_k) + ".json"),
                      run_dir / "history.json", fs::copy_options::overwrite_existing, ec);
    } else {
        best = train_once(cfg, train, val, run_dir / "history.json", cfg.algorithm);
        summary.chosen_k = cfg.latent_domains;
    }
    summary.best_val_acc = best.result.best_val_acc;

    write_text_atomic(run_dir / "resolved_config.json", cfg.to_json().dump(2) + "\n");

    best.result.best.save(run_dir / "model.bin");
    const json model_meta{{"config_hash", cfg.config_hash()},
                          {"classes", best.result.best.cfg.classes},
                          {"latent_domains", best.result.best.cfg.latent_domains},
                          {"bottleneck_dim", best.result.best.cfg.bottleneck_dim},
                          {"channels", best.result.best.cfg.channels},
                          {"window", best.result.best.cfg.window},
                          {"best_round", best.result.best_round},
                          {"best_val_acc", best.result.best_val_acc},
                          {"optimizer_steps", best.optimizer_steps}};
    write_text_atomic(run_dir / "model.json", model_meta.dump(2) + "\n");

    if (cfg.algorithm == "diversify")
        write_text_atomic(run_dir / "final_assignments.json",
                          json{{"assignments", best.result.final_assignments}}.dump() + "\n");
    return summary;
}

namespace {

struct RunContext {
    ExperimentConfig cfg;
    model::DiversifyModel model;
    data::Dataset train_split, val_split;
};

RunContext load_run(const fs::path& run_dir) {
    RunContext ctx;
    ctx.cfg.apply_json(read_json_file(run_dir / "resolved_config.json", Err::MissingCheckpoint));
    ctx.model = model::DiversifyModel::load(run_dir / "model.bin");

    const data::Dataset pool = load_train_pool(ctx.cfg.data_dir, ctx.cfg.normalize);
    const json split = read_json_file(run_dir / "split.json", Err::MissingCheckpoint);
    auto take = [&](const char* key, data::Dataset& out) {
        out = pool;
        out.instances.clear();
        for (int idx : split.at(key).get<std::vector<int>>())
            out.instances.push_back(pool.instances.at(static_cast<std::size_t>(idx)));
    };
    try {
        take("train_idx", ctx.train_split);
        take("val_idx", ctx.val_split);
    } catch (const json::exception& e) {
        fail(Err::SchemaMismatch, "split.json: " + std::string(e.what()));
    }
    return ctx;
}

json record_to_json(const detect::ScoreRecord& r) {
    json j{{"id", r.id}, {"scorer", r.scorer}, {"score", r.score}, {"pred_class", r.pred_class}};
    if (r.is_ood_true) j["is_ood_true"] = *r.is_ood_true;
    if (r.pred_is_id) j["pred_is_id"] = *r.pred_is_id;
    return j;
}

}  // namespace

void run_detect(const DetectArgs& args) {
    RunContext ctx = load_run(args.run_dir);
    const data::Dataset target = data::load_dataset(args.data_dir);
    if (target.channels != ctx.model.cfg.channels || target.window != ctx.model.cfg.window)
        fail(Err::DimensionMismatch, "target dataset dims do not match the checkpoint");

    std::vector<std::string> scorers;
    if (args.scorer == "all")
        scorers = {"mcp", "mah", "odin"};
    else if (args.scorer == "mcp" || args.scorer == "mah" || args.scorer == "odin")
        scorers = {args.scorer};
    else
        fail(Err::InvalidConfig, "unknown scorer '" + args.scorer + "'");

    const bool need_stats = std::count(scorers.begin(), scorers.end(), "mah") > 0;
    detect::GaussianStats stats;
    if (need_stats) stats = detect::fit_gaussian_stats(ctx.model, ctx.train_split);

    json records = json::array();
    for (const std::string& scorer : scorers) {
        detect::DetectParams params;
        params.temperature = args.temperature;
        params.eps_pert = args.eps_pert;
        if (args.threshold) {
            if (*args.threshold == "auto") {
                // q-quantile of the recorded validation split's ID scores.
                std::vector<detect::ScoreRecord> val_records = detect::detect_batch(
                    ctx.model, need_stats ? &stats : nullptr, ctx.val_split, scorer,
                    {args.temperature, args.eps_pert, std::nullopt});
                std::vector<double> val_scores;
                val_scores.reserve(val_records.size());
                for (const auto& r : val_records) val_scores.push_back(r.score);
                params.threshold = detect::quantile(std::move(val_scores), ctx.cfg.threshold_quantile);
            } else {
                try {
                    params.threshold = std::stod(*args.threshold);
                } catch (const std::exception&) {
                    fail(Err::InvalidConfig, "threshold must be a number or 'auto'");
                }
            }
        }
        const std::vector<detect::ScoreRecord> recs =
            detect::detect_batch(ctx.model, need_stats ? &stats : nullptr, target, scorer, params);
        for (const auto& r : recs) records.push_back(record_to_json(r));
    }

    const fs::path out = args.out_file.empty() ? args.run_dir / "results.json" : args.out_file;
    write_text_atomic(out, records.dump(2) + "\n");
}

void run_eval(const EvalArgs& args) {
    const json records = read_json_file(args.results_file);
    if (!records.is_array()) fail(Err::SchemaMismatch, "results file must be a JSON array");
    const data::Dataset target = data::load_dataset(args.data_dir);

    struct PerScorer {
        std::vector<double> scores;
        std::vector<std::uint8_t> is_id;
        std::vector<int> ids;
        std::vector<int> preds;
        bool have_truth = true;
    };
    std::map<std::string, PerScorer> by_scorer;
    try {
        for (const json& r : records) {
            PerScorer& ps = by_scorer[r.at("scorer").get<std::string>()];
            const int id = r.at("id").get<int>();
            if (id < 0 || id >= static_cast<int>(target.size()))
                fail(Err::SchemaMismatch, "record id " + std::to_string(id) + " outside the dataset");
            ps.ids.push_back(id);
            ps.scores.push_back(r.at("score").get<double>());
            ps.preds.push_back(r.at("pred_class").get<int>());
            if (r.contains("is_ood_true"))
                ps.is_id.push_back(r.at("is_ood_true").get<bool>() ? 0 : 1);
            else
                ps.have_truth = false;
        }
    } catch (const json::exception& e) {
        fail(Err::SchemaMismatch, "results file: " + std::string(e.what()));
    }
    if (by_scorer.empty()) fail(Err::SchemaMismatch, "results file holds no records");

    json out;
    std::vector<std::string> csv_lines{"metric,scorer,value"};

    // ID accuracy from the model's class predictions (softmax argmax scorers
    // first, nearest-Gaussian otherwise), over ID-class instances only.
    std::string acc_source;
    for (const char* pref : {"mcp", "odin", "mah"})
        if (by_scorer.count(pref)) {
            acc_source = pref;
            break;
        }
    {
        const PerScorer& ps = by_scorer.at(acc_source);
        std::vector<int> preds, labels;
        for (std::size_t i = 0; i < ps.ids.size(); ++i) {
            const data::Instance& ins = target.instances[static_cast<std::size_t>(ps.ids[i])];
            if (target.is_ood(ins)) continue;
            preds.push_back(ps.preds[i]);
            labels.push_back(ins.y);
        }
        if (!preds.empty()) {
            const double acc = eval::accuracy(preds, labels);
            out["id_acc"] = acc;
            out["id_acc_source"] = acc_source;
            csv_lines.push_back("id_acc,," + std::to_string(acc));
        }
    }

    std::size_t n_id = 0, n_ood = 0;
    for (const data::Instance& ins : target.instances) (target.is_ood(ins) ? n_ood : n_id)++;
    out["counts"] = json{{"n_id", n_id}, {"n_ood", n_ood}};
    out["positive_class"] = args.ood_positive ? "ood" : "id";

    json scorers_json;
    for (auto& [name, ps] : by_scorer) {
        json entry;
        if (ps.have_truth && n_id > 0 && n_ood > 0) {
            std::vector<double> scores = ps.scores;
            std::vector<std::uint8_t> pos = ps.is_id;
            if (args.ood_positive) {
                for (double& s : scores) s = -s;
                for (std::uint8_t& f : pos) f = f ? 0 : 1;
            }
            entry["auroc"] = eval::auroc(scores, pos);
            entry["aupr"] = eval::aupr(scores, pos);
            csv_lines.push_back("auroc," + name + "," + std::to_string(entry["auroc"].get<double>()));
            csv_lines.push_back("aupr," + name + "," + std::to_string(entry["aupr"].get<double>()));
        }
        scorers_json[name] = entry;
    }
    out["scorers"] = scorers_json;

    if (args.run_dir) {
        RunContext ctx = load_run(*args.run_dir);
        const json fa = read_json_file(*args.run_dir / "final_assignments.json", Err::MissingCheckpoint);
        std::vector<int> assignments;
        try {
            assignments = fa.at("assignments").get<std::vector<int>>();
        } catch (const json::exception& e) {
            fail(Err::SchemaMismatch, "final_assignments.json: " + std::string(e.what()));
        }
        if (assignments.size() != ctx.train_split.size())
            fail(Err::DimensionMismatch, "assignments do not match the recorded train split");

        const Mat emb = diversify::embed_dataset(ctx.model, ctx.train_split);
        const int k = ctx.model.cfg.latent_domains;
        std::vector<Mat> groups(static_cast<std::size_t>(k));
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int a : assignments) ++counts[static_cast<std::size_t>(a)];
        for (int j = 0; j < k; ++j) groups[static_cast<std::size_t>(j)] = Mat(counts[static_cast<std::size_t>(j)], emb.cols);
        std::vector<int> fill(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < emb.rows; ++i) {
            const int a = assignments[static_cast<std::size_t>(i)];
            std::copy(emb.row(i), emb.row(i) + emb.cols,
                      groups[static_cast<std::size_t>(a)].row(fill[static_cast<std::size_t>(a)]++));
        }

        json matrix = json::array();
        for (int i = 0; i < k; ++i) {
            json row = json::array();
            for (int j = 0; j < k; ++j) {
                double v = 0.0;
                if (i != j && groups[static_cast<std::size_t>(i)].rows >= 10 &&
                    groups[static_cast<std::size_t>(j)].rows >= 10)
                    v = eval::h_divergence_proxy(groups[static_cast<std::size_t>(i)],
                                                 groups[static_cast<std::size_t>(j)]);
                row.push_back(v);
            }
            matrix.push_back(row);
        }
        out["h_divergence"] = json{{"estimator", "linear_probe_2fold_balanced_error"}, {"matrix", matrix}};

        bool have_planted = !ctx.train_split.instances.empty();
        for (const data::Instance& ins : ctx.train_split.instances) have_planted &= ins.d_planted >= 0;
        if (have_planted) {
            std::vector<int> planted;
            planted.reserve(ctx.train_split.size());
            for (const data::Instance& ins : ctx.train_split.instances) planted.push_back(ins.d_planted);
            const double agreement = eval::domain_agreement(assignments, planted);
            out["domain_agreement"] = agreement;
            csv_lines.push_back("domain_agreement,," + std::to_string(agreement));
        }
    }

    const fs::path out_json =
        args.out_json.empty() ? args.results_file.parent_path() / "metrics.json" : args.out_json;
    const fs::path out_csv =
        args.out_csv.empty() ? args.results_file.parent_path() / "metrics.csv" : args.out_csv;
    write_text_atomic(out_json, out.dump(2) + "\n");
    std::string csv;
    for (const std::string& line : csv_lines) csv += line + "\n";
    write_text_atomic(out_csv, csv);

    std::printf("%-18s %-8s %s\n", "metric", "scorer", "value");
    if (out.contains("id_acc")) std::printf("%-18s %-8s %.4f\n", "id_acc", "", out["id_acc"].get<double>());
    for (auto& [name, entry] : scorers_json.items()) {
        if (entry.contains("auroc")) {
            std::printf("%-18s %-8s %.4f\n", "auroc", name.c_str(), entry["auroc"].get<double>());
            std::printf("%-18s %-8s %.4f\n", "aupr", name.c_str(), entry["aupr"].get<double>());
        }
    }
    if (out.contains("domain_agreement"))
        std::printf("%-18s %-8s %.4f\n", "domain_agreement", "", out["domain_agreement"].get<double>());
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

std::string runs_root() {
    if (const char* env = std::getenv("DIVTS_RUNS_DIR")) return env;
    return "runs";
}

int dispatch(int argc, const char* const* argv) {
    CLI::App app{"Latent-domain discovery, invariant training, and OOD scoring for time series"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic train/target dataset pair");
    synth::SynthConfig scfg;
    std::string synth_out, synth_config_file;
    synth_cmd->add_option("--out", synth_out, "Output directory")->required();
    synth_cmd->add_option("--config", synth_config_file, "JSON file with generator settings");
    synth_cmd->add_option("--domains", scfg.k_true, "Planted latent domains");
    synth_cmd->add_option("--classes", scfg.classes, "ID class count");
    synth_cmd->add_option("--ood-extra", scfg.ood_extra, "Extra OOD-only classes in the target split");
    synth_cmd->add_option("--channels", scfg.channels, "Signal channels");
    synth_cmd->add_option("--series-length", scfg.series_length, "Timesteps per series");
    synth_cmd->add_option("--series-per-pair", scfg.series_per_pair, "Series per (domain, class)");
    synth_cmd->add_option("--window", scfg.window, "Window size");
    synth_cmd->add_option("--step", scfg.step, "Window step");
    synth_cmd->add_option("--noise", scfg.noise_sigma, "Additive noise sigma");
    synth_cmd->add_option("--drift", scfg.drift_rate, "Within-series parameter drift strength");
    synth_cmd->add_option("--seed", scfg.seed, "Generator seed");

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
    std::string train_data, train_out, train_config_file, k_grid_text;
    ExperimentConfig flags;  // flag values land here; merged by count below
    train_cmd->add_option("--data", train_data, "Dataset directory")->required();
    train_cmd->add_option("--out", train_out, "Run directory (default under DIVTS_RUNS_DIR)");
    train_cmd->add_option("--config", train_config_file, "JSON config file");
    train_cmd->add_option("--algorithm", flags.algorithm, "diversify | erm | dann");
    train_cmd->add_option("--k", flags.latent_domains, "Latent domain count K");
    train_cmd->add_option("--k-grid", k_grid_text, "Grid search K over LO:HI (e.g. 2:10)");
    train_cmd->add_option("--lambda1", flags.lambda1, "Class-adversary strength");
    train_cmd->add_option("--lambda2", flags.lambda2, "Domain-adversary strength");
    train_cmd->add_option("--lr", flags.lr, "Learning rate");
    train_cmd->add_option("--wd", flags.weight_decay, "Weight decay");
    train_cmd->add_option("--rounds", flags.sched.rounds, "Training rounds");
    train_cmd->add_option("--e-feature", flags.sched.e_feature, "Feature-update epochs per round");
    train_cmd->add_option("--e-latent", flags.sched.e_latent, "Latent-characterization epochs per round");
    train_cmd->add_option("--e-task", flags.sched.e_task, "Invariant-learning epochs per round");
    train_cmd->add_option("--batch", flags.sched.batch, "Batch size");
    train_cmd->add_option("--seed", flags.seed, "Experiment seed");
    train_cmd->add_option("--val-ratio", flags.val_ratio, "Training split ratio (e.g. 0.8)");
    train_cmd->add_flag("--freeze-featurizer", flags.freeze_featurizer,
                        "Leave the feature extractor untouched in the adversarial steps");

    // --- detect ---
    auto* detect_cmd = app.add_subcommand("detect", "Score a dataset with a trained checkpoint");
    DetectArgs dargs;
    std::string detect_threshold;
    detect_cmd->add_option("--run", dargs.run_dir, "Run directory with model.bin")->required();
    detect_cmd->add_option("--data", dargs.data_dir, "Target dataset directory")->required();
    detect_cmd->add_option("--out", dargs.out_file, "Results file (default <run>/results.json)");
    detect_cmd->add_option("--scorer", dargs.scorer, "mcp | mah | odin | all");
    detect_cmd->add_option("--temp", dargs.temperature, "Softmax temperature");
    detect_cmd->add_option("--eps", dargs.eps_pert, "Input perturbation magnitude");
    detect_cmd->add_option("--threshold", detect_threshold, "Decision threshold or 'auto'");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "Compute metrics from a results file");
    EvalArgs eargs;
    std::string eval_run;
    eval_cmd->add_option("--results", eargs.results_file, "Results JSON from detect")->required();
    eval_cmd->add_option("--data", eargs.data_dir, "Ground-truth dataset directory")->required();
    eval_cmd->add_option("--out", eargs.out_json, "metrics.json path");
    eval_cmd->add_option("--csv", eargs.out_csv, "metrics.csv path");
    eval_cmd->add_option("--run", eval_run, "Run directory for divergence/agreement diagnostics");
    eval_cmd->add_flag("--ood-positive", eargs.ood_positive, "Report detection with OOD as the positive class");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (synth_cmd->parsed()) {
        if (!synth_config_file.empty()) {
            const json j = read_json_file(synth_config_file);
            auto get = [&](const char* key, auto& field) {
                if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
            };
            synth::SynthConfig file_cfg;
            get("k_true", file_cfg.k_true);
            get("classes", file_cfg.classes);
            get("ood_extra", file_cfg.ood_extra);
            get("channels", file_cfg.channels);
            get("series_length", file_cfg.series_length);
            get("window", file_cfg.window);
            get("step", file_cfg.step);
            get("series_per_pair", file_cfg.series_per_pair);
            get("noise_sigma", file_cfg.noise_sigma);
            get("drift_rate", file_cfg.drift_rate);
            get("seed", file_cfg.seed);
            // flags win over the file
            auto keep = [&](const char* flag, auto& flag_val, auto& file_val) {
                if (synth_cmd->count(flag) == 0) flag_val = file_val;
            };
            keep("--domains", scfg.k_true, file_cfg.k_true);
            keep("--classes", scfg.classes, file_cfg.classes);
            keep("--ood-extra", scfg.ood_extra, file_cfg.ood_extra);
            keep("--channels", scfg.channels, file_cfg.channels);
            keep("--series-length", scfg.series_length, file_cfg.series_length);
            keep("--window", scfg.window, file_cfg.window);
            keep("--step", scfg.step, file_cfg.step);
            keep("--series-per-pair", scfg.series_per_pair, file_cfg.series_per_pair);
            keep("--noise", scfg.noise_sigma, file_cfg.noise_sigma);
            keep("--drift", scfg.drift_rate, file_cfg.drift_rate);
            keep("--seed", scfg.seed, file_cfg.seed);
        }
        run_synth(scfg, synth_out);
        return 0;
    }

    if (train_cmd->parsed()) {
        ExperimentConfig cfg;
        if (!train_config_file.empty()) cfg = load_config_file(train_config_file);
        auto override_if = [&](const char* flag, auto ExperimentConfig::* field) {
            if (train_cmd->count(flag) > 0) cfg.*field = flags.*field;
        };
        override_if("--algorithm", &ExperimentConfig::algorithm);
        override_if("--k", &ExperimentConfig::latent_domains);
        override_if("--lambda1", &ExperimentConfig::lambda1);
        override_if("--lambda2", &ExperimentConfig::lambda2);
        override_if("--lr", &ExperimentConfig::lr);
        override_if("--wd", &ExperimentConfig::weight_decay);
        override_if("--seed", &ExperimentConfig::seed);
        override_if("--val-ratio", &ExperimentConfig::val_ratio);
        if (train_cmd->count("--freeze-featurizer") > 0) cfg.freeze_featurizer = flags.freeze_featurizer;
        if (train_cmd->count("--rounds") > 0) cfg.sched.rounds = flags.sched.rounds;
        if (train_cmd->count("--e-feature") > 0) cfg.sched.e_feature = flags.sched.e_feature;
        if (train_cmd->count("--e-latent") > 0) cfg.sched.e_latent = flags.sched.e_latent;
        if (train_cmd->count("--e-task") > 0) cfg.sched.e_task = flags.sched.e_task;
        if (train_cmd->count("--batch") > 0) cfg.sched.batch = flags.sched.batch;
        cfg.data_dir = train_data;
        if (!train_out.empty())
            cfg.out_dir = train_out;
        else if (cfg.out_dir.empty())
            cfg.out_dir = runs_root() + "/" + cfg.algorithm + "-k" + std::to_string(cfg.latent_domains) +
                          "-seed" + std::to_string(cfg.seed);

        std::optional<std::pair<int, int>> grid;
        if (!k_grid_text.empty()) {
            const std::size_t colon = k_grid_text.find(':');
            if (colon == std::string::npos) fail(Err::InvalidConfig, "k grid must look like LO:HI");
            try {
                grid = {std::stoi(k_grid_text.substr(0, colon)), std::stoi(k_grid_text.substr(colon + 1))};
            } catch (const std::exception&) {
                fail(Err::InvalidConfig, "k grid must look like LO:HI");
            }
        }
        const TrainSummary s = run_train(cfg, grid);
        std::printf("run %s: k=%d best_val_acc=%.4f\n", s.run_dir.string().c_str(), s.chosen_k,
                    s.best_val_acc);
        return 0;
    }

    if (detect_cmd->parsed()) {
        if (!detect_threshold.empty()) dargs.threshold = detect_threshold;
        run_detect(dargs);
        return 0;
    }

    if (eval_cmd->parsed()) {
        if (!eval_run.empty()) eargs.run_dir = fs::path(eval_run);
        run_eval(eargs);
        return 0;
    }
    return 2;
}

}  // namespace

int main_entry(int argc, const char* const* argv) {
    try {
        return dispatch(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

}  // namespace divts::cli
