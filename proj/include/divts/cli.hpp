#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "divts/config.hpp"
#include "divts/synthgen.hpp"

namespace divts::cli {

// Full command-line entry point (subcommands: synth, train, detect, eval).
// Returns the process exit code: 0 success, 2 usage error, 3 data error,
// 4 numeric failure.
int main_entry(int argc, const char* const* argv);

int exit_code_for(Err kind);

// The individual commands, callable in-process. All throw divts::Error.

void run_synth(const synth::SynthConfig& scfg, const std::filesystem::path& out_dir);

struct TrainSummary {
    std::filesystem::path run_dir;
    int chosen_k = 0;
    double best_val_acc = 0.0;
};

TrainSummary run_train(ExperimentConfig cfg, std::optional<std::pair<int, int>> k_grid = {});

struct DetectArgs {
    std::filesystem::path run_dir;
    std::filesystem::path data_dir;
    std::filesystem::path out_file;  // defaults to run_dir/results.json when empty
    std::string scorer = "mcp";      // mcp | mah | odin | all
    double temperature = 1.0;
    double eps_pert = 0.0;
    std::optional<std::string> threshold;  // "auto" or a number
};

void run_detect(const DetectArgs& args);

struct EvalArgs {
    std::filesystem::path results_file;
    std::filesystem::path data_dir;
    std::filesystem::path out_json;  // defaults next to results when empty
    std::filesystem::path out_csv;
    std::optional<std::filesystem::path> run_dir;  // enables divergence/agreement diagnostics
    bool ood_positive = false;
};

void run_eval(const EvalArgs& args);

}  // namespace divts::cli
