#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "divts/dataset.hpp"
#include "divts/diversify.hpp"
#include "divts/model.hpp"
#include "nlohmann/json.hpp"

namespace divts::cli {

// Every knob of a run. Resolution order is CLI flags > config file >
// built-in defaults; the fully resolved value set is persisted with each run.
struct ExperimentConfig {
    std::string algorithm = "diversify";  // diversify | erm | dann
    int latent_domains = 3;               // K
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    double temperature = 1.0;
    double eps_pert = 0.0;
    double lr = 1e-2;
    double weight_decay = 5e-4;
    bool decoupled_wd = false;
    bool freeze_featurizer = false;
    diversify::Schedule sched;
    data::WindowConfig window;  // for raw-series ingestion bookkeeping
    std::string normalize = "per_sample";  // per_sample | global
    double val_ratio = 0.8;
    double threshold_quantile = 0.05;
    std::uint64_t seed = 0;

    // model architecture
    int conv1_ch = 16;
    int conv2_ch = 32;
    int kernel = 9;
    int bottleneck_dim = 256;
    int adv_hidden = 256;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    // paths
    std::string data_dir;
    std::string out_dir;

    void validate() const;
    nlohmann::json to_json() const;
    // Applies only the keys present in j on top of the current values.
    void apply_json(const nlohmann::json& j);

    model::ModelConfig model_config(int channels, int window_len, int classes) const;
    diversify::TrainConfig train_config() const;
    std::string config_hash() const;  // stable fingerprint of the resolved config
};

ExperimentConfig load_config_file(const std::filesystem::path& file);

}  // namespace divts::cli
