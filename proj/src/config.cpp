#include "divts/config.hpp"

#include <fstream>

namespace divts::cli {

void ExperimentConfig::validate() const {
    if (algorithm != "diversify" && algorithm != "erm" && algorithm != "dann")
        fail(Err::InvalidConfig, "algorithm must be diversify, erm, or dann");
    if (latent_domains < 1 || latent_domains > 10)
        fail(Err::InvalidConfig, "latent domain count must be in [1, 10]");
    if (lambda1 < 0.0 || lambda2 < 0.0) fail(Err::InvalidConfig, "lambda must be >= 0");
    if (!(temperature > 0.0)) fail(Err::InvalidConfig, "temperature must be > 0");
    if (eps_pert < 0.0) fail(Err::InvalidConfig, "perturbation must be >= 0");
    if (!(lr > 0.0)) fail(Err::InvalidConfig, "learning rate must be > 0");
    if (weight_decay < 0.0) fail(Err::InvalidConfig, "weight decay must be >= 0");
    if (!(val_ratio > 0.0 && val_ratio < 1.0)) fail(Err::InvalidConfig, "val ratio must be in (0, 1)");
    if (!(threshold_quantile >= 0.0 && threshold_quantile <= 1.0))
        fail(Err::InvalidConfig, "threshold quantile must be in [0, 1]");
    if (normalize != "per_sample" && normalize != "global")
        fail(Err::InvalidConfig, "normalize must be per_sample or global");
    sched.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
    return nlohmann::json{
        {"algorithm", algorithm},
        {"latent_domains", latent_domains},
        {"lambda1", lambda1},
        {"lambda2", lambda2},
        {"temperature", temperature},
        {"eps_pert", eps_pert},
        {"lr", lr},
        {"weight_decay", weight_decay},
        {"decoupled_wd", decoupled_wd},
        {"freeze_featurizer", freeze_featurizer},
        {"schedule",
         {{"rounds", sched.rounds},
          {"e_feature", sched.e_feature},
          {"e_latent", sched.e_latent},
          {"e_task", sched.e_task},
          {"batch", sched.batch},
          {"budget", sched.budget}}},
        {"window", {{"window", window.window}, {"step", window.step}}},
        {"normalize", normalize},
        {"val_ratio", val_ratio},
        {"threshold_quantile", threshold_quantile},
        {"seed", seed},
        {"model",
         {{"conv1_ch", conv1_ch},
          {"conv2_ch", conv2_ch},
          {"kernel", kernel},
          {"bottleneck_dim", bottleneck_dim},
          {"adv_hidden", adv_hidden},
          {"bn_momentum", bn_momentum},
          {"bn_eps", bn_eps}}},
        {"data_dir", data_dir},
        {"out_dir", out_dir},
    };
}

void ExperimentConfig::apply_json(const nlohmann::json& j) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("algorithm", algorithm);
    get("latent_domains", latent_domains);
    get("lambda1", lambda1);
    get("lambda2", lambda2);
    get("temperature", temperature);
    get("eps_pert", eps_pert);
    get("lr", lr);
    get("weight_decay", weight_decay);
    get("decoupled_wd", decoupled_wd);
    get("freeze_featurizer", freeze_featurizer);
    if (j.contains("schedule")) {
        const nlohmann::json& s = j.at("schedule");
        auto gets = [&](const char* key, int& field) {
            if (s.contains(key)) field = s.at(key).get<int>();
        };
        gets("rounds", sched.rounds);
        gets("e_feature", sched.e_feature);
        gets("e_latent", sched.e_latent);
        gets("e_task", sched.e_task);
        gets("batch", sched.batch);
        gets("budget", sched.budget);
    }
    if (j.contains("window")) {
        const nlohmann::json& w = j.at("window");
        if (w.contains("window")) window.window = w.at("window").get<int>();
        if (w.contains("step")) window.step = w.at("step").get<int>();
    }
    get("normalize", normalize);
    get("val_ratio", val_ratio);
    get("threshold_quantile", threshold_quantile);
    get("seed", seed);
    if (j.contains("model")) {
        const nlohmann::json& m = j.at("model");
        auto getm = [&](const char* key, auto& field) {
            if (m.contains(key)) field = m.at(key).get<std::decay_t<decltype(field)>>();
        };
        getm("conv1_ch", conv1_ch);
        getm("conv2_ch", conv2_ch);
        getm("kernel", kernel);
        getm("bottleneck_dim", bottleneck_dim);
        getm("adv_hidden", adv_hidden);
        getm("bn_momentum", bn_momentum);
        getm("bn_eps", bn_eps);
    }
    get("data_dir", data_dir);
    get("out_dir", out_dir);
}

model::ModelConfig ExperimentConfig::model_config(int channels, int window_len, int classes) const {
    model::ModelConfig mc;
    mc.channels = channels;
    mc.window = window_len;
    mc.classes = classes;
    mc.latent_domains = latent_domains;
    mc.conv1_ch = conv1_ch;
    mc.conv2_ch = conv2_ch;
    mc.kernel = kernel;
    mc.bottleneck_dim = bottleneck_dim;
    mc.adv_hidden = adv_hidden;
    mc.bn_momentum = bn_momentum;
    mc.bn_eps = bn_eps;
    return mc;
}

diversify::TrainConfig ExperimentConfig::train_config() const {
    diversify::TrainConfig tc;
    tc.latent_domains = latent_domains;
    tc.lambda1 = lambda1;
    tc.lambda2 = lambda2;
    tc.lr = lr;
    tc.weight_decay = weight_decay;
    tc.decoupled_wd = decoupled_wd;
    tc.freeze_featurizer = freeze_featurizer;
    tc.sched = sched;
    tc.seed = seed;
    return tc;
}

std::string ExperimentConfig::config_hash() const {
    const std::string s = to_json().dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig load_config_file(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) fail(Err::IOFailure, "cannot open config file " + file.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::FormatError, file.string() + ": " + e.what());
    }
    ExperimentConfig cfg;
    try {
        cfg.apply_json(j);
    } catch (const nlohmann::json::exception& e) {
        fail(Err::SchemaMismatch, file.string() + ": " + e.what());
    }
    return cfg;
}

}  // namespace divts::cli
