#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "divts/dataset.hpp"
#include "divts/model.hpp"

namespace divts::diversify {

struct Schedule {
    int rounds = 10;     // R
    int e_feature = 5;   // epochs of supervised joint-label feature update per round
    int e_latent = 5;    // epochs of latent-domain characterization per round
    int e_task = 5;      // epochs of invariant task learning per round
    int batch = 32;
    int budget = 150;    // rounds * (e_feature + e_latent + e_task) must stay within

    int epochs_per_round() const { return e_feature + e_latent + e_task; }
    void validate() const;
};

struct TrainConfig {
    int latent_domains = 3;  // K
    double lambda1 = 1.0;    // class-adversary strength in the characterization step
    double lambda2 = 1.0;    // domain-adversary strength in the invariant step
    double lr = 1e-2;
    double weight_decay = 5e-4;
    bool decoupled_wd = false;
    bool freeze_featurizer = false;  // characterization/invariant steps leave fx untouched
    Schedule sched;
    std::uint64_t seed = 0;
};

// Joint domain-class label s = d*C + y with y in 1..C and d in 0..K-1,
// so s ranges over 1..K*C and the pair is recoverable.
int domain_class_label(int d, int y, int classes);
std::pair<int, int> split_domain_class_label(int s, int classes);  // -> (d, y)

// --- latent clustering primitives (pure functions on row matrices) ---

Mat l2_normalize_rows(const Mat& m);

// Softmax-weighted centroids; columns of `weights` are per-domain weights.
// A domain whose weight mass is below 1e-12 is reported through `degenerate`
// when provided, otherwise raises DegenerateWeights.
Mat soft_centroids(const Mat& emb, const Mat& weights, std::vector<int>* degenerate = nullptr);

// Minimum-distance centroid per row; ties break toward the lowest index.
std::vector<int> assign_nearest(const Mat& emb, const Mat& centroids);

struct HardUpdateResult {
    Mat centroids;
    std::vector<int> assignments;
    int reseeded = 0;
};

// One hard refinement pass: indicator means, re-seeding any emptied domain to
// the embedding farthest from its nearest surviving centroid, then re-assign.
HardUpdateResult update_centroids_hard(const Mat& emb, const std::vector<int>& assign, int k);

// --- training ---

struct RoundRecord {
    int round = 0;
    double loss_feature = 0.0;       // joint-label supervised loss
    double loss_latent_domain = 0.0;
    double loss_latent_adv = 0.0;
    double loss_task_class = 0.0;
    double loss_task_adv = 0.0;
    double val_acc = 0.0;
    std::vector<int> assignments;    // pseudo-domain label per training instance
    std::vector<int> cluster_sizes;
};

struct TrainResult {
    model::DiversifyModel best;  // checkpoint with the highest validation accuracy
    std::vector<RoundRecord> history;
    int best_round = 0;          // 1-based
    double best_val_acc = 0.0;
    std::vector<int> final_assignments;
};

using RoundSink = std::function<void(const RoundRecord&)>;
// Invoked after every optimizer step with the live model; used by tests that
// compare training trajectories step by step.
using StepObserver = std::function<void(const model::DiversifyModel&)>;

TrainResult train_diversify(const data::Dataset& train, const data::Dataset& val,
                            const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                            const RoundSink& sink = {}, const StepObserver& observer = {});

// Same backbone trained with class cross-entropy only; runs the same total
// epoch budget and evaluates/checkpoints on the same cadence.
TrainResult train_erm(const data::Dataset& train, const data::Dataset& val,
                      const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                      const RoundSink& sink = {}, const StepObserver& observer = {});

// Adversarial baseline with uniformly random per-batch domain labels.
TrainResult train_dann(const data::Dataset& train, const data::Dataset& val,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                       const RoundSink& sink = {}, const StepObserver& observer = {});

struct Prediction {
    int label = 0;  // 1-based class
    std::vector<double> probs;
};

Prediction predict(const model::DiversifyModel& m, const float* x);
std::vector<int> predict_batch(const model::DiversifyModel& m, const data::Dataset& ds);
// Accuracy of the task head over the ID-class instances of ds.
double id_accuracy(const model::DiversifyModel& m, const data::Dataset& ds);

// Task-group embeddings for every instance, in dataset order.
Mat embed_dataset(const model::DiversifyModel& m, const data::Dataset& ds);

}  // namespace divts::diversify
