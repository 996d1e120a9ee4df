#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "divts/dataset.hpp"
#include "divts/model.hpp"

namespace divts::detect {

// Class-conditional Gaussian fit over task-group embeddings: exact per-class
// means and one tied covariance pooled over class-centered deviations. The
// inverse is taken on cov + ridge*I.
struct GaussianStats {
    int dim = 0;
    int classes = 0;
    Mat means;     // [classes x dim]
    Mat cov;       // tied covariance, before ridge
    Mat cov_inv;   // inverse of cov + ridge*I
    double ridge = 0.0;
    std::vector<int> counts;  // per-class sample counts
};

// Fit on the training split only. The ridge defaults to
// 1e-3 * trace(cov) / dim and is raised (with a warning) if inversion fails.
GaussianStats fit_gaussian_stats(const model::DiversifyModel& m, const data::Dataset& train,
                                 double ridge = -1.0);

// max_c -(z - mu_c)^T Sigma^{-1} (z - mu_c); 0 only at a class mean (ridge 0).
double score_mahalanobis(const GaussianStats& stats, std::span<const double> z);
// Class of the nearest Gaussian under the same metric (1-based).
int mahalanobis_class(const GaussianStats& stats, std::span<const double> z);

struct McpResult {
    double score = 0.0;  // max temperature-softmax probability
    int pred_class = 0;  // 1-based
};

McpResult score_mcp(const model::DiversifyModel& m, const float* x, double temperature = 1.0);

// Input-perturbation scorer: nudge x against the gradient of the predicted
// class's temperature-scaled cross-entropy, re-clamp to [0,1], and rescore.
// With eps_pert = 0 and T = 1 this is exactly score_mcp.
McpResult score_odin(const model::DiversifyModel& m, const float* x, double temperature,
                     double eps_pert);

struct ScoreRecord {
    int id = 0;
    std::string scorer;  // "mcp", "mah", or "odin"
    double score = 0.0;  // higher = more in-distribution, for every scorer
    int pred_class = 0;
    std::optional<bool> is_ood_true;
    std::optional<bool> pred_is_id;  // present when a threshold was supplied
};

struct DetectParams {
    double temperature = 1.0;
    double eps_pert = 0.0;
    std::optional<double> threshold;  // ID iff score >= threshold
};

std::vector<ScoreRecord> detect_batch(const model::DiversifyModel& m, const GaussianStats* stats,
                                      const data::Dataset& ds, const std::string& scorer,
                                      const DetectParams& params = {});

// q-quantile by linear interpolation of the sorted sample.
double quantile(std::vector<double> values, double q);

}  // namespace divts::detect
