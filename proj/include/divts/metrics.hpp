#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "divts/tensor.hpp"

namespace divts::eval {

// Fraction of exact matches; lengths must be equal and nonzero.
double accuracy(std::span<const int> preds, std::span<const int> labels);

// Area under the ROC curve with ID as the positive class, computed by the
// rank (Mann-Whitney) method; ties count one half.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_id);

// Average precision with ID as the positive class: descending-score threshold
// sweep with step interpolation, tie groups processed together.
double aupr(std::span<const double> scores, std::span<const std::uint8_t> is_id);

// Empirical two-sample divergence proxy in [0, 2]: a logistic probe separates
// the groups under 2-fold cross-validation and 2*(1 - 2*balanced_error) is
// clamped into range. Symmetric in its arguments.
double h_divergence_proxy(const Mat& group_a, const Mat& group_b);

// Maximum accuracy over bijections between the two label alphabets
// (Hungarian matching on the confusion matrix, padded when sizes differ).
double domain_agreement(std::span<const int> d_pseudo, std::span<const int> d_planted);

// Minimum-cost assignment for a square cost matrix; returns column per row.
std::vector<int> hungarian_assignment(const Mat& cost);

}  // namespace divts::eval
