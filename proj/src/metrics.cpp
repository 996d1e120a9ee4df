#include "divts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "divts/error.hpp"

namespace divts::eval {

double accuracy(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size() || preds.empty())
        fail(Err::LengthMismatch, "need equal, nonzero prediction and label counts");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(preds.size());
}

namespace {

void check_binary_inputs(std::span<const double> scores, std::span<const std::uint8_t> is_id,
                         std::size_t* n_pos, std::size_t* n_neg) {
    if (scores.size() != is_id.size())
        fail(Err::LengthMismatch, "score and flag lengths differ");
    *n_pos = 0;
    for (std::uint8_t f : is_id) *n_pos += f ? 1 : 0;
    *n_neg = is_id.size() - *n_pos;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> is_id) {
    std::size_t n_pos, n_neg;
    check_binary_inputs(scores, is_id, &n_pos, &n_neg);
    if (n_pos == 0 || n_neg == 0)
        fail(Err::OneClassOnly, "AUROC needs at least one ID and one OOD sample");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double mid_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k)
            if (is_id[order[k]]) rank_sum_pos += mid_rank;
        i = j;
    }
    const double u = rank_sum_pos - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double aupr(std::span<const double> scores, std::span<const std::uint8_t> is_id) {
    std::size_t n_pos, n_neg;
    check_binary_inputs(scores, is_id, &n_pos, &n_neg);
    if (n_pos == 0) fail(Err::NoPositives, "AUPR needs at least one positive sample");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, fp = 0, i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t k = i; k < j; ++k) is_id[order[k]] ? ++tp : ++fp;
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

namespace {

// Strict ordering on groups so the probe sees the two samples in a
// deterministic order regardless of argument position.
bool canonical_first(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) return a.rows < b.rows;
    return std::lexicographical_compare(a.a.begin(), a.a.end(), b.a.begin(), b.a.end());
}

struct Fold {
    std::vector<const double*> x;
    std::vector<std::uint8_t> y;
};

double probe_balanced_error(const Fold& train, const Fold& test, int dim) {
    // Standardize with training-fold statistics.
    std::vector<double> mean(static_cast<std::size_t>(dim), 0.0), sd(static_cast<std::size_t>(dim), 0.0);
    for (const double* r : train.x)
        for (int j = 0; j < dim; ++j) mean[static_cast<std::size_t>(j)] += r[j];
    for (double& v : mean) v /= static_cast<double>(train.x.size());
    for (const double* r : train.x)
        for (int j = 0; j < dim; ++j) {
            const double d = r[j] - mean[static_cast<std::size_t>(j)];
            sd[static_cast<std::size_t>(j)] += d * d;
        }
    for (double& v : sd) {
        v = std::sqrt(v / static_cast<double>(train.x.size()));
        if (v <= 0.0) v = 1.0;
    }

    std::vector<double> w(static_cast<std::size_t>(dim) + 1, 0.0);  // last entry is the bias
    std::vector<double> grad(w.size());
    const int iters = 300;
    const double lr = 0.5, l2 = 1e-4;
    const double inv_n = 1.0 / static_cast<double>(train.x.size());
    for (int it = 0; it < iters; ++it) {
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t i = 0; i < train.x.size(); ++i) {
            const double* r = train.x[i];
            double z = w[static_cast<std::size_t>(dim)];
            for (int j = 0; j < dim; ++j)
                z += w[static_cast<std::size_t>(j)] * (r[j] - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)];
            const double err = 1.0 / (1.0 + std::exp(-z)) - (train.y[i] ? 1.0 : 0.0);
            for (int j = 0; j < dim; ++j)
                grad[static_cast<std::size_t>(j)] +=
                    err * (r[j] - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)];
            grad[static_cast<std::size_t>(dim)] += err;
        }
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * (grad[j] * inv_n + l2 * w[j]);
    }

    std::size_t err_pos = 0, n_test_pos = 0, err_neg = 0, n_test_neg = 0;
    for (std::size_t i = 0; i < test.x.size(); ++i) {
        const double* r = test.x[i];
        double z = w[static_cast<std::size_t>(dim)];
        for (int j = 0; j < dim; ++j)
            z += w[static_cast<std::size_t>(j)] * (r[j] - mean[static_cast<std::size_t>(j)]) / sd[static_cast<std::size_t>(j)];
        const bool pred_pos = z > 0.0;
        if (test.y[i]) {
            ++n_test_pos;
            if (!pred_pos) ++err_pos;
        } else {
            ++n_test_neg;
            if (pred_pos) ++err_neg;
        }
    }
    const double ep = n_test_pos ? static_cast<double>(err_pos) / static_cast<double>(n_test_pos) : 0.0;
    const double en = n_test_neg ? static_cast<double>(err_neg) / static_cast<double>(n_test_neg) : 0.0;
    return 0.5 * (ep + en);
}

}  // namespace

double h_divergence_proxy(const Mat& group_a, const Mat& group_b) {
    if (group_a.rows < 10 || group_b.rows < 10)
        fail(Err::TooFewSamples, "each group needs at least 10 samples");
    if (group_a.cols != group_b.cols) fail(Err::LengthMismatch, "feature dimensions differ");

    const Mat& first = canonical_first(group_a, group_b) ? group_a : group_b;
    const Mat& second = (&first == &group_a) ? group_b : group_a;
    const int dim = first.cols;

    // Interleaved deterministic 2-fold split within each group.
    Fold fold[2];
    for (int g = 0; g < 2; ++g) {
        const Mat& mat = g == 0 ? first : second;
        for (int i = 0; i < mat.rows; ++i) {
            Fold& f = fold[i % 2];
            f.x.push_back(mat.row(i));
            f.y.push_back(g == 0 ? 1 : 0);
        }
    }

    const double bal_err =
        0.5 * (probe_balanced_error(fold[0], fold[1], dim) + probe_balanced_error(fold[1], fold[0], dim));
    return std::clamp(2.0 * (1.0 - 2.0 * bal_err), 0.0, 2.0);
}

std::vector<int> hungarian_assignment(const Mat& cost) {
    check_shape(cost.rows == cost.cols && cost.rows > 0, "hungarian needs a square matrix");
    const int n = cost.rows;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<int> match(static_cast<std::size_t>(n) + 1, 0), way(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = match[static_cast<std::size_t>(j0)];
            int j1 = -1;
            double delta = inf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost.row(i0 - 1)[j - 1] - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
    for (int j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return row_to_col;
}

double domain_agreement(std::span<const int> d_pseudo, std::span<const int> d_planted) {
    if (d_pseudo.size() != d_planted.size() || d_pseudo.empty())
        fail(Err::LengthMismatch, "need equal, nonzero label vectors");

    std::map<int, int> pseudo_ids, planted_ids;
    for (int v : d_pseudo) pseudo_ids.emplace(v, 0);
    for (int v : d_planted) planted_ids.emplace(v, 0);
    int next = 0;
    for (auto& [k, idx] : pseudo_ids) idx = next++;
    next = 0;
    for (auto& [k, idx] : planted_ids) idx = next++;

    const int n = std::max(static_cast<int>(pseudo_ids.size()), static_cast<int>(planted_ids.size()));
    Mat counts(n, n);  // padded with zero-count virtual labels
    for (std::size_t i = 0; i < d_pseudo.size(); ++i)
        counts.row(pseudo_ids[d_pseudo[i]])[planted_ids[d_planted[i]]] += 1.0;

    Mat cost = counts;
    for (double& x : cost.a) x = -x;
    const std::vector<int> assign = hungarian_assignment(cost);
    double matched = 0.0;
    for (int i = 0; i < n; ++i) matched += counts.row(i)[assign[static_cast<std::size_t>(i)]];
    return matched / static_cast<double>(d_pseudo.size());
}

}  // namespace divts::eval
