#include "divts/detect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "divts/diversify.hpp"
#include "divts/nn.hpp"

namespace divts::detect {

namespace {

// Cholesky factorization of an SPD matrix; returns false if a pivot fails.
bool cholesky(const Mat& a, Mat& l) {
    const int n = a.rows;
    l = Mat(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = a.row(i)[j] - dot(l.row(i), l.row(j), j);
            if (i == j) {
                if (s <= 0.0) return false;
                l.row(i)[i] = std::sqrt(s);
            } else {
                l.row(i)[j] = s / l.row(j)[j];
            }
        }
    }
    return true;
}

// Inverse from the Cholesky factor by solving L L^T X = I column-wise.
Mat cholesky_inverse(const Mat& l) {
    const int n = l.rows;
    Mat inv(n, n);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        for (int i = 0; i < n; ++i) {
            double s = (i == c ? 1.0 : 0.0) - dot(l.row(i), col.data(), i);
            col[static_cast<std::size_t>(i)] = s / l.row(i)[i];
        }
        for (int i = n - 1; i >= 0; --i) {
            double s = col[static_cast<std::size_t>(i)];
            for (int jj = i + 1; jj < n; ++jj) s -= l.row(jj)[i] * col[static_cast<std::size_t>(jj)];
            col[static_cast<std::size_t>(i)] = s / l.row(i)[i];
        }
        for (int i = 0; i < n; ++i) inv.row(i)[c] = col[static_cast<std::size_t>(i)];
    }
    return inv;
}

double quad_form(const Mat& inv, std::span<const double> d) {
    double s = 0.0;
    for (int i = 0; i < inv.rows; ++i) s += d[static_cast<std::size_t>(i)] * dot(inv.row(i), d.data(), inv.cols);
    return s;
}

}  // namespace

GaussianStats fit_gaussian_stats(const model::DiversifyModel& m, const data::Dataset& train,
                                 double ridge) {
    const int C = m.cfg.classes;
    const int b = m.cfg.bottleneck_dim;
    const int n = static_cast<int>(train.size());
    if (n == 0) fail(Err::MissingClass, "cannot fit Gaussian stats on an empty dataset");

    Mat emb = diversify::embed_dataset(m, train);

    GaussianStats st;
    st.dim = b;
    st.classes = C;
    st.means = Mat(C, b);
    st.counts.assign(static_cast<std::size_t>(C), 0);
    for (int i = 0; i < n; ++i) {
        const int y = train.instances[static_cast<std::size_t>(i)].y;
        if (y < 1 || y > C) fail(Err::LabelOutOfRange, "label " + std::to_string(y) + " outside ID range");
        ++st.counts[static_cast<std::size_t>(y - 1)];
        axpy(st.means.row(y - 1), 1.0, emb.row(i), b);
    }
    for (int c = 0; c < C; ++c) {
        if (st.counts[static_cast<std::size_t>(c)] == 0)
            fail(Err::MissingClass, "ID class " + std::to_string(c + 1) + " has no training samples");
        double* mu = st.means.row(c);
        for (int j = 0; j < b; ++j) mu[j] /= st.counts[static_cast<std::size_t>(c)];
    }

    st.cov = Mat(b, b);
    std::vector<double> d(static_cast<std::size_t>(b));
    for (int i = 0; i < n; ++i) {
        const double* mu = st.means.row(train.instances[static_cast<std::size_t>(i)].y - 1);
        const double* z = emb.row(i);
        for (int j = 0; j < b; ++j) d[static_cast<std::size_t>(j)] = z[j] - mu[j];
        for (int j = 0; j < b; ++j) {
            if (d[static_cast<std::size_t>(j)] != 0.0) axpy(st.cov.row(j), d[static_cast<std::size_t>(j)], d.data(), b);
        }
    }
    for (double& x : st.cov.a) x /= n;

    double trace = 0.0;
    for (int j = 0; j < b; ++j) trace += st.cov.row(j)[j];
    st.ridge = ridge >= 0.0 ? ridge : 1e-3 * trace / b;
    if (st.ridge <= 0.0 && trace <= 0.0) st.ridge = 1e-6;

    Mat reg = st.cov, l;
    for (int attempt = 0;; ++attempt) {
        reg = st.cov;
        for (int j = 0; j < b; ++j) reg.row(j)[j] += st.ridge;
        if (cholesky(reg, l)) break;
        if (attempt >= 20)
            fail(Err::SingularCovariance, "covariance not invertible even after raising the ridge");
        st.ridge = st.ridge > 0.0 ? st.ridge * 10.0 : 1e-6;
        std::fprintf(stderr, "warning: covariance ill-conditioned, raising ridge to %g\n", st.ridge);
    }
    st.cov_inv = cholesky_inverse(l);
    return st;
}

double score_mahalanobis(const GaussianStats& stats, std::span<const double> z) {
    if (stats.dim == 0) fail(Err::MissingStats, "Gaussian stats are not fitted");
    check_shape(static_cast<int>(z.size()) == stats.dim, "embedding dimension");
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> d(static_cast<std::size_t>(stats.dim));
    for (int c = 0; c < stats.classes; ++c) {
        const double* mu = stats.means.row(c);
        for (int j = 0; j < stats.dim; ++j) d[static_cast<std::size_t>(j)] = z[static_cast<std::size_t>(j)] - mu[j];
        best = std::max(best, -quad_form(stats.cov_inv, d));
    }
    return best;
}

int mahalanobis_class(const GaussianStats& stats, std::span<const double> z) {
    double best = -std::numeric_limits<double>::infinity();
    int arg = 1;
    std::vector<double> d(static_cast<std::size_t>(stats.dim));
    for (int c = 0; c < stats.classes; ++c) {
        const double* mu = stats.means.row(c);
        for (int j = 0; j < stats.dim; ++j) d[static_cast<std::size_t>(j)] = z[static_cast<std::size_t>(j)] - mu[j];
        const double s = -quad_form(stats.cov_inv, d);
        if (s > best) {
            best = s;
            arg = c + 1;
        }
    }
    return arg;
}

McpResult score_mcp(const model::DiversifyModel& m, const float* x, double temperature) {
    Tensor batch = model::make_batch({x}, m.cfg.channels, m.cfg.window);
    Tensor logits = m.infer_head(batch, m.g_task);
    const std::vector<double> p =
        nn::softmax_t(std::span<const double>(logits.row(0, 0), static_cast<std::size_t>(logits.c)), temperature);
    McpResult r;
    const auto it = std::max_element(p.begin(), p.end());
    r.score = *it;
    r.pred_class = 1 + static_cast<int>(it - p.begin());
    return r;
}

McpResult score_odin(const model::DiversifyModel& m, const float* x, double temperature,
                     double eps_pert) {
    if (eps_pert < 0.0) fail(Err::InvalidConfig, "odin perturbation must be >= 0");
    Tensor batch = model::make_batch({x}, m.cfg.channels, m.cfg.window);

    // Eval-mode cached forward so the input gradient can be taken.
    model::FeatureExtractor::Cache fc;
    model::Bottleneck::Cache bc;
    nn::Linear::Cache hc;
    Tensor feat = m.fx.forward_eval_cached(batch, fc);
    Tensor emb = m.g_task.bottleneck.forward(feat, &bc);
    Tensor logits = m.g_task.head.forward(emb, &hc);

    const int C = logits.c;
    const std::vector<double> p =
        nn::softmax_t(std::span<const double>(logits.row(0, 0), static_cast<std::size_t>(C)), temperature);
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());

    // d/dl of -log softmax_T(l)[pred] = (softmax_T(l) - onehot(pred)) / T.
    Tensor gl = Tensor::flat(1, C);
    for (int k = 0; k < C; ++k) gl.row(0, 0)[k] = (p[static_cast<std::size_t>(k)] - (k == pred ? 1.0 : 0.0)) / temperature;
    Tensor g = m.g_task.head.backward_input(gl);
    g = m.g_task.bottleneck.backward_input(g, bc);
    g = m.fx.backward_input_eval(g, fc);

    Tensor nudged = batch;
    for (std::size_t i = 0; i < nudged.size(); ++i) {
        const double s = g.v[i] > 0.0 ? 1.0 : (g.v[i] < 0.0 ? -1.0 : 0.0);
        nudged.v[i] = std::clamp(nudged.v[i] - eps_pert * s, 0.0, 1.0);
    }

    Tensor logits2 = m.infer_head(nudged, m.g_task);
    const std::vector<double> p2 =
        nn::softmax_t(std::span<const double>(logits2.row(0, 0), static_cast<std::size_t>(C)), temperature);
    McpResult r;
    const auto it = std::max_element(p2.begin(), p2.end());
    r.score = *it;
    r.pred_class = 1 + static_cast<int>(it - p2.begin());
    return r;
}

std::vector<ScoreRecord> detect_batch(const model::DiversifyModel& m, const GaussianStats* stats,
                                      const data::Dataset& ds, const std::string& scorer,
                                      const DetectParams& params) {
    if (scorer != "mcp" && scorer != "mah" && scorer != "odin")
        fail(Err::InvalidConfig, "unknown scorer '" + scorer + "'");
    if (scorer == "mah" && (stats == nullptr || stats->dim == 0))
        fail(Err::MissingStats, "mah scoring requires fitted Gaussian stats");

    std::vector<ScoreRecord> out;
    out.reserve(ds.size());
    const bool have_truth = !ds.ood_classes.empty();

    Mat emb;
    if (scorer == "mah") emb = diversify::embed_dataset(m, ds);

    for (std::size_t i = 0; i < ds.size(); ++i) {
        const data::Instance& ins = ds.instances[i];
        ScoreRecord rec;
        rec.id = static_cast<int>(i);
        rec.scorer = scorer;
        if (scorer == "mcp") {
            const McpResult r = score_mcp(m, ins.x.data(), params.temperature);
            rec.score = r.score;
            rec.pred_class = r.pred_class;
        } else if (scorer == "odin") {
            const McpResult r = score_odin(m, ins.x.data(), params.temperature, params.eps_pert);
            rec.score = r.score;
            rec.pred_class = r.pred_class;
        } else {
            std::span<const double> z(emb.row(static_cast<int>(i)), static_cast<std::size_t>(emb.cols));
            rec.score = score_mahalanobis(*stats, z);
            rec.pred_class = mahalanobis_class(*stats, z);
        }
        if (have_truth) rec.is_ood_true = ds.is_ood(ins);
        if (params.threshold) rec.pred_is_id = rec.score >= *params.threshold;
        out.push_back(std::move(rec));
    }
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) fail(Err::TooFewSamples, "quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 1.0) * (static_cast<double>(values.size()) - 1.0);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace divts::detect
