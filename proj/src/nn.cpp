#include "divts/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "divts/error.hpp"

namespace divts::nn {

void zero_grads(const ParamList& params) {
    for (const ParamTensor& pt : params) std::fill(pt.g->begin(), pt.g->end(), 0.0);
}

namespace {

void fan_in_uniform(std::vector<double>& w, std::vector<double>& b, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& x : w) x = rng.uniform(-bound, bound);
    for (double& x : b) x = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv1d

void Conv1d::init(int in_ch_, int out_ch_, int k_, Rng& rng) {
    in_ch = in_ch_;
    out_ch = out_ch_;
    k = k_;
    w.assign(static_cast<std::size_t>(out_ch) * in_ch * k, 0.0);
    b.assign(static_cast<std::size_t>(out_ch), 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
    fan_in_uniform(w, b, in_ch * k, rng);
}

Tensor Conv1d::forward(const Tensor& x, Cache* cache) const {
    check_shape(x.c == in_ch && x.t >= k, "conv input");
    const int to = out_len(x.t);
    Tensor y(x.n, out_ch, to);
    for (int n = 0; n < x.n; ++n) {
        for (int oc = 0; oc < out_ch; ++oc) {
            double* yr = y.row(n, oc);
            std::fill(yr, yr + to, b[static_cast<std::size_t>(oc)]);
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* xr = x.row(n, ic);
                const double* wr = w.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * k;
                for (int j = 0; j < k; ++j) axpy(yr, wr[j], xr + j, to);
            }
        }
    }
    if (cache) cache->in = x;
    return y;
}

Tensor Conv1d::backward(const Tensor& gout, const Cache& cache) {
    const Tensor& x = cache.in;
    const int to = gout.t;
    for (int n = 0; n < x.n; ++n) {
        for (int oc = 0; oc < out_ch; ++oc) {
            const double* gr = gout.row(n, oc);
            double s = 0.0;
            for (int t = 0; t < to; ++t) s += gr[t];
            gb[static_cast<std::size_t>(oc)] += s;
            for (int ic = 0; ic < in_ch; ++ic) {
                const double* xr = x.row(n, ic);
                double* gwr = gw.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * k;
                for (int j = 0; j < k; ++j) gwr[j] += dot(gr, xr + j, to);
            }
        }
    }
    return backward_input(gout, x.t);
}

Tensor Conv1d::backward_input(const Tensor& gout, int in_len) const {
    check_shape(gout.c == out_ch && gout.t == in_len - k + 1, "conv upstream gradient");
    Tensor gin(gout.n, in_ch, in_len);
    const int to = gout.t;
    for (int n = 0; n < gout.n; ++n) {
        for (int oc = 0; oc < out_ch; ++oc) {
            const double* gr = gout.row(n, oc);
            for (int ic = 0; ic < in_ch; ++ic) {
                double* gi = gin.row(n, ic);
                const double* wr = w.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * k;
                for (int j = 0; j < k; ++j) axpy(gi + j, wr[j], gr, to);
            }
        }
    }
    return gin;
}

void Conv1d::collect(ParamList& out) {
    out.push_back({&w, &gw});
    out.push_back({&b, &gb});
}

// ---------------------------------------------------------------------------
// MaxPool2

Tensor MaxPool2::forward(const Tensor& x, Cache* cache) const {
    const int to = x.t / 2;
    check_shape(to >= 1, "pool input too short");
    Tensor y(x.n, x.c, to);
    if (cache) {
        cache->right.assign(static_cast<std::size_t>(x.n) * x.c * to, 0);
        cache->n = x.n;
        cache->c = x.c;
        cache->t_out = to;
    }
    for (int n = 0; n < x.n; ++n) {
        for (int c = 0; c < x.c; ++c) {
            const double* xr = x.row(n, c);
            double* yr = y.row(n, c);
            std::uint8_t* m =
                cache ? cache->right.data() + (static_cast<std::size_t>(n) * x.c + c) * to : nullptr;
            for (int t = 0; t < to; ++t) {
                const double a = xr[2 * t], b = xr[2 * t + 1];
                // ties route to the left element
                if (b > a) {
                    yr[t] = b;
                    if (m) m[t] = 1;
                } else {
                    yr[t] = a;
                }
            }
        }
    }
    return y;
}

Tensor MaxPool2::backward(const Tensor& gout, const Cache& cache) const {
    check_shape(gout.n == cache.n && gout.c == cache.c && gout.t == cache.t_out, "pool upstream gradient");
    Tensor gin(cache.n, cache.c, cache.t_out * 2);
    for (int n = 0; n < cache.n; ++n) {
        for (int c = 0; c < cache.c; ++c) {
            const double* gr = gout.row(n, c);
            double* gi = gin.row(n, c);
            const std::uint8_t* m = cache.right.data() + (static_cast<std::size_t>(n) * cache.c + c) * cache.t_out;
            for (int t = 0; t < cache.t_out; ++t) gi[2 * t + m[t]] = gr[t];
        }
    }
    return gin;
}

// ---------------------------------------------------------------------------
// BatchNorm

void BatchNorm::init(int ch_, double momentum_, double eps_) {
    ch = ch_;
    momentum = momentum_;
    eps = eps_;
    gamma.assign(static_cast<std::size_t>(ch), 1.0);
    beta.assign(static_cast<std::size_t>(ch), 0.0);
    ggamma.assign(static_cast<std::size_t>(ch), 0.0);
    gbeta.assign(static_cast<std::size_t>(ch), 0.0);
    running_mean.assign(static_cast<std::size_t>(ch), 0.0);
    running_var.assign(static_cast<std::size_t>(ch), 1.0);
}

Tensor BatchNorm::forward_train(const Tensor& x, Cache& cache) {
    check_shape(x.c == ch, "batchnorm input");
    const double cnt = static_cast<double>(x.n) * x.t;
    Tensor y(x.n, x.c, x.t);
    cache.xhat = Tensor(x.n, x.c, x.t);
    cache.invstd.assign(static_cast<std::size_t>(ch), 0.0);
    for (int c = 0; c < ch; ++c) {
        double mean = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double* xr = x.row(n, c);
            for (int t = 0; t < x.t; ++t) mean += xr[t];
        }
        mean /= cnt;
        double var = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double* xr = x.row(n, c);
            for (int t = 0; t < x.t; ++t) var += (xr[t] - mean) * (xr[t] - mean);
        }
        var /= cnt;
        const double invstd = 1.0 / std::sqrt(var + eps);
        cache.invstd[static_cast<std::size_t>(c)] = invstd;
        const double g = gamma[static_cast<std::size_t>(c)], be = beta[static_cast<std::size_t>(c)];
        for (int n = 0; n < x.n; ++n) {
            const double* xr = x.row(n, c);
            double* xh = cache.xhat.row(n, c);
            double* yr = y.row(n, c);
            for (int t = 0; t < x.t; ++t) {
                xh[t] = (xr[t] - mean) * invstd;
                yr[t] = g * xh[t] + be;
            }
        }
        running_mean[static_cast<std::size_t>(c)] =
            (1.0 - momentum) * running_mean[static_cast<std::size_t>(c)] + momentum * mean;
        running_var[static_cast<std::size_t>(c)] =
            (1.0 - momentum) * running_var[static_cast<std::size_t>(c)] + momentum * var;
    }
    return y;
}

Tensor BatchNorm::forward_eval(const Tensor& x) const {
    check_shape(x.c == ch, "batchnorm input");
    Tensor y(x.n, x.c, x.t);
    for (int c = 0; c < ch; ++c) {
        const double invstd = 1.0 / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
        const double g = gamma[static_cast<std::size_t>(c)] * invstd;
        const double off = beta[static_cast<std::size_t>(c)] - g * running_mean[static_cast<std::size_t>(c)];
        for (int n = 0; n < x.n; ++n) {
            const double* xr = x.row(n, c);
            double* yr = y.row(n, c);
            for (int t = 0; t < x.t; ++t) yr[t] = g * xr[t] + off;
        }
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& gout, const Cache& cache) {
    const Tensor& xhat = cache.xhat;
    check_shape(gout.n == xhat.n && gout.c == xhat.c && gout.t == xhat.t, "batchnorm upstream gradient");
    const double cnt = static_cast<double>(gout.n) * gout.t;
    Tensor gin(gout.n, gout.c, gout.t);
    for (int c = 0; c < ch; ++c) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int n = 0; n < gout.n; ++n) {
            const double* gr = gout.row(n, c);
            const double* xh = xhat.row(n, c);
            for (int t = 0; t < gout.t; ++t) {
                sum_g += gr[t];
                sum_gx += gr[t] * xh[t];
            }
        }
        ggamma[static_cast<std::size_t>(c)] += sum_gx;
        gbeta[static_cast<std::size_t>(c)] += sum_g;
        const double scale = gamma[static_cast<std::size_t>(c)] * cache.invstd[static_cast<std::size_t>(c)] / cnt;
        for (int n = 0; n < gout.n; ++n) {
            const double* gr = gout.row(n, c);
            const double* xh = xhat.row(n, c);
            double* gi = gin.row(n, c);
            for (int t = 0; t < gout.t; ++t) gi[t] = scale * (cnt * gr[t] - sum_g - xh[t] * sum_gx);
        }
    }
    return gin;
}

Tensor BatchNorm::backward_input_eval(const Tensor& gout) const {
    Tensor gin(gout.n, gout.c, gout.t);
    for (int c = 0; c < ch; ++c) {
        const double scale =
            gamma[static_cast<std::size_t>(c)] / std::sqrt(running_var[static_cast<std::size_t>(c)] + eps);
        for (int n = 0; n < gout.n; ++n) {
            const double* gr = gout.row(n, c);
            double* gi = gin.row(n, c);
            for (int t = 0; t < gout.t; ++t) gi[t] = scale * gr[t];
        }
    }
    return gin;
}

void BatchNorm::collect(ParamList& out) {
    out.push_back({&gamma, &ggamma});
    out.push_back({&beta, &gbeta});
}

// ---------------------------------------------------------------------------
// Relu

Tensor Relu::forward(const Tensor& x, Cache* cache) const {
    Tensor y(x.n, x.c, x.t);
    if (cache) cache->mask.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x.v[i] > 0.0) {
            y.v[i] = x.v[i];
            if (cache) cache->mask[i] = 1;
        }
    }
    return y;
}

Tensor Relu::backward(const Tensor& gout, const Cache& cache) const {
    check_shape(gout.size() == cache.mask.size(), "relu upstream gradient");
    Tensor gin(gout.n, gout.c, gout.t);
    for (std::size_t i = 0; i < gout.size(); ++i)
        if (cache.mask[i]) gin.v[i] = gout.v[i];
    return gin;
}

// ---------------------------------------------------------------------------
// Linear

void Linear::init(int in_, int out_, Rng& rng) {
    in = in_;
    out = out_;
    w.assign(static_cast<std::size_t>(out) * in, 0.0);
    b.assign(static_cast<std::size_t>(out), 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
    fan_in_uniform(w, b, in, rng);
}

// Loops run with the output index outermost so each weight row stays hot
// across the whole batch.
Tensor Linear::forward(const Tensor& x, Cache* cache) const {
    check_shape(x.c == in && x.t == 1, "linear input");
    Tensor y = Tensor::flat(x.n, out);
    for (int o = 0; o < out; ++o) {
        const double* wr = w.data() + static_cast<std::size_t>(o) * in;
        const double bo = b[static_cast<std::size_t>(o)];
        for (int n = 0; n < x.n; ++n) y.row(n, 0)[o] = bo + dot(wr, x.row(n, 0), in);
    }
    if (cache) cache->in = x;
    return y;
}

Tensor Linear::backward(const Tensor& gout, const Cache& cache) {
    const Tensor& x = cache.in;
    check_shape(gout.c == out && gout.n == x.n, "linear upstream gradient");
    for (int o = 0; o < out; ++o) {
        double* gwr = gw.data() + static_cast<std::size_t>(o) * in;
        double gbo = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const double g = gout.row(n, 0)[o];
            axpy(gwr, g, x.row(n, 0), in);
            gbo += g;
        }
        gb[static_cast<std::size_t>(o)] += gbo;
    }
    return backward_input(gout);
}

Tensor Linear::backward_input(const Tensor& gout) const {
    Tensor gin = Tensor::flat(gout.n, in);
    for (int o = 0; o < out; ++o) {
        const double* wr = w.data() + static_cast<std::size_t>(o) * in;
        for (int n = 0; n < gout.n; ++n) axpy(gin.row(n, 0), gout.row(n, 0)[o], wr, in);
    }
    return gin;
}

void Linear::collect(ParamList& out_list) {
    out_list.push_back({&w, &gw});
    out_list.push_back({&b, &gb});
}

// ---------------------------------------------------------------------------
// GRL and losses

std::vector<double> grl_backward(std::span<const double> upstream, double lambda) {
    std::vector<double> g(upstream.size());
    for (std::size_t i = 0; i < upstream.size(); ++i) g[i] = -lambda * upstream[i];
    return g;
}

void grl_scale(Tensor& g, double lambda) {
    for (double& x : g.v) x = -lambda * x;
}

double cross_entropy(const Tensor& logits, std::span<const int> targets) {
    check_shape(logits.t == 1 && logits.n == static_cast<int>(targets.size()), "cross entropy inputs");
    double loss = 0.0;
    for (int n = 0; n < logits.n; ++n) {
        const int y = targets[static_cast<std::size_t>(n)];
        if (y < 0 || y >= logits.c)
            fail(Err::LabelOutOfRange, "target " + std::to_string(y) + " outside [0, " +
                                           std::to_string(logits.c) + ")");
        const double* l = logits.row(n, 0);
        double mx = l[0];
        for (int k = 1; k < logits.c; ++k) mx = std::max(mx, l[k]);
        double sum = 0.0;
        for (int k = 0; k < logits.c; ++k) sum += std::exp(l[k] - mx);
        loss += mx + std::log(sum) - l[y];
    }
    return loss / logits.n;
}

Tensor cross_entropy_backward(const Tensor& logits, std::span<const int> targets) {
    Tensor g = Tensor::flat(logits.n, logits.c);
    const double inv_n = 1.0 / logits.n;
    for (int n = 0; n < logits.n; ++n) {
        const double* l = logits.row(n, 0);
        double* gr = g.row(n, 0);
        double mx = l[0];
        for (int k = 1; k < logits.c; ++k) mx = std::max(mx, l[k]);
        double sum = 0.0;
        for (int k = 0; k < logits.c; ++k) {
            gr[k] = std::exp(l[k] - mx);
            sum += gr[k];
        }
        for (int k = 0; k < logits.c; ++k) gr[k] *= inv_n / sum;
        gr[targets[static_cast<std::size_t>(n)]] -= inv_n;
    }
    return g;
}

std::vector<double> softmax_t(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) fail(Err::InvalidConfig, "softmax temperature must be > 0");
    std::vector<double> p(logits.size());
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        sum += p[i];
    }
    for (double& x : p) x /= sum;
    return p;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(ParamList params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamTensor& pt : params_) {
        m_.emplace_back(pt.p->size(), 0.0);
        v_.emplace_back(pt.p->size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        std::vector<double>& p = *params_[i].p;
        const std::vector<double>& g = *params_[i].g;
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            double gj = g[j];
            if (!std::isfinite(gj)) fail(Err::NonFiniteGradient, "gradient is not finite");
            if (cfg_.weight_decay != 0.0 && !cfg_.decoupled_wd) gj += cfg_.weight_decay * p[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            if (cfg_.weight_decay != 0.0 && cfg_.decoupled_wd) upd += cfg_.lr * cfg_.weight_decay * p[j];
            p[j] -= upd;
        }
    }
}

}  // namespace divts::nn
