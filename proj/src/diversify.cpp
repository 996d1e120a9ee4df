#include "divts/diversify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "divts/nn.hpp"
#include "divts/rng.hpp"

namespace divts::diversify {

void Schedule::validate() const {
    if (rounds < 1 || e_feature < 0 || e_latent < 0 || e_task < 0 || batch < 1)
        fail(Err::InvalidConfig, "schedule fields out of range");
    if (rounds * epochs_per_round() > budget)
        fail(Err::InvalidConfig, "schedule exceeds the total-epoch budget of " + std::to_string(budget));
}

int domain_class_label(int d, int y, int classes) {
    if (y < 1 || y > classes)
        fail(Err::LabelOutOfRange, "class label " + std::to_string(y) + " outside 1.." + std::to_string(classes));
    if (d < 0) fail(Err::LabelOutOfRange, "domain index must be >= 0");
    return d * classes + y;
}

std::pair<int, int> split_domain_class_label(int s, int classes) {
    if (s < 1) fail(Err::LabelOutOfRange, "joint label must be >= 1");
    return {(s - 1) / classes, (s - 1) % classes + 1};
}

// ---------------------------------------------------------------------------
// Latent clustering primitives

Mat l2_normalize_rows(const Mat& m) {
    Mat out = m;
    for (int i = 0; i < m.rows; ++i) {
        double* r = out.row(i);
        double norm = std::sqrt(dot(r, r, m.cols));
        if (norm > 0.0)
            for (int j = 0; j < m.cols; ++j) r[j] /= norm;
    }
    return out;
}

Mat soft_centroids(const Mat& emb, const Mat& weights, std::vector<int>* degenerate) {
    check_shape(emb.rows == weights.rows && emb.rows > 0, "soft_centroids inputs");
    const int k = weights.cols, b = emb.cols;
    Mat mu(k, b);
    for (int j = 0; j < k; ++j) {
        double mass = 0.0;
        double* mj = mu.row(j);
        for (int i = 0; i < emb.rows; ++i) {
            const double w = weights.row(i)[j];
            mass += w;
            axpy(mj, w, emb.row(i), b);
        }
        if (mass < 1e-12) {
            if (!degenerate) fail(Err::DegenerateWeights, "domain " + std::to_string(j) + " has no weight mass");
            degenerate->push_back(j);
            std::fill(mj, mj + b, 0.0);
        } else {
            for (int c = 0; c < b; ++c) mj[c] /= mass;
        }
    }
    return mu;
}

std::vector<int> assign_nearest(const Mat& emb, const Mat& centroids) {
    check_shape(emb.cols == centroids.cols && centroids.rows > 0, "assign_nearest inputs");
    std::vector<int> out(static_cast<std::size_t>(emb.rows));
    for (int i = 0; i < emb.rows; ++i) {
        const double* e = emb.row(i);
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int j = 0; j < centroids.rows; ++j) {
            const double* mj = centroids.row(j);
            double d = 0.0;
            for (int c = 0; c < emb.cols; ++c) {
                const double diff = e[c] - mj[c];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

namespace {

// Re-seed each listed domain to the embedding farthest from its nearest
// surviving centroid.
int reseed_domains(Mat& centroids, const Mat& emb, std::vector<int> bad, std::vector<bool> valid) {
    int reseeded = 0;
    for (int j : bad) {
        int far_i = 0;
        double far_d = -1.0;
        for (int i = 0; i < emb.rows; ++i) {
            double near_d = std::numeric_limits<double>::infinity();
            for (int q = 0; q < centroids.rows; ++q) {
                if (!valid[static_cast<std::size_t>(q)]) continue;
                const double* mq = centroids.row(q);
                const double* e = emb.row(i);
                double d = 0.0;
                for (int c = 0; c < emb.cols; ++c) {
                    const double diff = e[c] - mq[c];
                    d += diff * diff;
                }
                near_d = std::min(near_d, d);
            }
            if (near_d > far_d) {
                far_d = near_d;
                far_i = i;
            }
        }
        std::copy(emb.row(far_i), emb.row(far_i) + emb.cols, centroids.row(j));
        valid[static_cast<std::size_t>(j)] = true;
        ++reseeded;
    }
    return reseeded;
}

}  // namespace

HardUpdateResult update_centroids_hard(const Mat& emb, const std::vector<int>& assign, int k) {
    check_shape(static_cast<int>(assign.size()) == emb.rows && emb.rows > 0, "update_centroids_hard inputs");
    HardUpdateResult out;
    out.centroids = Mat(k, emb.cols);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < emb.rows; ++i) {
        const int j = assign[static_cast<std::size_t>(i)];
        check_shape(j >= 0 && j < k, "assignment out of range");
        ++counts[static_cast<std::size_t>(j)];
        axpy(out.centroids.row(j), 1.0, emb.row(i), emb.cols);
    }
    std::vector<int> empty;
    std::vector<bool> valid(static_cast<std::size_t>(k), true);
    for (int j = 0; j < k; ++j) {
        if (counts[static_cast<std::size_t>(j)] == 0) {
            empty.push_back(j);
            valid[static_cast<std::size_t>(j)] = false;
            continue;
        }
        double* mj = out.centroids.row(j);
        for (int c = 0; c < emb.cols; ++c) mj[c] /= counts[static_cast<std::size_t>(j)];
    }
    out.reseeded = reseed_domains(out.centroids, emb, empty, valid);
    out.assignments = assign_nearest(emb, out.centroids);
    return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

using model::DiversifyModel;

std::vector<int> class_targets(const data::Dataset& ds, std::span<const int> idx) {
    std::vector<int> t(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        t[i] = ds.instances[static_cast<std::size_t>(idx[i])].y - 1;
    return t;
}

Tensor gather_batch(const data::Dataset& ds, std::span<const int> idx) {
    std::vector<const float*> rows(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
        rows[i] = ds.instances[static_cast<std::size_t>(idx[i])].x.data();
    return model::make_batch(rows, ds.channels, ds.window);
}

void check_loss(double loss, const char* stage, int round, int epoch) {
    if (!std::isfinite(loss))
        fail(Err::NonFiniteLoss, std::string(stage) + " loss is not finite at round " +
                                     std::to_string(round) + " epoch " + std::to_string(epoch));
}

struct Trainer {
    DiversifyModel& m;
    const data::Dataset& train;
    const data::Dataset& val;
    const TrainConfig& cfg;
    const StepObserver& observer;

    Rng batch_rng;
    nn::Adam opt_feature, opt_latent, opt_task;
    std::vector<int> assignments;  // pseudo-domain per training instance

    Trainer(DiversifyModel& m_, const data::Dataset& train_, const data::Dataset& val_,
            const TrainConfig& cfg_, const StepObserver& observer_)
        : m(m_),
          train(train_),
          val(val_),
          cfg(cfg_),
          observer(observer_),
          batch_rng(cfg_.seed, "batch"),
          opt_feature(feature_update_params(), adam_cfg()),
          opt_latent(adversarial_params(m_.g_latent), adam_cfg()),
          opt_task(adversarial_params(m_.g_task), adam_cfg()),
          assignments(train_.size(), 0) {}

    nn::AdamConfig adam_cfg() const {
        return {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay, cfg.decoupled_wd};
    }

    nn::ParamList feature_update_params() {
        nn::ParamList p = m.featurizer_params();
        m.g_joint.collect(p);
        return p;
    }

    nn::ParamList adversarial_params(model::Group& g) {
        nn::ParamList p;
        if (!cfg.freeze_featurizer) m.fx.collect(p);
        g.collect(p);
        return p;
    }

    std::vector<int> shuffled_indices() {
        std::vector<int> idx(train.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        batch_rng.shuffle(idx);
        return idx;
    }

    template <typename StepFn>
    double run_epoch(StepFn&& step) {
        const std::vector<int> order = shuffled_indices();
        const int n = static_cast<int>(order.size());
        double total = 0.0;
        for (int start = 0; start < n; start += cfg.sched.batch) {
            const int len = std::min(cfg.sched.batch, n - start);
            std::span<const int> idx(order.data() + start, static_cast<std::size_t>(len));
            total += step(idx) * len;
            if (observer) observer(m);
        }
        return total / n;
    }

    // Supervised update of the feature extractor against joint domain-class labels.
    double feature_step(std::span<const int> idx) {
        Tensor x = gather_batch(train, idx);
        std::vector<int> s(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const data::Instance& ins = train.instances[static_cast<std::size_t>(idx[i])];
            s[i] = domain_class_label(assignments[static_cast<std::size_t>(idx[i])], ins.y,
                                      m.cfg.classes) -
                   1;
        }
        model::FeatureExtractor::Cache fc;
        model::Bottleneck::Cache bc;
        nn::Linear::Cache hc;
        Tensor feat = m.fx.forward_train(x, fc);
        Tensor emb = m.g_joint.bottleneck.forward(feat, &bc);
        Tensor logits = m.g_joint.head.forward(emb, &hc);
        const double loss = nn::cross_entropy(logits, s);

        opt_feature.zero_grad();
        Tensor g = nn::cross_entropy_backward(logits, s);
        g = m.g_joint.head.backward(g, hc);
        g = m.g_joint.bottleneck.backward(g, bc);
        m.fx.backward(g, fc);
        opt_feature.step();
        return loss;
    }

    // Domain classification with a gradient-reversed class adversary: the
    // embedding is pushed to separate pseudo-domains while shedding class
    // information.
    std::pair<double, double> latent_step(std::span<const int> idx) {
        Tensor x = gather_batch(train, idx);
        std::vector<int> d(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            d[i] = assignments[static_cast<std::size_t>(idx[i])];
        const std::vector<int> y = class_targets(train, idx);
        return adversarial_step(m.g_latent, opt_latent, x, d, y, cfg.lambda1);
    }

    // Class learning with a gradient-reversed domain adversary: invariant
    // representation across the discovered pseudo-domains.
    std::pair<double, double> task_step(std::span<const int> idx) {
        Tensor x = gather_batch(train, idx);
        const std::vector<int> y = class_targets(train, idx);
        std::vector<int> d(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            d[i] = assignments[static_cast<std::size_t>(idx[i])];
        return adversarial_step(m.g_task, opt_task, x, y, d, cfg.lambda2);
    }

    std::pair<double, double> adversarial_step(model::Group& g, nn::Adam& opt, const Tensor& x,
                                               std::span<const int> head_targets,
                                               std::span<const int> adv_targets, double lambda) {
        model::FeatureExtractor::Cache fc;
        model::Bottleneck::Cache bc;
        nn::Linear::Cache hc;
        model::MlpHead::Cache ac;
        Tensor feat = cfg.freeze_featurizer ? m.fx.infer(x) : m.fx.forward_train(x, fc);
        Tensor emb = g.bottleneck.forward(feat, &bc);
        Tensor head_logits = g.head.forward(emb, &hc);
        Tensor adv_logits = g.adv.forward(emb, &ac);
        const double head_loss = nn::cross_entropy(head_logits, head_targets);
        const double adv_loss = nn::cross_entropy(adv_logits, adv_targets);

        opt.zero_grad();
        Tensor g_emb = g.head.backward(nn::cross_entropy_backward(head_logits, head_targets), hc);
        Tensor g_adv = g.adv.backward(nn::cross_entropy_backward(adv_logits, adv_targets), ac);
        nn::grl_scale(g_adv, lambda);
        for (std::size_t i = 0; i < g_emb.size(); ++i) g_emb.v[i] += g_adv.v[i];
        Tensor g_feat = g.bottleneck.backward(g_emb, bc);
        if (!cfg.freeze_featurizer) m.fx.backward(g_feat, fc);
        opt.step();
        return {head_loss, adv_loss};
    }

    // ERM-style update: class cross-entropy through the task group only.
    double plain_step(std::span<const int> idx) {
        Tensor x = gather_batch(train, idx);
        const std::vector<int> y = class_targets(train, idx);
        model::FeatureExtractor::Cache fc;
        model::Bottleneck::Cache bc;
        nn::Linear::Cache hc;
        Tensor feat = m.fx.forward_train(x, fc);
        Tensor emb = m.g_task.bottleneck.forward(feat, &bc);
        Tensor logits = m.g_task.head.forward(emb, &hc);
        const double loss = nn::cross_entropy(logits, y);

        opt_task.zero_grad();
        Tensor g = nn::cross_entropy_backward(logits, y);
        g = m.g_task.head.backward(g, hc);
        g = m.g_task.bottleneck.backward(g, bc);
        m.fx.backward(g, fc);
        opt_task.step();
        return loss;
    }

    // Full-set eval-mode pass realising the soft-init / nearest / hard-update
    // label refresh on L2-normalized latent-group embeddings.
    void recompute_assignments() {
        const int n = static_cast<int>(train.size());
        const int b = m.cfg.bottleneck_dim;
        const int k = cfg.latent_domains;
        Mat emb(n, b), delta(n, k);
        const int chunk = 256;
        for (int start = 0; start < n; start += chunk) {
            const int len = std::min(chunk, n - start);
            std::vector<int> idx(static_cast<std::size_t>(len));
            for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = start + i;
            Tensor x = gather_batch(train, idx);
            Tensor e, logits;
            m.infer_embedding_and_head(x, m.g_latent, &e, &logits);
            for (int i = 0; i < len; ++i) {
                std::copy(e.row(i, 0), e.row(i, 0) + b, emb.row(start + i));
                std::vector<double> p =
                    nn::softmax_t(std::span<const double>(logits.row(i, 0), static_cast<std::size_t>(k)), 1.0);
                std::copy(p.begin(), p.end(), delta.row(start + i));
            }
        }
        Mat emb_n = l2_normalize_rows(emb);
        std::vector<int> degenerate;
        Mat mu = soft_centroids(emb_n, delta, &degenerate);
        if (!degenerate.empty()) {
            std::vector<bool> valid(static_cast<std::size_t>(k), true);
            for (int j : degenerate) valid[static_cast<std::size_t>(j)] = false;
            reseed_domains(mu, emb_n, degenerate, valid);
        }
        const std::vector<int> d_tilde = assign_nearest(emb_n, mu);
        HardUpdateResult hard = update_centroids_hard(emb_n, d_tilde, k);
        assignments = std::move(hard.assignments);
    }

    std::vector<int> cluster_sizes() const {
        std::vector<int> sizes(static_cast<std::size_t>(cfg.latent_domains), 0);
        for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
        return sizes;
    }
};

TrainResult run_training(const data::Dataset& train, const data::Dataset& val,
                         const model::ModelConfig& mcfg, const TrainConfig& tcfg, const RoundSink& sink,
                         const StepObserver& observer, const std::string& algorithm) {
    tcfg.sched.validate();
    model::ModelConfig mc = mcfg;
    mc.latent_domains = tcfg.latent_domains;
    DiversifyModel m = DiversifyModel::make(mc, tcfg.seed);
    Trainer tr(m, train, val, tcfg, observer);
    Rng dann_rng(tcfg.seed, "dann.domains");

    TrainResult result;
    result.best = m;

    const int rounds = tcfg.sched.rounds;
    for (int r = 1; r <= rounds; ++r) {
        RoundRecord rec;
        rec.round = r;
        if (algorithm == "diversify") {
            for (int e = 0; e < tcfg.sched.e_feature; ++e) {
                const double l = tr.run_epoch([&](std::span<const int> idx) { return tr.feature_step(idx); });
                check_loss(l, "feature", r, e + 1);
                rec.loss_feature += l;
            }
            if (tcfg.sched.e_feature > 0) rec.loss_feature /= tcfg.sched.e_feature;

            tr.recompute_assignments();
            rec.assignments = tr.assignments;
            rec.cluster_sizes = tr.cluster_sizes();

            for (int e = 0; e < tcfg.sched.e_latent; ++e) {
                double dl = 0.0, al = 0.0;
                const double sum = tr.run_epoch([&](std::span<const int> idx) {
                    auto [d, a] = tr.latent_step(idx);
                    dl += d * idx.size();
                    al += a * idx.size();
                    return d + a;
                });
                check_loss(sum, "latent", r, e + 1);
                rec.loss_latent_domain += dl / train.size();
                rec.loss_latent_adv += al / train.size();
            }
            if (tcfg.sched.e_latent > 0) {
                rec.loss_latent_domain /= tcfg.sched.e_latent;
                rec.loss_latent_adv /= tcfg.sched.e_latent;
            }

            for (int e = 0; e < tcfg.sched.e_task; ++e) {
                double cl = 0.0, al = 0.0;
                const double sum = tr.run_epoch([&](std::span<const int> idx) {
                    auto [c, a] = tr.task_step(idx);
                    cl += c * idx.size();
                    al += a * idx.size();
                    return c + a;
                });
                check_loss(sum, "task", r, e + 1);
                rec.loss_task_class += cl / train.size();
                rec.loss_task_adv += al / train.size();
            }
            if (tcfg.sched.e_task > 0) {
                rec.loss_task_class /= tcfg.sched.e_task;
                rec.loss_task_adv /= tcfg.sched.e_task;
            }
        } else {
            // Baselines run the same total epoch budget per round.
            const int epochs = tcfg.sched.epochs_per_round();
            for (int e = 0; e < epochs; ++e) {
                double cl = 0.0, al = 0.0;
                double sum;
                if (algorithm == "erm") {
                    sum = tr.run_epoch([&](std::span<const int> idx) {
                        const double c = tr.plain_step(idx);
                        cl += c * idx.size();
                        return c;
                    });
                } else {  // dann
                    sum = tr.run_epoch([&](std::span<const int> idx) {
                        Tensor x = gather_batch(train, idx);
                        const std::vector<int> y = class_targets(train, idx);
                        std::vector<int> d(idx.size());
                        for (std::size_t i = 0; i < idx.size(); ++i)
                            d[i] = static_cast<int>(
                                dann_rng.uniform_int(static_cast<std::uint64_t>(tcfg.latent_domains)));
                        auto [c, a] = tr.adversarial_step(tr.m.g_task, tr.opt_task, x, y, d, tcfg.lambda2);
                        cl += c * idx.size();
                        al += a * idx.size();
                        return c + a;
                    });
                }
                check_loss(sum, algorithm.c_str(), r, e + 1);
                rec.loss_task_class += cl / train.size();
                rec.loss_task_adv += al / train.size();
            }
            rec.loss_task_class /= epochs;
            rec.loss_task_adv /= epochs;
        }

        rec.val_acc = id_accuracy(m, val);
        if (result.history.empty() || rec.val_acc > result.best_val_acc) {
            result.best = m;
            result.best_val_acc = rec.val_acc;
            result.best_round = r;
        }
        result.history.push_back(rec);
        if (sink) sink(result.history.back());
    }
    result.final_assignments = tr.assignments;
    return result;
}

}  // namespace

TrainResult train_diversify(const data::Dataset& train, const data::Dataset& val,
                            const model::ModelConfig& mcfg, const TrainConfig& tcfg,
                            const RoundSink& sink, const StepObserver& observer) {
    return run_training(train, val, mcfg, tcfg, sink, observer, "diversify");
}

TrainResult train_erm(const data::Dataset& train, const data::Dataset& val,
                      const model::ModelConfig& mcfg, const TrainConfig& tcfg, const RoundSink& sink,
                      const StepObserver& observer) {
    return run_training(train, val, mcfg, tcfg, sink, observer, "erm");
}

TrainResult train_dann(const data::Dataset& train, const data::Dataset& val,
                       const model::ModelConfig& mcfg, const TrainConfig& tcfg, const RoundSink& sink,
                       const StepObserver& observer) {
    return run_training(train, val, mcfg, tcfg, sink, observer, "dann");
}

Prediction predict(const model::DiversifyModel& m, const float* x) {
    Tensor batch = model::make_batch({x}, m.cfg.channels, m.cfg.window);
    Tensor logits = m.infer_head(batch, m.g_task);
    Prediction out;
    out.probs = nn::softmax_t(std::span<const double>(logits.row(0, 0), static_cast<std::size_t>(logits.c)), 1.0);
    out.label = 1 + static_cast<int>(std::max_element(out.probs.begin(), out.probs.end()) - out.probs.begin());
    return out;
}

std::vector<int> predict_batch(const model::DiversifyModel& m, const data::Dataset& ds) {
    const int n = static_cast<int>(ds.size());
    std::vector<int> preds(static_cast<std::size_t>(n));
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        const int len = std::min(chunk, n - start);
        std::vector<int> idx(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        Tensor logits = m.infer_head(gather_batch(ds, idx), m.g_task);
        for (int i = 0; i < len; ++i) {
            const double* l = logits.row(i, 0);
            preds[static_cast<std::size_t>(start + i)] =
                1 + static_cast<int>(std::max_element(l, l + logits.c) - l);
        }
    }
    return preds;
}

double id_accuracy(const model::DiversifyModel& m, const data::Dataset& ds) {
    const std::vector<int> preds = predict_batch(m, ds);
    long correct = 0, total = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.is_ood(ds.instances[i])) continue;
        ++total;
        if (preds[i] == ds.instances[i].y) ++correct;
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

Mat embed_dataset(const model::DiversifyModel& m, const data::Dataset& ds) {
    const int n = static_cast<int>(ds.size());
    const int b = m.cfg.bottleneck_dim;
    Mat emb(n, b);
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        const int len = std::min(chunk, n - start);
        std::vector<int> idx(static_cast<std::size_t>(len));
        for (int i = 0; i < len; ++i) idx[static_cast<std::size_t>(i)] = start + i;
        Tensor e = m.infer_embedding(gather_batch(ds, idx), m.g_task);
        for (int i = 0; i < len; ++i) std::copy(e.row(i, 0), e.row(i, 0) + b, emb.row(start + i));
    }
    return emb;
}

}  // namespace divts::diversify
