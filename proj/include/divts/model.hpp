#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "divts/nn.hpp"
#include "divts/tensor.hpp"

namespace divts::model {

struct ModelConfig {
    int channels = 0;
    int window = 0;
    int classes = 0;         // C, ID classes
    int latent_domains = 1;  // K
    int conv1_ch = 16;
    int conv2_ch = 32;
    int kernel = 9;
    int bottleneck_dim = 256;
    int adv_hidden = 256;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    int joint_labels() const { return latent_domains * classes; }  // S = K*C
    int feat_channels() const { return conv2_ch; }
    int feat_len() const;   // time steps surviving both conv/pool blocks
    int flat_dim() const { return conv2_ch * feat_len(); }
    void validate() const;  // throws InvalidConfig when a block would collapse
};

// Two blocks of convolution -> max-pool (1,2)/2 -> batch norm -> rectifier.
struct FeatureExtractor {
    nn::Conv1d conv1, conv2;
    nn::MaxPool2 pool1, pool2;
    nn::BatchNorm bn1, bn2;
    nn::Relu relu1, relu2;

    struct Cache {
        nn::Conv1d::Cache c1, c2;
        nn::MaxPool2::Cache p1, p2;
        nn::BatchNorm::Cache b1, b2;
        nn::Relu::Cache r1, r2;
        int in_len = 0, mid_len = 0;
    };

    void init(const ModelConfig& cfg, Rng& rng);
    Tensor forward_train(const Tensor& x, Cache& cache);
    Tensor forward_eval_cached(const Tensor& x, Cache& cache) const;  // for input gradients
    Tensor infer(const Tensor& x) const;
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input_eval(const Tensor& gout, const Cache& cache) const;
    void collect(nn::ParamList& out);
};

// Affine map from flattened features to the shared embedding dimension.
struct Bottleneck {
    nn::Linear lin;

    struct Cache {
        nn::Linear::Cache l;
        int feat_c = 0, feat_t = 0;
    };

    void init(int flat_dim, int out_dim, Rng& rng);
    Tensor forward(const Tensor& feat, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input(const Tensor& gout, const Cache& cache) const;
    void collect(nn::ParamList& out) { lin.collect(out); }
};

// Adversary head: two hidden affine layers with rectifier, then the
// classification layer.
struct MlpHead {
    nn::Linear l1, l2, l3;
    nn::Relu r1, r2;

    struct Cache {
        nn::Linear::Cache c1, c2, c3;
        nn::Relu::Cache m1, m2;
    };

    void init(int in, int hidden, int out, Rng& rng);
    Tensor forward(const Tensor& emb, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input(const Tensor& gout, const Cache& cache) const;
    void collect(nn::ParamList& out);
};

struct Group {
    Bottleneck bottleneck;
    nn::Linear head;
    bool has_adv = false;
    MlpHead adv;

    void collect(nn::ParamList& out);
};

// Shared feature extractor plus three per-purpose parameter groups:
//   g_joint  - head over the K*C joint domain-class labels
//   g_latent - domain head (K) with a class adversary (C)
//   g_task   - class head (C) with a domain adversary (K); used for inference
struct DiversifyModel {
    ModelConfig cfg;
    FeatureExtractor fx;
    Group g_joint, g_latent, g_task;

    static DiversifyModel make(const ModelConfig& cfg, std::uint64_t seed);

    // Pure eval-mode passes (running batch-norm stats, no caches).
    Tensor infer_features(const Tensor& x) const { return fx.infer(x); }
    Tensor infer_embedding(const Tensor& x, const Group& g) const;
    Tensor infer_head(const Tensor& x, const Group& g) const;
    void infer_embedding_and_head(const Tensor& x, const Group& g, Tensor* emb, Tensor* logits) const;

    nn::ParamList featurizer_params();
    nn::ParamList group_params(Group& g);

    void save(const std::filesystem::path& file) const;
    static DiversifyModel load(const std::filesystem::path& file);
};

// Embed a span of dataset instances as a [n, channels, window] batch.
Tensor make_batch(const std::vector<const float*>& rows, int channels, int window);

}  // namespace divts::model
