#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "divts/rng.hpp"
#include "divts/tensor.hpp"

namespace divts::nn {

// Parameter registry: optimizers iterate (value, gradient) pairs collected
// from the layers they own. Pointers stay valid for the life of the model.
struct ParamTensor {
    std::vector<double>* p;
    std::vector<double>* g;
};
using ParamList = std::vector<ParamTensor>;

void zero_grads(const ParamList& params);

// 2-D convolution over inputs of height 1, i.e. a 1-D convolution along the
// time axis with valid padding and stride 1.
struct Conv1d {
    int in_ch = 0, out_ch = 0, k = 0;
    std::vector<double> w, gw;  // [out_ch][in_ch][k]
    std::vector<double> b, gb;  // [out_ch]

    struct Cache {
        Tensor in;
    };

    void init(int in_ch_, int out_ch_, int k_, Rng& rng);
    int out_len(int in_len) const { return in_len - k + 1; }

    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input(const Tensor& gout, int in_len) const;
    void collect(ParamList& out);
};

// Max pool with kernel (1,2) and stride 2; odd trailing elements are dropped.
struct MaxPool2 {
    struct Cache {
        std::vector<std::uint8_t> right;  // 1 if the right element won
        int n = 0, c = 0, t_out = 0;
    };

    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache) const;
};

struct BatchNorm {
    int ch = 0;
    double momentum = 0.1;
    double eps = 1e-5;
    std::vector<double> gamma, ggamma, beta, gbeta;
    std::vector<double> running_mean, running_var;

    struct Cache {
        Tensor xhat;
        std::vector<double> invstd;
    };

    void init(int ch_, double momentum_ = 0.1, double eps_ = 1e-5);
    Tensor forward_train(const Tensor& x, Cache& cache);  // batch stats, updates running stats
    Tensor forward_eval(const Tensor& x) const;           // running stats, pure
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input_eval(const Tensor& gout) const;
    void collect(ParamList& out);
};

struct Relu {
    struct Cache {
        std::vector<std::uint8_t> mask;
    };

    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache) const;
};

struct Linear {
    int in = 0, out = 0;
    std::vector<double> w, gw;  // [out][in]
    std::vector<double> b, gb;  // [out]

    struct Cache {
        Tensor in;
    };

    void init(int in_, int out_, Rng& rng);
    Tensor forward(const Tensor& x, Cache* cache) const;
    Tensor backward(const Tensor& gout, const Cache& cache);
    Tensor backward_input(const Tensor& gout) const;
    void collect(ParamList& out);
};

// Gradient-reversal contract: forward is identity, backward multiplies the
// upstream gradient by -lambda.
std::vector<double> grl_backward(std::span<const double> upstream, double lambda);
void grl_scale(Tensor& g, double lambda);

// Mean over the batch of -log softmax(logits)[target]; targets are 0-based.
double cross_entropy(const Tensor& logits, std::span<const int> targets);
// d(mean cross entropy)/d(logits) = (softmax - onehot) / batch.
Tensor cross_entropy_backward(const Tensor& logits, std::span<const int> targets);

// Temperature softmax, stabilized by max subtraction; T=1 is the standard softmax.
std::vector<double> softmax_t(std::span<const double> logits, double temperature);

struct AdamConfig {
    double lr = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
    bool decoupled_wd = false;  // default couples decay into the gradient
};

class Adam {
public:
    Adam(ParamList params, const AdamConfig& cfg);

    void zero_grad() { zero_grads(params_); }
    void step();  // one adaptive-moment update; rejects non-finite gradients
    long step_count() const { return step_count_; }

private:
    ParamList params_;
    AdamConfig cfg_;
    long step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace divts::nn
