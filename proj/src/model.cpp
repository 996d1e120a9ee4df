#include "divts/model.hpp"

#include <cstring>
#include <fstream>

#include "divts/error.hpp"

namespace divts::model {

int ModelConfig::feat_len() const {
    const int l1 = window - kernel + 1;
    const int p1 = l1 / 2;
    const int l2 = p1 - kernel + 1;
    return l2 / 2;
}

void ModelConfig::validate() const {
    if (channels < 1 || window < 1) fail(Err::InvalidConfig, "model needs positive input dims");
    if (classes < 2) fail(Err::InvalidConfig, "model needs at least 2 classes");
    if (latent_domains < 1 || latent_domains > 10)
        fail(Err::InvalidConfig, "latent domain count must be in [1, 10]");
    if (conv1_ch < 1 || conv2_ch < 1 || kernel < 1 || bottleneck_dim < 1 || adv_hidden < 1)
        fail(Err::InvalidConfig, "model dimensions must be positive");
    if (feat_len() < 1)
        fail(Err::InvalidConfig, "window " + std::to_string(window) + " too short for kernel " +
                                     std::to_string(kernel) + " across two blocks");
}

// ---------------------------------------------------------------------------
// FeatureExtractor

void FeatureExtractor::init(const ModelConfig& cfg, Rng& rng) {
    conv1.init(cfg.channels, cfg.conv1_ch, cfg.kernel, rng);
    bn1.init(cfg.conv1_ch, cfg.bn_momentum, cfg.bn_eps);
    conv2.init(cfg.conv1_ch, cfg.conv2_ch, cfg.kernel, rng);
    bn2.init(cfg.conv2_ch, cfg.bn_momentum, cfg.bn_eps);
}

Tensor FeatureExtractor::forward_train(const Tensor& x, Cache& cache) {
    cache.in_len = x.t;
    Tensor h = conv1.forward(x, &cache.c1);
    h = pool1.forward(h, &cache.p1);
    h = bn1.forward_train(h, cache.b1);
    h = relu1.forward(h, &cache.r1);
    cache.mid_len = h.t;
    h = conv2.forward(h, &cache.c2);
    h = pool2.forward(h, &cache.p2);
    h = bn2.forward_train(h, cache.b2);
    return relu2.forward(h, &cache.r2);
}

Tensor FeatureExtractor::forward_eval_cached(const Tensor& x, Cache& cache) const {
    cache.in_len = x.t;
    Tensor h = conv1.forward(x, nullptr);
    h = pool1.forward(h, &cache.p1);
    h = bn1.forward_eval(h);
    h = relu1.forward(h, &cache.r1);
    cache.mid_len = h.t;
    h = conv2.forward(h, nullptr);
    h = pool2.forward(h, &cache.p2);
    h = bn2.forward_eval(h);
    return relu2.forward(h, &cache.r2);
}

Tensor FeatureExtractor::infer(const Tensor& x) const {
    Tensor h = conv1.forward(x, nullptr);
    h = pool1.forward(h, nullptr);
    h = bn1.forward_eval(h);
    h = relu1.forward(h, nullptr);
    h = conv2.forward(h, nullptr);
    h = pool2.forward(h, nullptr);
    h = bn2.forward_eval(h);
    return relu2.forward(h, nullptr);
}

Tensor FeatureExtractor::backward(const Tensor& gout, const Cache& cache) {
    Tensor g = relu2.backward(gout, cache.r2);
    g = bn2.backward(g, cache.b2);
    g = pool2.backward(g, cache.p2);
    g = conv2.backward(g, cache.c2);
    g = relu1.backward(g, cache.r1);
    g = bn1.backward(g, cache.b1);
    g = pool1.backward(g, cache.p1);
    return conv1.backward(g, cache.c1);
}

Tensor FeatureExtractor::backward_input_eval(const Tensor& gout, const Cache& cache) const {
    Tensor g = relu2.backward(gout, cache.r2);
    g = bn2.backward_input_eval(g);
    g = pool2.backward(g, cache.p2);
    g = conv2.backward_input(g, cache.mid_len);
    g = relu1.backward(g, cache.r1);
    g = bn1.backward_input_eval(g);
    g = pool1.backward(g, cache.p1);
    return conv1.backward_input(g, cache.in_len);
}

void FeatureExtractor::collect(nn::ParamList& out) {
    conv1.collect(out);
    bn1.collect(out);
    conv2.collect(out);
    bn2.collect(out);
}

// ---------------------------------------------------------------------------
// Bottleneck

void Bottleneck::init(int flat_dim, int out_dim, Rng& rng) { lin.init(flat_dim, out_dim, rng); }

Tensor Bottleneck::forward(const Tensor& feat, Cache* cache) const {
    Tensor flat = feat;
    if (cache) {
        cache->feat_c = feat.c;
        cache->feat_t = feat.t;
    }
    flat.reshape_flat();
    return lin.forward(flat, cache ? &cache->l : nullptr);
}

Tensor Bottleneck::backward(const Tensor& gout, const Cache& cache) {
    Tensor g = lin.backward(gout, cache.l);
    g.c = cache.feat_c;
    g.t = cache.feat_t;
    return g;
}

Tensor Bottleneck::backward_input(const Tensor& gout, const Cache& cache) const {
    Tensor g = lin.backward_input(gout);
    g.c = cache.feat_c;
    g.t = cache.feat_t;
    return g;
}

// ---------------------------------------------------------------------------
// MlpHead

void MlpHead::init(int in, int hidden, int out, Rng& rng) {
    l1.init(in, hidden, rng);
    l2.init(hidden, hidden, rng);
    l3.init(hidden, out, rng);
}

Tensor MlpHead::forward(const Tensor& emb, Cache* cache) const {
    Tensor h = l1.forward(emb, cache ? &cache->c1 : nullptr);
    h = r1.forward(h, cache ? &cache->m1 : nullptr);
    h = l2.forward(h, cache ? &cache->c2 : nullptr);
    h = r2.forward(h, cache ? &cache->m2 : nullptr);
    return l3.forward(h, cache ? &cache->c3 : nullptr);
}

Tensor MlpHead::backward(const Tensor& gout, const Cache& cache) {
    Tensor g = l3.backward(gout, cache.c3);
    g = r2.backward(g, cache.m2);
    g = l2.backward(g, cache.c2);
    g = r1.backward(g, cache.m1);
    return l1.backward(g, cache.c1);
}

Tensor MlpHead::backward_input(const Tensor& gout, const Cache& cache) const {
    Tensor g = l3.backward_input(gout);
    g = r2.backward(g, cache.m2);
    g = l2.backward_input(g);
    g = r1.backward(g, cache.m1);
    return l1.backward_input(g);
}

void MlpHead::collect(nn::ParamList& out) {
    l1.collect(out);
    l2.collect(out);
    l3.collect(out);
}

void Group::collect(nn::ParamList& out) {
    bottleneck.collect(out);
    head.collect(out);
    if (has_adv) adv.collect(out);
}

// ---------------------------------------------------------------------------
// DiversifyModel

DiversifyModel DiversifyModel::make(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DiversifyModel m;
    m.cfg = cfg;
    {
        Rng rng(seed, "init.fx");
        m.fx.init(cfg, rng);
    }
    {
        Rng rng(seed, "init.joint");
        m.g_joint.bottleneck.init(cfg.flat_dim(), cfg.bottleneck_dim, rng);
        m.g_joint.head.init(cfg.bottleneck_dim, cfg.joint_labels(), rng);
    }
    {
        Rng rng(seed, "init.latent");
        m.g_latent.bottleneck.init(cfg.flat_dim(), cfg.bottleneck_dim, rng);
        m.g_latent.head.init(cfg.bottleneck_dim, cfg.latent_domains, rng);
        m.g_latent.has_adv = true;
        m.g_latent.adv.init(cfg.bottleneck_dim, cfg.adv_hidden, cfg.classes, rng);
    }
    {
        Rng rng(seed, "init.task");
        m.g_task.bottleneck.init(cfg.flat_dim(), cfg.bottleneck_dim, rng);
        m.g_task.head.init(cfg.bottleneck_dim, cfg.classes, rng);
        m.g_task.has_adv = true;
        m.g_task.adv.init(cfg.bottleneck_dim, cfg.adv_hidden, cfg.latent_domains, rng);
    }
    return m;
}

Tensor DiversifyModel::infer_embedding(const Tensor& x, const Group& g) const {
    return g.bottleneck.forward(fx.infer(x), nullptr);
}

Tensor DiversifyModel::infer_head(const Tensor& x, const Group& g) const {
    return g.head.forward(infer_embedding(x, g), nullptr);
}

void DiversifyModel::infer_embedding_and_head(const Tensor& x, const Group& g, Tensor* emb,
                                              Tensor* logits) const {
    Tensor e = g.bottleneck.forward(fx.infer(x), nullptr);
    if (logits) *logits = g.head.forward(e, nullptr);
    if (emb) *emb = std::move(e);
}

nn::ParamList DiversifyModel::featurizer_params() {
    nn::ParamList out;
    fx.collect(out);
    return out;
}

nn::ParamList DiversifyModel::group_params(Group& g) {
    nn::ParamList out;
    g.collect(out);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace {

constexpr char kModelMagic[8] = {'D', 'I', 'V', 'T', 'S', 'M', 'D', 'L'};

void write_vec(std::ofstream& f, const std::vector<double>& v) {
    const std::uint64_t n = v.size();
    f.write(reinterpret_cast<const char*>(&n), sizeof(n));
    f.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_vec(std::ifstream& f, std::vector<double>& v, const std::filesystem::path& file) {
    std::uint64_t n = 0;
    if (!f.read(reinterpret_cast<char*>(&n), sizeof(n)))
        fail(Err::FormatError, file.string() + ": truncated checkpoint");
    if (n != v.size())
        fail(Err::DimensionMismatch, file.string() + ": parameter block size " + std::to_string(n) +
                                         " does not match model dimensions " + std::to_string(v.size()));
    if (!f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double))))
        fail(Err::FormatError, file.string() + ": truncated parameter block");
}

template <typename F>
void visit_state(DiversifyModel& m, F&& fn) {
    auto bn = [&](nn::BatchNorm& b) {
        fn(b.gamma);
        fn(b.beta);
        fn(b.running_mean);
        fn(b.running_var);
    };
    auto linear = [&](nn::Linear& l) {
        fn(l.w);
        fn(l.b);
    };
    fn(m.fx.conv1.w);
    fn(m.fx.conv1.b);
    bn(m.fx.bn1);
    fn(m.fx.conv2.w);
    fn(m.fx.conv2.b);
    bn(m.fx.bn2);
    for (Group* g : {&m.g_joint, &m.g_latent, &m.g_task}) {
        linear(g->bottleneck.lin);
        linear(g->head);
        if (g->has_adv) {
            linear(g->adv.l1);
            linear(g->adv.l2);
            linear(g->adv.l3);
        }
    }
}

}  // namespace

void DiversifyModel::save(const std::filesystem::path& file) const {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) fail(Err::IOFailure, "cannot open " + file.string() + " for writing");
    f.write(kModelMagic, sizeof(kModelMagic));
    const std::int32_t ints[] = {1,  // version
                                 cfg.channels,  cfg.window, cfg.classes,        cfg.latent_domains,
                                 cfg.conv1_ch,  cfg.conv2_ch, cfg.kernel,       cfg.bottleneck_dim,
                                 cfg.adv_hidden};
    f.write(reinterpret_cast<const char*>(ints), sizeof(ints));
    const double reals[] = {cfg.bn_momentum, cfg.bn_eps};
    f.write(reinterpret_cast<const char*>(reals), sizeof(reals));
    visit_state(const_cast<DiversifyModel&>(*this), [&](std::vector<double>& v) { write_vec(f, v); });
    if (!f) fail(Err::IOFailure, "short write to " + file.string());
}

DiversifyModel DiversifyModel::load(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) fail(Err::MissingCheckpoint, "cannot open " + file.string());
    char magic[sizeof(kModelMagic)];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0)
        fail(Err::FormatError, file.string() + ": bad checkpoint magic at byte offset 0");
    std::int32_t ints[10];
    double reals[2];
    if (!f.read(reinterpret_cast<char*>(ints), sizeof(ints)) ||
        !f.read(reinterpret_cast<char*>(reals), sizeof(reals)))
        fail(Err::FormatError, file.string() + ": truncated checkpoint header");
    if (ints[0] != 1) fail(Err::FormatError, file.string() + ": unsupported checkpoint version");

    ModelConfig cfg;
    cfg.channels = ints[1];
    cfg.window = ints[2];
    cfg.classes = ints[3];
    cfg.latent_domains = ints[4];
    cfg.conv1_ch = ints[5];
    cfg.conv2_ch = ints[6];
    cfg.kernel = ints[7];
    cfg.bottleneck_dim = ints[8];
    cfg.adv_hidden = ints[9];
    cfg.bn_momentum = reals[0];
    cfg.bn_eps = reals[1];

    DiversifyModel m = make(cfg, 0);
    visit_state(m, [&](std::vector<double>& v) { read_vec(f, v, file); });
    return m;
}

Tensor make_batch(const std::vector<const float*>& rows, int channels, int window) {
    Tensor x(static_cast<int>(rows.size()), channels, window);
    const std::size_t per = static_cast<std::size_t>(channels) * window;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        double* dst = x.v.data() + i * per;
        const float* src = rows[i];
        for (std::size_t j = 0; j < per; ++j) dst[j] = src[j];
    }
    return x;
}

}  // namespace divts::model
