#include "divts/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "divts/rng.hpp"

namespace divts::synth {

namespace {

constexpr double kTwoPi = 6.283185307179586477;

struct DomainParams {
    double freq_mult = 1.0;
    double phase = 0.0;
    double harmonic = 0.15;      // third-harmonic weight, a normalization-proof shape cue
    double lag_scale = 1.0;      // inter-channel phase lag multiplier
    std::vector<double> gain;    // per channel
    std::vector<double> offset;  // per-channel baseline level, phase-invariant
};

DomainParams domain_params(int k, int k_true, int channels) {
    DomainParams p;
    const double center = (k_true - 1) / 2.0;
    p.freq_mult = 1.0 + 0.25 * (k - center);
    p.phase = 0.7 * (k - center);
    p.harmonic = 0.15 + 0.3 * (k_true > 1 ? static_cast<double>(k) / (k_true - 1) : 0.0);
    p.lag_scale = 1.0 + 0.4 * (k - center);
    p.gain.resize(static_cast<std::size_t>(channels));
    p.offset.resize(static_cast<std::size_t>(channels));
    for (int j = 0; j < channels; ++j) {
        p.gain[static_cast<std::size_t>(j)] = 1.0 + 0.8 * std::cos(kTwoPi * j * (k + 1) / channels + 0.8 * k);
        p.offset[static_cast<std::size_t>(j)] = 1.2 * std::sin(kTwoPi * j * (k + 1) / channels - 0.4 * k);
    }
    return p;
}

// The carrier tone belongs to the domain (three base cycles per step scaled
// by the domain's frequency multiplier); classes modulate it with an
// envelope. Spatial shift is then a shift of the dominant waveform regime,
// which is what latent-domain discovery has to pick up.
constexpr double kBaseCycles = 3.0;

// Spurious cue: each domain detunes the carrier per class under its own map,
// so frequency predicts the class inside any one domain but the map does not
// transfer. The envelope is the only cue that survives domain shift.
// Single-domain data is kept detune-free (and so exactly periodic).
double class_detune(int k, int c, int k_true) {
    if (k_true <= 1) return 0.0;
    return 0.35 * std::sin(2.1 * (k + 1) + 1.7 * c + 0.5);
}

// Held-out target parameterization: midway between the first two training
// domains, nudged off the line so it is reachable but not trivially matched.
// The nudge grows with drift_rate, so stronger temporal shift also means a
// farther deployment domain.
DomainParams target_params(int k_true, int channels, double drift_rate) {
    DomainParams a = domain_params(0, k_true, channels);
    DomainParams b = domain_params(std::min(1, k_true - 1), k_true, channels);
    const double push = 1.0 + drift_rate;
    DomainParams p;
    p.freq_mult = 0.5 * (a.freq_mult + b.freq_mult) + 0.06 * push;
    p.phase = 0.5 * (a.phase + b.phase) + 0.15 * push;
    p.harmonic = 0.5 * (a.harmonic + b.harmonic) + 0.08 * push;
    p.lag_scale = 0.5 * (a.lag_scale + b.lag_scale) + 0.12 * push;
    p.gain.resize(static_cast<std::size_t>(channels));
    p.offset.resize(static_cast<std::size_t>(channels));
    for (int j = 0; j < channels; ++j) {
        p.gain[static_cast<std::size_t>(j)] =
            0.5 * (a.gain[static_cast<std::size_t>(j)] + b.gain[static_cast<std::size_t>(j)]) +
            0.1 * push * std::sin(kTwoPi * j / channels + 1.0);
        p.offset[static_cast<std::size_t>(j)] =
            0.5 * (a.offset[static_cast<std::size_t>(j)] + b.offset[static_cast<std::size_t>(j)]) +
            0.2 * push * std::cos(kTwoPi * j / channels - 0.7);
    }
    return p;
}

// Classes are envelope families at integer rates (cycles per step), so the
// clean no-drift signal stays exactly step-periodic and overlapping windows
// of the same class are bit-identical when noise and drift are off.
// OOD-only classes use a pulse family no ID class shares.
int envelope_rate(int c, int n_id) { return c <= n_id ? 1 + (c - 1) / 3 : 1 + (c - n_id - 1); }

double envelope(int c, int n_id, double pos) {
    if (c > n_id) return pos < 0.2 ? 1.0 : (pos < 0.4 ? -1.0 : 0.0);  // pulse pair
    switch ((c - 1) % 3) {
        case 0: return pos < 0.5 ? 1.0 : -1.0;                          // square
        case 1: return 2.0 * pos - 1.0;                                 // sawtooth
        default: return pos < 0.5 ? 4.0 * pos - 1.0 : 3.0 - 4.0 * pos;  // triangle
    }
}

data::RawSeries make_series(const SynthConfig& cfg, const DomainParams& dp, int domain_idx, int klass,
                            Rng& noise, const std::string& subject) {
    data::RawSeries s;
    s.channels = cfg.channels;
    s.subject_id = subject;
    const int len = cfg.series_length;
    s.values.resize(static_cast<std::size_t>(cfg.channels) * len);
    s.labels.assign(static_cast<std::size_t>(len), klass);

    const double cycles = kBaseCycles * dp.freq_mult + class_detune(domain_idx, klass, cfg.k_true);
    const int env_rate = envelope_rate(klass, cfg.classes);
    const bool periodic = cfg.drift_rate == 0.0 && cycles == std::round(cycles);

    for (int j = 0; j < cfg.channels; ++j) {
        const double chan_phase = kTwoPi * j / cfg.channels * dp.lag_scale;
        double* row = s.values.data() + static_cast<std::size_t>(j) * len;
        for (int t = 0; t < len; ++t) {
            const double d = cfg.drift_rate * (static_cast<double>(t) / (len - 1) - 0.5);
            const double t_eff = periodic ? static_cast<double>(t % cfg.step) : static_cast<double>(t);
            const double theta = cycles * (1.0 + 0.4 * d) * kTwoPi * t_eff / cfg.step + dp.phase + chan_phase;
            const double gain = dp.gain[static_cast<std::size_t>(j)] * (1.0 + 0.8 * d * (j % 2 == 0 ? 1.0 : -1.0));
            const double env_pos = env_rate * t_eff / cfg.step;
            double v = dp.offset[static_cast<std::size_t>(j)] * (1.0 + 0.3 * d) +
                       gain * (std::sin(theta) + dp.harmonic * std::sin(3.0 * theta + 1.7 + 0.5 * j)) +
                       0.4 * envelope(klass, cfg.classes, env_pos - std::floor(env_pos));
            v += cfg.noise_sigma * noise.normal();
            row[t] = v;
        }
    }
    return s;
}

void append_windows(data::Dataset& ds, const data::RawSeries& series, const SynthConfig& cfg, int domain) {
    data::SlideResult slid = data::slide_windows(series, {cfg.window, cfg.step});
    for (data::Instance& ins : slid.instances) {
        ins.d_planted = domain;
        ds.instances.push_back(std::move(ins));
    }
}

void validate(const SynthConfig& cfg) {
    if (cfg.k_true < 1) fail(Err::InvalidConfig, "k_true must be >= 1");
    if (cfg.classes < 2) fail(Err::InvalidConfig, "classes must be >= 2");
    if (cfg.ood_extra < 0) fail(Err::InvalidConfig, "ood_extra must be >= 0");
    if (cfg.channels < 1) fail(Err::InvalidConfig, "channels must be >= 1");
    if (cfg.noise_sigma < 0.0) fail(Err::InvalidConfig, "noise_sigma must be >= 0");
    if (cfg.drift_rate < 0.0) fail(Err::InvalidConfig, "drift_rate must be >= 0");
    if (cfg.series_per_pair < 1) fail(Err::InvalidConfig, "series_per_pair must be >= 1");
    if (cfg.window < 1 || cfg.step < 1 || cfg.step > cfg.window)
        fail(Err::InvalidConfig, "need 1 <= step <= window");
    if (cfg.series_length < cfg.window) fail(Err::InvalidConfig, "series_length must cover one window");
}

}  // namespace

SynthResult generate(const SynthConfig& cfg) {
    validate(cfg);
    SynthResult out;

    auto init_meta = [&](data::Dataset& ds, int n_classes) {
        ds.channels = cfg.channels;
        ds.window = cfg.window;
        for (int c = 1; c <= n_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
    };
    init_meta(out.train, cfg.classes);
    init_meta(out.target, cfg.classes + cfg.ood_extra);
    for (int c = cfg.classes + 1; c <= cfg.classes + cfg.ood_extra; ++c) out.target.ood_classes.insert(c);

    Rng noise(cfg.seed, "synth.noise");

    for (int k = 0; k < cfg.k_true; ++k) {
        const DomainParams dp = domain_params(k, cfg.k_true, cfg.channels);
        for (int c = 1; c <= cfg.classes; ++c) {
            for (int s = 0; s < cfg.series_per_pair; ++s) {
                const std::string subject =
                    "synth-d" + std::to_string(k) + "-c" + std::to_string(c) + "-s" + std::to_string(s);
                append_windows(out.train, make_series(cfg, dp, k, c, noise, subject), cfg, k);
            }
        }
    }

    const DomainParams tp = target_params(cfg.k_true, cfg.channels, cfg.drift_rate);
    for (int c = 1; c <= cfg.classes + cfg.ood_extra; ++c) {
        for (int s = 0; s < cfg.series_per_pair; ++s) {
            const std::string subject = "synth-target-c" + std::to_string(c) + "-s" + std::to_string(s);
            append_windows(out.target, make_series(cfg, tp, cfg.k_true, c, noise, subject), cfg, cfg.k_true);
        }
    }

    data::normalize_dataset(out.train);
    data::normalize_dataset(out.target);
    return out;
}

double separability_check(const data::Dataset& ds) {
    const int n = static_cast<int>(ds.instances.size());
    if (n == 0) fail(Err::MissingPlantedLabels, "empty dataset");
    int k_max = -1;
    for (const data::Instance& ins : ds.instances) {
        if (ins.d_planted < 0) fail(Err::MissingPlantedLabels, "instance without d_planted");
        k_max = std::max(k_max, ins.d_planted);
    }
    const int K = k_max + 1;
    const int F = 2 * ds.channels;

    // Per-window features: mean and std per channel, z-scored per dimension.
    std::vector<double> feat(static_cast<std::size_t>(n) * F);
    for (int i = 0; i < n; ++i) {
        const data::Instance& ins = ds.instances[static_cast<std::size_t>(i)];
        for (int c = 0; c < ds.channels; ++c) {
            const float* x = ins.x.data() + static_cast<std::size_t>(c) * ds.window;
            double mean = 0.0;
            for (int t = 0; t < ds.window; ++t) mean += x[t];
            mean /= ds.window;
            double var = 0.0;
            for (int t = 0; t < ds.window; ++t) var += (x[t] - mean) * (x[t] - mean);
            var /= ds.window;
            feat[static_cast<std::size_t>(i) * F + 2 * c] = mean;
            feat[static_cast<std::size_t>(i) * F + 2 * c + 1] = std::sqrt(var);
        }
    }
    for (int f = 0; f < F; ++f) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < n; ++i) mean += feat[static_cast<std::size_t>(i) * F + f];
        mean /= n;
        for (int i = 0; i < n; ++i) {
            const double d = feat[static_cast<std::size_t>(i) * F + f] - mean;
            var += d * d;
        }
        const double sd = std::sqrt(var / n);
        const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
        for (int i = 0; i < n; ++i) {
            double& v = feat[static_cast<std::size_t>(i) * F + f];
            v = (v - mean) * scale;
        }
    }

    std::vector<std::vector<double>> sums(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(F), 0.0));
    std::vector<int> counts(static_cast<std::size_t>(K), 0);
    for (int i = 0; i < n; ++i) {
        const int k = ds.instances[static_cast<std::size_t>(i)].d_planted;
        ++counts[static_cast<std::size_t>(k)];
        for (int f = 0; f < F; ++f) sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)] += feat[static_cast<std::size_t>(i) * F + f];
    }

    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const int truth = ds.instances[static_cast<std::size_t>(i)].d_planted;
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
            const int cnt = counts[static_cast<std::size_t>(k)] - (k == truth ? 1 : 0);
            double dist = 0.0;
            for (int f = 0; f < F; ++f) {
                double centroid;
                if (cnt <= 0) {
                    centroid = sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)] /
                               std::max(1, counts[static_cast<std::size_t>(k)]);
                } else {
                    double s = sums[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)];
                    if (k == truth) s -= feat[static_cast<std::size_t>(i) * F + f];
                    centroid = s / cnt;
                }
                const double d = feat[static_cast<std::size_t>(i) * F + f] - centroid;
                dist += d * d;
            }
            if (dist < best_d) {
                best_d = dist;
                best = k;
            }
        }
        if (best == truth) ++correct;
    }
    return static_cast<double>(correct) / n;
}

}  // namespace divts::synth
