#pragma once

#include <cstdint>

#include "divts/dataset.hpp"

namespace divts::synth {

// Generator for non-stationary multichannel series with planted latent
// domains. Classes set the base waveform (frequency + envelope shape); each
// domain applies its own frequency multiplier, phase, and per-channel gain
// profile; drift_rate linearly warps those parameters along each series.
// The target split uses a held-out domain parameterization (midway between
// two training domains plus an offset) and may add OOD-only classes.
struct SynthConfig {
    int k_true = 3;        // planted latent-domain count in training data
    int classes = 4;       // ID class count
    int ood_extra = 1;     // extra classes present only in the target split
    int channels = 6;
    int series_length = 352;
    int window = 64;
    int step = 32;
    int series_per_pair = 17;  // series per (domain, class) pair
    double noise_sigma = 0.15;
    double drift_rate = 0.3;
    std::uint64_t seed = 0;
};

struct SynthResult {
    data::Dataset train;   // ID classes only, d_planted in 0..k_true-1
    data::Dataset target;  // held-out domain (d_planted == k_true), includes OOD classes
};

SynthResult generate(const SynthConfig& cfg);

// Generator-quality oracle: leave-one-out nearest-centroid accuracy of
// per-window mean/std features against the planted domain labels. The
// shipped default config must score >= 0.9.
double separability_check(const data::Dataset& ds);

}  // namespace divts::synth
