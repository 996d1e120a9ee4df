#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "divts/error.hpp"

namespace divts::data {

// One fixed-size window of multichannel signal. x is stored as float32 in
// channel-major order ([channels][window]) and holds normalized values in
// [0, 1] once normalize_dataset has run. Labels y are 1-based; domain
// indices are 0-based with -1 meaning unset.
struct Instance {
    std::vector<float> x;
    int y = 0;
    int d_pseudo = -1;
    int d_planted = -1;
};

struct Dataset {
    int channels = 0;
    int window = 0;
    std::vector<std::string> class_names;  // all classes, index i names class i+1
    std::set<int> ood_classes;             // 1-based class indices present only at test time
    std::vector<Instance> instances;

    int c_id() const { return static_cast<int>(class_names.size() - ood_classes.size()); }
    bool is_ood(const Instance& ins) const { return ood_classes.count(ins.y) > 0; }
    std::size_t size() const { return instances.size(); }
};

// A contiguous recording before windowing. labels holds one class index per
// timestep so segment boundaries inside a series are representable.
struct RawSeries {
    int channels = 0;
    std::vector<double> values;  // [channels][length] row-major
    std::vector<int> labels;     // per-timestep, 1-based
    std::string subject_id;

    int length() const { return channels > 0 ? static_cast<int>(values.size()) / channels : 0; }
    const double* channel(int c) const { return values.data() + static_cast<std::size_t>(c) * length(); }
};

struct WindowConfig {
    int window = 200;
    int step = 100;
};

struct SlideResult {
    std::vector<Instance> instances;
    int dropped_label_conflicts = 0;
};

// Splits a series into ⌊(length − window)/step⌋ + 1 windows. Windows whose
// span crosses a label boundary are dropped and counted.
SlideResult slide_windows(const RawSeries& series, const WindowConfig& cfg);

enum class NormMode { PerSample, Global };

// Min-max rescale to [0, 1]; a constant input maps to all zeros.
void minmax_normalize(std::span<float> x);

// PerSample normalizes each instance over all of its channels jointly;
// Global uses one min/max over the whole dataset.
void normalize_dataset(Dataset& ds, NormMode mode = NormMode::PerSample);

// Seeded shuffle-then-split; sizes are (round(ratio*N), rest).
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double ratio, std::uint64_t seed);

struct IdOodSplit {
    Dataset train_pool;  // ID instances only, labels remapped so ID classes are 1..c_id
    Dataset test;        // all instances, same remapping, OOD classes at the tail
};

// Separates the ID training pool from the full test set. Class labels are
// canonicalized so ID classes occupy 1..c_id and OOD classes follow; the
// mapping is order-preserving within each group.
IdOodSplit partition_id_ood(const Dataset& ds, const std::set<int>& ood_classes);

// On-disk directory format: manifest.json plus DIVTS\0-prefixed little-endian
// binary payloads (x.bin float32, y.bin int32, optional d.bin int32).
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace divts::data
