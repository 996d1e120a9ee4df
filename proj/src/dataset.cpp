#include "divts/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "divts/rng.hpp"
#include "nlohmann/json.hpp"

namespace divts::data {

namespace {
constexpr char kMagic[6] = {'D', 'I', 'V', 'T', 'S', '\0'};
}

SlideResult slide_windows(const RawSeries& series, const WindowConfig& cfg) {
    if (cfg.window < 1 || cfg.step < 1 || cfg.step > cfg.window)
        fail(Err::InvalidConfig, "window config requires 1 <= step <= window");
    const int len = series.length();
    if (len < cfg.window)
        fail(Err::LengthTooShort, "series length " + std::to_string(len) + " < window " +
                                      std::to_string(cfg.window));
    if (static_cast<int>(series.labels.size()) != len)
        fail(Err::DimensionMismatch, "labels must cover every timestep");

    SlideResult out;
    const int count = (len - cfg.window) / cfg.step + 1;
    out.instances.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const int start = i * cfg.step;
        const int label = series.labels[static_cast<std::size_t>(start)];
        bool uniform = true;
        for (int t = start + 1; t < start + cfg.window; ++t) {
            if (series.labels[static_cast<std::size_t>(t)] != label) {
                uniform = false;
                break;
            }
        }
        if (!uniform) {
            ++out.dropped_label_conflicts;
            continue;
        }
        Instance ins;
        ins.y = label;
        ins.x.resize(static_cast<std::size_t>(series.channels) * cfg.window);
        for (int c = 0; c < series.channels; ++c) {
            const double* src = series.channel(c) + start;
            float* dst = ins.x.data() + static_cast<std::size_t>(c) * cfg.window;
            for (int t = 0; t < cfg.window; ++t) dst[t] = static_cast<float>(src[t]);
        }
        out.instances.push_back(std::move(ins));
    }
    return out;
}

void minmax_normalize(std::span<float> x) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : x) {
        if (!std::isfinite(v)) fail(Err::NonFiniteInput, "non-finite value in sample");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (x.empty()) return;
    if (hi == lo) {
        std::fill(x.begin(), x.end(), 0.0f);
        return;
    }
    const float scale = 1.0f / (hi - lo);
    for (float& v : x) v = (v - lo) * scale;
}

void normalize_dataset(Dataset& ds, NormMode mode) {
    if (mode == NormMode::PerSample) {
        for (Instance& ins : ds.instances) minmax_normalize(ins.x);
        return;
    }
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (const Instance& ins : ds.instances) {
        for (float v : ins.x) {
            if (!std::isfinite(v)) fail(Err::NonFiniteInput, "non-finite value in dataset");
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (ds.instances.empty()) return;
    if (hi == lo) {
        for (Instance& ins : ds.instances) std::fill(ins.x.begin(), ins.x.end(), 0.0f);
        return;
    }
    const float scale = 1.0f / (hi - lo);
    for (Instance& ins : ds.instances)
        for (float& v : ins.x) v = (v - lo) * scale;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) fail(Err::EmptySplit, "ratio must be in (0, 1)");
    const int n = static_cast<int>(ds.instances.size());
    const int n_train = static_cast<int>(std::llround(ratio * n));
    if (n_train <= 0 || n_train >= n)
        fail(Err::EmptySplit, "split of " + std::to_string(n) + " at ratio " + std::to_string(ratio) +
                                  " leaves an empty side");

    std::vector<int> idx = Rng::permutation(seed, "data.split", n);
    Dataset train = ds, val = ds;
    train.instances.clear();
    val.instances.clear();
    train.instances.reserve(static_cast<std::size_t>(n_train));
    val.instances.reserve(static_cast<std::size_t>(n - n_train));
    for (int i = 0; i < n; ++i) {
        const Instance& ins = ds.instances[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        (i < n_train ? train : val).instances.push_back(ins);
    }
    return {std::move(train), std::move(val)};
}

IdOodSplit partition_id_ood(const Dataset& ds, const std::set<int>& ood_classes) {
    const int total = static_cast<int>(ds.class_names.size());
    for (int c : ood_classes)
        if (c < 1 || c > total) fail(Err::InvalidConfig, "ood class index out of range");
    const int n_id = total - static_cast<int>(ood_classes.size());
    if (n_id < 2) fail(Err::TooFewIDClasses, "need at least 2 ID classes, have " + std::to_string(n_id));

    // Order-preserving relabel: ID classes first, OOD classes after.
    std::map<int, int> remap;
    int next = 1;
    for (int c = 1; c <= total; ++c)
        if (!ood_classes.count(c)) remap[c] = next++;
    for (int c = 1; c <= total; ++c)
        if (ood_classes.count(c)) remap[c] = next++;

    IdOodSplit out;
    out.test = ds;
    out.test.class_names.assign(static_cast<std::size_t>(total), "");
    out.test.ood_classes.clear();
    for (int c = 1; c <= total; ++c) {
        out.test.class_names[static_cast<std::size_t>(remap[c] - 1)] = ds.class_names[static_cast<std::size_t>(c - 1)];
        if (ood_classes.count(c)) out.test.ood_classes.insert(remap[c]);
    }
    for (Instance& ins : out.test.instances) ins.y = remap.at(ins.y);

    out.train_pool = out.test;
    out.train_pool.ood_classes.clear();
    out.train_pool.class_names.resize(static_cast<std::size_t>(n_id));
    std::erase_if(out.train_pool.instances, [&](const Instance& ins) { return ins.y > n_id; });
    return out;
}

namespace {

void write_bin(const std::filesystem::path& file, const void* payload, std::size_t bytes) {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) fail(Err::IOFailure, "cannot open " + file.string() + " for writing");
    f.write(kMagic, sizeof(kMagic));
    f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
    if (!f) fail(Err::IOFailure, "short write to " + file.string());
}

std::vector<char> read_bin(const std::filesystem::path& file, std::size_t expected_bytes) {
    std::ifstream f(file, std::ios::binary);
    if (!f) fail(Err::IOFailure, "cannot open " + file.string());
    char magic[sizeof(kMagic)];
    if (!f.read(magic, sizeof(magic)))
        fail(Err::FormatError, file.string() + ": truncated magic at byte offset 0");
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        fail(Err::FormatError, file.string() + ": bad magic at byte offset 0");
    std::vector<char> payload(expected_bytes);
    if (!f.read(payload.data(), static_cast<std::streamsize>(expected_bytes)))
        fail(Err::DimensionMismatch,
             file.string() + ": payload shorter than manifest dimensions (expected " +
                 std::to_string(expected_bytes) + " bytes after magic)");
    char extra;
    if (f.read(&extra, 1))
        fail(Err::DimensionMismatch, file.string() + ": payload longer than manifest dimensions (extra data at byte offset " +
                                         std::to_string(sizeof(kMagic) + expected_bytes) + ")");
    return payload;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail(Err::IOFailure, "cannot create " + dir.string());

    const std::size_t n = ds.instances.size();
    const std::size_t per = static_cast<std::size_t>(ds.channels) * ds.window;
    bool have_d = !ds.instances.empty();
    for (const Instance& ins : ds.instances) {
        if (ins.x.size() != per) fail(Err::DimensionMismatch, "instance dims are not uniform");
        have_d = have_d && ins.d_planted >= 0;
    }

    std::vector<float> xs(n * per);
    std::vector<std::int32_t> ys(n), dsv(have_d ? n : 0);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(ds.instances[i].x.begin(), ds.instances[i].x.end(), xs.begin() + static_cast<std::ptrdiff_t>(i * per));
        ys[i] = ds.instances[i].y;
        if (have_d) dsv[i] = ds.instances[i].d_planted;
    }
    write_bin(dir / "x.bin", xs.data(), xs.size() * sizeof(float));
    write_bin(dir / "y.bin", ys.data(), ys.size() * sizeof(std::int32_t));
    if (have_d) write_bin(dir / "d.bin", dsv.data(), dsv.size() * sizeof(std::int32_t));

    nlohmann::json files = {{"x", "x.bin"}, {"y", "y.bin"}};
    if (have_d) files["d"] = "d.bin";
    nlohmann::json manifest = {
        {"version", 1},
        {"channels", ds.channels},
        {"window", ds.window},
        {"num_instances", n},
        {"classes", ds.class_names},
        {"ood_classes", std::vector<int>(ds.ood_classes.begin(), ds.ood_classes.end())},
        {"files", files},
    };
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) fail(Err::IOFailure, "cannot write manifest in " + dir.string());
    mf << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) fail(Err::IOFailure, "missing manifest.json in " + dir.string());
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        fail(Err::FormatError, "manifest.json: " + std::string(e.what()));
    }

    Dataset ds;
    std::size_t n = 0;
    nlohmann::json files;
    try {
        ds.channels = manifest.at("channels").get<int>();
        ds.window = manifest.at("window").get<int>();
        n = manifest.at("num_instances").get<std::size_t>();
        ds.class_names = manifest.at("classes").get<std::vector<std::string>>();
        for (int c : manifest.at("ood_classes").get<std::vector<int>>()) ds.ood_classes.insert(c);
        files = manifest.at("files");
    } catch (const nlohmann::json::exception& e) {
        fail(Err::FormatError, "manifest.json: " + std::string(e.what()));
    }
    if (ds.channels < 1 || ds.window < 1)
        fail(Err::FormatError, "manifest.json: channels and window must be positive");

    const std::size_t per = static_cast<std::size_t>(ds.channels) * ds.window;
    std::vector<char> xraw = read_bin(dir / files.at("x").get<std::string>(), n * per * sizeof(float));
    std::vector<char> yraw = read_bin(dir / files.at("y").get<std::string>(), n * sizeof(std::int32_t));
    std::vector<char> draw;
    const bool have_d = files.contains("d");
    if (have_d) draw = read_bin(dir / files.at("d").get<std::string>(), n * sizeof(std::int32_t));

    ds.instances.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        Instance& ins = ds.instances[i];
        ins.x.resize(per);
        std::memcpy(ins.x.data(), xraw.data() + i * per * sizeof(float), per * sizeof(float));
        std::int32_t y;
        std::memcpy(&y, yraw.data() + i * sizeof(std::int32_t), sizeof(y));
        ins.y = y;
        if (y < 1 || y > static_cast<std::int32_t>(ds.class_names.size()))
            fail(Err::FormatError, "y.bin: label " + std::to_string(y) + " out of range at record " +
                                       std::to_string(i));
        if (have_d) {
            std::int32_t d;
            std::memcpy(&d, draw.data() + i * sizeof(std::int32_t), sizeof(d));
            ins.d_planted = d;
        }
    }
    return ds;
}

}  // namespace divts::data
