#pragma once

#include <array>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "hds/synthgen.hpp"

namespace hds::cfg {

using json = nlohmann::json;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DatasetSection {
    std::string dir;  // dataset location consumed by downstream stages
    int64_t count = 6;
    std::array<int64_t, 3> split = {4, 1, 1};  // train / val / test
    synth::SceneConfig scene;
};

struct DiffusionSection {
    std::string checkpoint;  // trained-diffusion artifact consumed downstream
    int64_t base_channels = 16;
    int64_t temb_dim = 64;
    int64_t timesteps = 250;
    int64_t epochs = 100;
    int64_t batch = 4;
    double lr = 1e-4;
};

struct FeatureSection {
    std::string dir;  // extracted-feature artifacts consumed downstream
    int64_t t = 25;
    std::vector<int> stages = {1, 2, 3};
    bool standardize = true;
};

struct SegSection {
    std::string checkpoint;  // trained-segmentation artifact consumed downstream
    int64_t k = 2;
    int64_t base_channels = 16;
    int64_t epochs = 100;
    double lambda_v = 1.0, lambda_f = 1.0, lambda_inv = 1.0;
    double gamma_min = 0.9, gamma_max = 1.1;
    double lr = 3e-4;
};

struct EvalSection {
    int level = 1;
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};
    std::string split = "test";
    bool stub_perfect = false;  // score the ground truth against itself (plumbing check)
};

struct BaselineSection {
    std::string input = "intensity";  // "intensity" | "features"
};

struct RunConfig {
    uint64_t seed = 0;
    DatasetSection dataset;
    DiffusionSection diffusion;
    FeatureSection features;
    SegSection segmentation;
    EvalSection eval;
    BaselineSection baseline;
};

namespace detail {

inline void expect_keys(const json& j, const std::set<std::string>& allowed,
                        const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& item : j.items())
        if (!allowed.count(item.key()))
            throw ConfigError(where + ": unknown key '" + item.key() + "'");
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

inline void read_class(const json& j, const char* key, synth::ObjectClassConfig& out,
                       const std::string& where) {
    if (!j.contains(key)) return;
    const std::string w = where + "." + key;
    expect_keys(j.at(key),
                {"count", "radius_min", "radius_max", "intensity_min", "intensity_max"}, w);
    read_field(j.at(key), "count", out.count, w);
    read_field(j.at(key), "radius_min", out.radius_min, w);
    read_field(j.at(key), "radius_max", out.radius_max, w);
    read_field(j.at(key), "intensity_min", out.intensity_min, w);
    read_field(j.at(key), "intensity_max", out.intensity_max, w);
}

inline json class_json(const synth::ObjectClassConfig& c) {
    return json{{"count", c.count},
                {"radius_min", c.radius_min},
                {"radius_max", c.radius_max},
                {"intensity_min", c.intensity_min},
                {"intensity_max", c.intensity_max}};
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
    using detail::expect_keys;
    using detail::read_field;
    RunConfig c;
    expect_keys(j, {"seed", "dataset", "diffusion", "features", "segmentation", "eval", "baseline"},
                "config");
    read_field(j, "seed", c.seed, "config");

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        expect_keys(d,
                    {"dir", "count", "split", "extent", "variant", "cell", "vesicles",
                     "mitochondria", "aggregates", "background_intensity_min",
                     "background_intensity_max", "noise_magnitude"},
                    "dataset");
        read_field(d, "dir", c.dataset.dir, "dataset");
        read_field(d, "count", c.dataset.count, "dataset");
        read_field(d, "split", c.dataset.split, "dataset");
        read_field(d, "extent", c.dataset.scene.extent, "dataset");
        std::string variant = "regular";
        read_field(d, "variant", variant, "dataset");
        if (variant == "regular")
            c.dataset.scene.variant = synth::Variant::Regular;
        else if (variant == "irregular")
            c.dataset.scene.variant = synth::Variant::Irregular;
        else
            throw ConfigError("dataset.variant: expected 'regular' or 'irregular', got '" +
                              variant + "'");
        detail::read_class(d, "cell", c.dataset.scene.cell, "dataset");
        detail::read_class(d, "vesicles", c.dataset.scene.vesicles, "dataset");
        detail::read_class(d, "mitochondria", c.dataset.scene.mitochondria, "dataset");
        detail::read_class(d, "aggregates", c.dataset.scene.aggregates, "dataset");
        read_field(d, "background_intensity_min", c.dataset.scene.background_intensity_min,
                   "dataset");
        read_field(d, "background_intensity_max", c.dataset.scene.background_intensity_max,
                   "dataset");
        read_field(d, "noise_magnitude", c.dataset.scene.noise_magnitude, "dataset");
    }
    if (j.contains("diffusion")) {
        const auto& d = j.at("diffusion");
        expect_keys(d, {"checkpoint", "base_channels", "temb_dim", "timesteps", "epochs", "batch", "lr"},
                    "diffusion");
        read_field(d, "checkpoint", c.diffusion.checkpoint, "diffusion");
        read_field(d, "base_channels", c.diffusion.base_channels, "diffusion");
        read_field(d, "temb_dim", c.diffusion.temb_dim, "diffusion");
        read_field(d, "timesteps", c.diffusion.timesteps, "diffusion");
        read_field(d, "epochs", c.diffusion.epochs, "diffusion");
        read_field(d, "batch", c.diffusion.batch, "diffusion");
        read_field(d, "lr", c.diffusion.lr, "diffusion");
    }
    if (j.contains("features")) {
        const auto& d = j.at("features");
        expect_keys(d, {"dir", "t", "stages", "standardize"}, "features");
        read_field(d, "dir", c.features.dir, "features");
        read_field(d, "t", c.features.t, "features");
        read_field(d, "stages", c.features.stages, "features");
        read_field(d, "standardize", c.features.standardize, "features");
    }
    if (j.contains("segmentation")) {
        const auto& d = j.at("segmentation");
        expect_keys(d,
                    {"checkpoint", "k", "base_channels", "epochs", "lambda_v", "lambda_f",
                     "lambda_inv", "gamma_min", "gamma_max", "lr"},
                    "segmentation");
        read_field(d, "checkpoint", c.segmentation.checkpoint, "segmentation");
        read_field(d, "k", c.segmentation.k, "segmentation");
        read_field(d, "base_channels", c.segmentation.base_channels, "segmentation");
        read_field(d, "epochs", c.segmentation.epochs, "segmentation");
        read_field(d, "lambda_v", c.segmentation.lambda_v, "segmentation");
        read_field(d, "lambda_f", c.segmentation.lambda_f, "segmentation");
        read_field(d, "lambda_inv", c.segmentation.lambda_inv, "segmentation");
        read_field(d, "gamma_min", c.segmentation.gamma_min, "segmentation");
        read_field(d, "gamma_max", c.segmentation.gamma_max, "segmentation");
        read_field(d, "lr", c.segmentation.lr, "segmentation");
    }
    if (j.contains("eval")) {
        const auto& d = j.at("eval");
        expect_keys(d, {"level", "spacing", "split", "stub_perfect"}, "eval");
        read_field(d, "level", c.eval.level, "eval");
        read_field(d, "spacing", c.eval.spacing, "eval");
        read_field(d, "split", c.eval.split, "eval");
        read_field(d, "stub_perfect", c.eval.stub_perfect, "eval");
    }
    if (j.contains("baseline")) {
        const auto& d = j.at("baseline");
        expect_keys(d, {"input"}, "baseline");
        read_field(d, "input", c.baseline.input, "baseline");
    }
    return c;
}

inline void validate_config(const RunConfig& c) {
    try {
        c.dataset.scene.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("dataset: ") + e.what());
    }
    if (c.dataset.count < 1) throw ConfigError("dataset.count: must be >= 1");
    if (c.dataset.split[0] < 1 || c.dataset.split[1] < 0 || c.dataset.split[2] < 0)
        throw ConfigError("dataset.split: train part must be >= 1, others >= 0");
    if (c.dataset.split[0] + c.dataset.split[1] + c.dataset.split[2] != c.dataset.count)
        throw ConfigError("dataset.split: parts must sum to dataset.count");
    if (c.diffusion.base_channels < 1 || c.diffusion.temb_dim < 2)
        throw ConfigError("diffusion: base_channels >= 1 and temb_dim >= 2 required");
    if (c.diffusion.timesteps < 1) throw ConfigError("diffusion.timesteps: must be >= 1");
    if (c.diffusion.epochs < 0) throw ConfigError("diffusion.epochs: must be >= 0");
    if (c.diffusion.batch < 1) throw ConfigError("diffusion.batch: must be >= 1");
    if (c.diffusion.lr <= 0) throw ConfigError("diffusion.lr: must be positive");
    if (c.features.t < 1 || c.features.t > c.diffusion.timesteps)
        throw ConfigError("features.t: must lie in [1, diffusion.timesteps]");
    if (c.features.stages.empty()) throw ConfigError("features.stages: must name at least one stage");
    for (int s : c.features.stages)
        if (s < 1 || s > 3) throw ConfigError("features.stages: stages are 1, 2 or 3");
    if (c.segmentation.k < 2 || c.segmentation.k > 255)
        throw ConfigError("segmentation.k: must lie in [2, 255]");
    if (c.segmentation.base_channels < 1)
        throw ConfigError("segmentation.base_channels: must be >= 1");
    if (c.segmentation.epochs < 0) throw ConfigError("segmentation.epochs: must be >= 0");
    if (c.segmentation.lambda_v < 0 || c.segmentation.lambda_f < 0 || c.segmentation.lambda_inv < 0)
        throw ConfigError("segmentation: loss weights must be non-negative");
    if (!(c.segmentation.gamma_min > 0) || c.segmentation.gamma_min > c.segmentation.gamma_max)
        throw ConfigError("segmentation: need 0 < gamma_min <= gamma_max");
    if (c.segmentation.lr <= 0) throw ConfigError("segmentation.lr: must be positive");
    if (c.eval.level < 1 || c.eval.level > 3) throw ConfigError("eval.level: must be 1, 2 or 3");
    for (double s : c.eval.spacing)
        if (!(s > 0)) throw ConfigError("eval.spacing: entries must be positive");
    if (c.eval.split != "train" && c.eval.split != "val" && c.eval.split != "test")
        throw ConfigError("eval.split: expected train, val or test");
    if (c.baseline.input != "intensity" && c.baseline.input != "features")
        throw ConfigError("baseline.input: expected 'intensity' or 'features'");
}

// full echo with every default materialized; feeding it back reproduces the run
inline json to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["dataset"] = {
        {"dir", c.dataset.dir},
        {"count", c.dataset.count},
        {"split", c.dataset.split},
        {"extent", c.dataset.scene.extent},
        {"variant", c.dataset.scene.variant == synth::Variant::Regular ? "regular" : "irregular"},
        {"cell", detail::class_json(c.dataset.scene.cell)},
        {"vesicles", detail::class_json(c.dataset.scene.vesicles)},
        {"mitochondria", detail::class_json(c.dataset.scene.mitochondria)},
        {"aggregates", detail::class_json(c.dataset.scene.aggregates)},
        {"background_intensity_min", c.dataset.scene.background_intensity_min},
        {"background_intensity_max", c.dataset.scene.background_intensity_max},
        {"noise_magnitude", c.dataset.scene.noise_magnitude}};
    j["diffusion"] = {{"checkpoint", c.diffusion.checkpoint},
                      {"base_channels", c.diffusion.base_channels},
                      {"temb_dim", c.diffusion.temb_dim},
                      {"timesteps", c.diffusion.timesteps},
                      {"epochs", c.diffusion.epochs},
                      {"batch", c.diffusion.batch},
                      {"lr", c.diffusion.lr}};
    j["features"] = {{"dir", c.features.dir},
                     {"t", c.features.t},
                     {"stages", c.features.stages},
                     {"standardize", c.features.standardize}};
    j["segmentation"] = {{"checkpoint", c.segmentation.checkpoint},
                         {"k", c.segmentation.k},
                         {"base_channels", c.segmentation.base_channels},
                         {"epochs", c.segmentation.epochs},
                         {"lambda_v", c.segmentation.lambda_v},
                         {"lambda_f", c.segmentation.lambda_f},
                         {"lambda_inv", c.segmentation.lambda_inv},
                         {"gamma_min", c.segmentation.gamma_min},
                         {"gamma_max", c.segmentation.gamma_max},
                         {"lr", c.segmentation.lr}};
    j["eval"] = {{"level", c.eval.level},
                 {"spacing", c.eval.spacing},
                 {"split", c.eval.split},
                 {"stub_perfect", c.eval.stub_perfect}};
    j["baseline"] = {{"input", c.baseline.input}};
    return j;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    RunConfig c = parse_config(j);
    validate_config(c);
    return c;
}

inline void write_resolved_config(const std::string& path, const RunConfig& c) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ConfigError("cannot write resolved config to " + path);
    f << to_json(c).dump(2) << "\n";
}

}  // namespace hds::cfg
