// hdseg: command-line driver for the structure-discovery pipeline.
// Verbs: generate, train-diffusion, extract-features, train-seg, evaluate,
// baseline, export-slices. Exit codes: 0 success, 2 config error, 3 missing
// prerequisite, 4 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hds/checkpoint.hpp"
#include "hds/config.hpp"
#include "hds/diffusion.hpp"
#include "hds/kmeans.hpp"
#include "hds/metrics.hpp"
#include "hds/segmodel.hpp"
#include "hds/slices.hpp"
#include "hds/synthgen.hpp"
#include "hds/volio.hpp"

namespace fs = std::filesystem;
using hds::cfg::RunConfig;
using json = nlohmann::json;

namespace {

struct MissingArtifact : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_artifact(const std::string& path, const std::string& what) {
    if (path.empty())
        throw hds::cfg::ConfigError("no path configured for " + what);
    if (!fs::exists(path)) throw MissingArtifact(what + " not found: " + path);
}

std::string vol_name(int64_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "vol_%03lld", static_cast<long long>(i));
    return buf;
}

std::string feat_name(int64_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "feat_%03lld", static_cast<long long>(i));
    return buf;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

json load_manifest(const std::string& dataset_dir) {
    const std::string path = dataset_dir + "/manifest.json";
    require_artifact(path, "dataset manifest");
    std::ifstream f(path);
    json j;
    f >> j;
    return j;
}

std::vector<std::string> split_names(const json& manifest, const std::string& split) {
    return manifest.at("volumes").at(split).get<std::vector<std::string>>();
}

int64_t name_index(const std::string& name) {
    return std::stoll(name.substr(name.find('_') + 1));
}

std::vector<hds::Tensor> load_images(const std::string& dir, const std::vector<std::string>& names) {
    std::vector<hds::Tensor> out;
    for (const auto& n : names) {
        const std::string p = dir + "/" + n + ".hdv";
        require_artifact(p, "volume " + n);
        out.push_back(hds::io::load_volume(p));
    }
    return out;
}

std::vector<hds::metrics::LabelVolume> load_level_labels(const std::string& dir,
                                                         const std::vector<std::string>& names,
                                                         int level) {
    std::vector<hds::metrics::LabelVolume> out;
    for (const auto& n : names) {
        const std::string p = dir + "/" + n + "_l" + std::to_string(level) + ".hdv";
        require_artifact(p, "level " + std::to_string(level) + " labels for " + n);
        out.push_back(hds::io::load_labels(p));
    }
    return out;
}

// features are stored rank-4 [p,D,H,W]; the models consume [1,p,D,H,W]
hds::Tensor load_features(const std::string& dir, int64_t index) {
    const std::string p = dir + "/" + feat_name(index) + ".hdv";
    require_artifact(p, "feature volume " + feat_name(index));
    hds::Tensor f = hds::io::load_volume(p);
    if (f.shape.size() == 3) f.shape = {1, 1, f.shape[0], f.shape[1], f.shape[2]};
    else f.shape.insert(f.shape.begin(), 1);
    return f;
}

hds::diff::DiffusionConfig diffusion_config(const RunConfig& c) {
    hds::diff::DiffusionConfig dc;
    dc.unet.base_channels = c.diffusion.base_channels;
    dc.unet.temb_dim = c.diffusion.temb_dim;
    dc.T = c.diffusion.timesteps;
    dc.epochs = c.diffusion.epochs;
    dc.batch = c.diffusion.batch;
    dc.lr = static_cast<float>(c.diffusion.lr);
    dc.seed = c.seed;
    return dc;
}

hds::seg::SegConfig seg_config(const RunConfig& c) {
    hds::seg::SegConfig sc;
    sc.unet.base_channels = c.segmentation.base_channels;
    sc.k = c.segmentation.k;
    sc.weights.lambda_v = c.segmentation.lambda_v;
    sc.weights.lambda_f = c.segmentation.lambda_f;
    sc.weights.lambda_inv = c.segmentation.lambda_inv;
    sc.gamma_min = c.segmentation.gamma_min;
    sc.gamma_max = c.segmentation.gamma_max;
    sc.feature_t = c.features.t;
    sc.stages = c.features.stages;
    sc.epochs = c.segmentation.epochs;
    sc.lr = static_cast<float>(c.segmentation.lr);
    sc.standardize = c.features.standardize;
    sc.seed = c.seed;
    return sc;
}

void finish_run(const std::string& out, const RunConfig& c) {
    hds::cfg::write_resolved_config(out + "/resolved_config.json", c);
}

void write_report(const std::string& out, const RunConfig& c, const hds::metrics::EvalReport& rep,
                  const std::vector<std::string>& names, const std::string& source) {
    std::ofstream txt(out + "/report.txt", std::ios::trunc);
    txt << "segmentation evaluation report (" << source << ")\n";
    txt << "level " << rep.level << "  K " << rep.k << "  split " << c.eval.split << "\n";
    txt << "distance units: " << rep.distance_units << "\n";
    txt << "averaging: " << rep.averaging << "\n";
    txt << "volume dice hd95\n";
    for (size_t i = 0; i < names.size(); ++i)
        txt << names[i] << " " << fmt(rep.volume_dice[i]) << " " << fmt(rep.volume_hd95[i]) << "\n";
    txt << "mean " << fmt(rep.mean_dice) << " " << fmt(rep.mean_hd95) << "\n";

    json j = {{"source", source},
              {"level", rep.level},
              {"k", rep.k},
              {"split", c.eval.split},
              {"volumes", names},
              {"volume_dice", rep.volume_dice},
              {"volume_hd95", rep.volume_hd95},
              {"mean_dice", rep.mean_dice},
              {"mean_hd95", rep.mean_hd95},
              {"distance_units", rep.distance_units},
              {"averaging", rep.averaging},
              {"config", hds::cfg::to_json(c)}};
    std::ofstream js(out + "/report.json", std::ios::trunc);
    js << j.dump(2) << "\n";
    std::cout << "mean dice " << rep.mean_dice << ", mean hd95 " << rep.mean_hd95 << " ("
              << names.size() << " volumes)\n";
}

void cmd_generate(const RunConfig& c, const std::string& out) {
    fs::create_directories(out);
    json volumes = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
    for (int64_t i = 0; i < c.dataset.count; ++i) {
        hds::synth::SceneConfig scene = c.dataset.scene;
        scene.seed = hds::substream_seed(c.seed, "dataset", static_cast<uint64_t>(i));
        const auto v = hds::synth::generate_volume(scene);
        const std::string name = vol_name(i);
        hds::io::save_volume(out + "/" + name + ".hdv", v.image);
        for (int l = 0; l < 3; ++l)
            hds::io::save_labels(out + "/" + name + "_l" + std::to_string(l + 1) + ".hdv",
                                 v.labels[static_cast<size_t>(l)]);
        const char* split = i < c.dataset.split[0]                      ? "train"
                            : i < c.dataset.split[0] + c.dataset.split[1] ? "val"
                                                                          : "test";
        volumes[split].push_back(name);
    }
    json manifest = {{"count", c.dataset.count},
                     {"extent", c.dataset.scene.extent},
                     {"seed", c.seed},
                     {"volumes", volumes}};
    std::ofstream mf(out + "/manifest.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    finish_run(out, c);
    std::cout << "generated " << c.dataset.count << " volumes into " << out << "\n";
}

void cmd_train_diffusion(const RunConfig& c, const std::string& out) {
    const auto manifest = load_manifest(c.dataset.dir);
    const auto names = split_names(manifest, "train");
    const auto images = load_images(c.dataset.dir, names);
    fs::create_directories(out);

    auto model = hds::diff::train_diffusion(images, diffusion_config(c));
    hds::save_checkpoint(out + "/diffusion.hdt", model.unet.params.items);
    std::ofstream log(out + "/loss_log.txt", std::ios::trunc);
    for (size_t e = 0; e < model.epoch_loss.size(); ++e)
        log << "epoch " << (e + 1) << " l1 " << fmt(model.epoch_loss[e]) << "\n";
    finish_run(out, c);
    if (!model.epoch_loss.empty())
        std::cout << "diffusion trained, first-epoch L1 " << model.epoch_loss.front()
                  << ", final L1 " << model.epoch_loss.back() << "\n";
}

void cmd_extract_features(const RunConfig& c, const std::string& out) {
    const auto manifest = load_manifest(c.dataset.dir);
    require_artifact(c.diffusion.checkpoint, "diffusion checkpoint");
    auto model = hds::diff::make_diffusion_model(diffusion_config(c));
    hds::load_checkpoint(c.diffusion.checkpoint, model.unet.params.items);
    fs::create_directories(out);

    int64_t written = 0;
    for (const char* split : {"train", "val", "test"})
        for (const auto& name : split_names(manifest, split)) {
            const int64_t i = name_index(name);
            const auto image = hds::io::load_volume(c.dataset.dir + "/" + name + ".hdv");
            hds::Tensor f = hds::diff::extract_features(
                model, image, c.features.t, c.features.stages,
                hds::substream_seed(c.seed, "feature-noise", static_cast<uint64_t>(i)));
            if (c.features.standardize) hds::seg::standardize_features(f);
            f.shape.erase(f.shape.begin());  // store as [p,D,H,W]
            hds::io::save_volume(out + "/" + feat_name(i) + ".hdv", f);
            ++written;
        }
    finish_run(out, c);
    std::cout << "extracted features for " << written << " volumes into " << out << "\n";
}

void cmd_train_seg(const RunConfig& c, const std::string& out) {
    const auto manifest = load_manifest(c.dataset.dir);
    const auto names = split_names(manifest, "train");
    const auto images = load_images(c.dataset.dir, names);
    std::vector<hds::Tensor> feats;
    for (const auto& n : names) feats.push_back(load_features(c.features.dir, name_index(n)));
    fs::create_directories(out);

    std::ofstream log(out + "/loss_log.txt", std::ios::trunc);
    std::vector<hds::seg::SegEpochLog> history;
    auto model = hds::seg::train_segmentation(
        images, feats, seg_config(c), &history, [&](const hds::seg::SegEpochLog& e) {
            log << "epoch " << e.epoch << " lv " << fmt(e.lv) << " lf " << fmt(e.lf) << " linv "
                << fmt(e.linv) << " total " << fmt(e.total) << " score " << fmt(e.score) << "\n";
        });
    hds::save_checkpoint(out + "/seg.hdt", model.unet.params.items);
    finish_run(out, c);
    std::cout << "segmentation trained for " << c.segmentation.epochs << " epochs, best score "
              << [&] {
                     double best = 0;
                     for (const auto& e : history) best = std::max(best, e.score);
                     return best;
                 }()
              << "\n";
}

void cmd_evaluate(const RunConfig& c, const std::string& out) {
    const auto manifest = load_manifest(c.dataset.dir);
    const auto names = split_names(manifest, c.eval.split);
    const auto gts = load_level_labels(c.dataset.dir, names, c.eval.level);
    fs::create_directories(out);

    hds::metrics::EvalReport rep;
    std::string source;
    if (c.eval.stub_perfect) {
        const int64_t kk = c.eval.level == 1 ? 2 : c.eval.level == 2 ? 4 : 8;
        rep = hds::metrics::evaluate_masks(gts, gts, kk, c.eval.level, c.eval.spacing);
        source = "stub-perfect";
    } else {
        require_artifact(c.segmentation.checkpoint, "segmentation checkpoint");
        auto model = hds::seg::make_seg_model(seg_config(c));
        hds::load_checkpoint(c.segmentation.checkpoint, model.unet.params.items);
        const auto images = load_images(c.dataset.dir, names);
        std::vector<hds::metrics::LabelVolume> preds;
        for (const auto& img : images)
            preds.push_back(hds::metrics::argmax_mask(model.predict(img)));
        rep = hds::metrics::evaluate_masks(preds, gts, c.segmentation.k, c.eval.level,
                                           c.eval.spacing);
        source = "segmentation model";
    }
    write_report(out, c, rep, names, source);
    finish_run(out, c);
}

void cmd_baseline(const RunConfig& c, const std::string& out) {
    const auto manifest = load_manifest(c.dataset.dir);
    const auto names = split_names(manifest, c.eval.split);
    const auto gts = load_level_labels(c.dataset.dir, names, c.eval.level);
    fs::create_directories(out);

    std::vector<hds::metrics::LabelVolume> preds;
    for (const auto& name : names) {
        const int64_t i = name_index(name);
        hds::Tensor input;
        if (c.baseline.input == "intensity")
            input = hds::io::load_volume(c.dataset.dir + "/" + name + ".hdv");
        else
            input = load_features(c.features.dir, i);
        preds.push_back(hds::km::kmeans_segment(
            input, c.segmentation.k,
            hds::substream_seed(c.seed, "baseline", static_cast<uint64_t>(i))));
    }
    const auto rep =
        hds::metrics::evaluate_masks(preds, gts, c.segmentation.k, c.eval.level, c.eval.spacing);
    write_report(out, c, rep, names, c.baseline.input + " k-means baseline");
    finish_run(out, c);
}

void cmd_export_slices(const std::string& input, const std::string& axis,
                       const std::vector<int64_t>& indices, const std::string& out) {
    require_artifact(input, "input volume");
    if (axis.size() != 1 || (axis != "z" && axis != "y" && axis != "x"))
        throw hds::cfg::ConfigError("axis must be z, y or x");
    fs::create_directories(out);
    const std::string stem = fs::path(input).stem().string();
    const auto dtype = hds::io::peek_dtype(input);
    for (int64_t idx : indices) {
        const std::string base = out + "/" + stem + "_" + axis + std::to_string(idx);
        try {
            if (dtype == hds::io::VolDType::F32)
                hds::io::write_slice_pgm(base + ".pgm", hds::io::load_volume(input), axis[0], idx);
            else
                hds::io::write_slice_ppm(base + ".ppm", hds::io::load_labels(input), axis[0], idx);
        } catch (const hds::ShapeError& e) {
            throw hds::cfg::ConfigError(e.what());  // bad axis/index is a usage error
        }
        std::cout << "wrote " << base << (dtype == hds::io::VolDType::F32 ? ".pgm" : ".ppm")
                  << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hdseg: unsupervised 3D structure discovery pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, slice_input, slice_axis = "z";
    std::vector<int64_t> slice_indices;
    int64_t seed_override = -1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_option("--out", out_dir, "output directory")->required();
        sub->add_option("--seed", seed_override, "override the config seed");
    };
    auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
    auto* tdf = app.add_subcommand("train-diffusion", "train the denoising diffusion model");
    auto* ext = app.add_subcommand("extract-features", "extract decoder-stage features");
    auto* tsg = app.add_subcommand("train-seg", "train the segmentation network");
    auto* evl = app.add_subcommand("evaluate", "evaluate a model against ground truth");
    auto* bas = app.add_subcommand("baseline", "run the k-means baseline");
    for (auto* sub : {gen, tdf, ext, tsg, evl, bas}) add_common(sub);

    auto* exp = app.add_subcommand("export-slices", "export 2D slices as PGM/PPM images");
    exp->add_option("--input", slice_input, "volume or label file")->required();
    exp->add_option("--axis", slice_axis, "slice axis: z, y or x");
    exp->add_option("--index", slice_indices, "slice indices")->required();
    exp->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (exp->parsed()) {
            cmd_export_slices(slice_input, slice_axis, slice_indices, out_dir);
            return 0;
        }
        RunConfig cfg = hds::cfg::load_config(config_path);
        if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
        if (gen->parsed()) cmd_generate(cfg, out_dir);
        else if (tdf->parsed()) cmd_train_diffusion(cfg, out_dir);
        else if (ext->parsed()) cmd_extract_features(cfg, out_dir);
        else if (tsg->parsed()) cmd_train_seg(cfg, out_dir);
        else if (evl->parsed()) cmd_evaluate(cfg, out_dir);
        else if (bas->parsed()) cmd_baseline(cfg, out_dir);
        return 0;
    } catch (const hds::cfg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing prerequisite: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
}
