#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "tensorf/checkpoint.hpp"
#include "tensorf/data.hpp"
#include "tensorf/metrics.hpp"
#include "tensorf/runconfig.hpp"
#include "tensorf/trainer.hpp"

namespace fs = std::filesystem;
using namespace tensorf;

namespace {

Dataset load_dataset(const std::string& root, const std::string& split) {
    if (fs::exists(fs::path(root) / ("transforms_" + split + ".json")))
        return load_nerf_synthetic(root, split);
    if (fs::exists(fs::path(root) / "poses_bounds.npy")) return load_llff(root);
    throw std::runtime_error("no transforms_" + split + ".json or poses_bounds.npy under " + root);
}

OccupancyVolume build_occupancy(const Model<float>& model) {
    const double step = nominal_step_size(model.density.geom);
    return update_occupancy(model.density, occupancy_resolution(model.density.geom.resolution),
                            1e-4, step, model.density_shift);
}

RenderOptions<float> checkpoint_render_options(const Model<float>& model) {
    RenderOptions<float> opts;
    opts.step_size = static_cast<float>(nominal_step_size(model.density.geom));
    opts.background = {1, 1, 1};
    opts.density_shift = model.density_shift;
    opts.jitter = false;
    return opts;
}

bool looks_forward_facing(const Model<float>& model) {
    const BBoxd cube{{-1, -1, -1}, {1, 1, 1}};
    return model.density.geom.bbox == cube;
}

int cmd_train(const std::string& config_path, const std::string& out_override,
              std::int64_t seed_override, int deterministic_override) {
    RunConfig rc = load_run_config(config_path);
    if (!out_override.empty()) rc.out = out_override;
    if (seed_override >= 0) rc.train.seed = static_cast<std::uint64_t>(seed_override);
    if (deterministic_override >= 0) rc.train.deterministic = deterministic_override != 0;
    if (rc.dataset.empty())
        throw std::runtime_error(config_path + ": missing key \"dataset\"");

    const Dataset ds = load_dataset(rc.dataset, "train");
    fs::create_directories(rc.out);
    std::ofstream trace((fs::path(rc.out) / "trace.jsonl").string());
    if (!trace) throw std::runtime_error("cannot write trace under " + rc.out);

    std::printf("training: %zu frames of %dx%d, %d steps\n", ds.frames.size(), ds.camera.width,
                ds.camera.height, rc.train.total_steps);
    const TrainResult result = train(ds, rc.train, &trace);

    const std::string ckpt = (fs::path(rc.out) / "model.trfc").string();
    save_checkpoint(ckpt, result.model);
    save_run_config((fs::path(rc.out) / "config.txt").string(), rc);
    if (!result.trace.empty()) {
        const TraceRecord& last = result.trace.back();
        std::printf("final step %d: loss %.6g, train psnr %.2f dB, %.1f s\n", last.step, last.loss,
                    last.train_psnr, last.wall_seconds);
    }
    if (std::isfinite(result.final_train_psnr))
        std::printf("train split: psnr %.2f dB, ssim %.4f\n", result.final_train_psnr,
                    result.final_train_ssim);
    std::printf("checkpoint: %s\n", ckpt.c_str());
    return 0;
}

int cmd_render(const std::string& ckpt_path, const std::string& dataset_root,
               const std::string& split, const std::string& out_dir, const std::string& mode) {
    if (mode != "rgb" && mode != "depth")
        throw std::runtime_error("render mode must be rgb or depth, got \"" + mode + "\"");
    const Model<float> model = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(dataset_root, split);
    if (ds.forward_facing && !looks_forward_facing(model))
        throw std::runtime_error(
            "checkpoint/geometry mismatch: forward-facing dataset but the checkpoint grid is not "
            "in the NDC cube");

    const OccupancyVolume occ = build_occupancy(model);
    const RenderOptions<float> opts = checkpoint_render_options(model);
    ThreadPool pool;
    fs::create_directories(out_dir);

    Camera cam = ds.camera;
    for (std::size_t i = 0; i < ds.frames.size(); ++i) {
        cam.pose = ds.frames[i].pose;
        const ImageF img =
            mode == "rgb"
                ? render_view(model, cam, opts, &occ, pool, ds.forward_facing)
                : render_depth_view(model, cam, opts, &occ, pool, ds.forward_facing);
        const std::string path =
            (fs::path(out_dir) / (mode + "_" + std::to_string(i) + ".png")).string();
        write_png(path, to_image8(img));
        std::printf("wrote %s\n", path.c_str());
    }
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset_root,
             const std::string& split, const std::string& out_dir) {
    const Model<float> model = load_checkpoint(ckpt_path);
    const Dataset ds = load_dataset(dataset_root, split);
    if (ds.forward_facing && !looks_forward_facing(model))
        throw std::runtime_error(
            "checkpoint/geometry mismatch: forward-facing dataset but the checkpoint grid is not "
            "in the NDC cube");

    const OccupancyVolume occ = build_occupancy(model);
    const RenderOptions<float> opts = checkpoint_render_options(model);
    ThreadPool pool;
    const EvalResult result = evaluate(model, ds, opts, &occ, pool);

    for (const EvalRecord& rec : result.views)
        std::printf("%-40s psnr %8.4f  ssim %8.6f\n", rec.name.c_str(), rec.psnr, rec.ssim);
    std::printf("mean over %zu views: psnr %.4f  ssim %.6f\n", result.views.size(),
                result.mean_psnr, result.mean_ssim);

    fs::create_directories(out_dir);
    const std::string results_path = (fs::path(out_dir) / "results.json").string();
    std::ofstream out(results_path);
    if (!out) throw std::runtime_error("cannot write " + results_path);
    out << "{\n  \"views\": [\n";
    for (std::size_t i = 0; i < result.views.size(); ++i) {
        char line[512];
        std::snprintf(line, sizeof(line),
                      "    {\"name\": \"%s\", \"psnr\": %.17g, \"ssim\": %.17g}%s\n",
                      result.views[i].name.c_str(), result.views[i].psnr, result.views[i].ssim,
                      i + 1 < result.views.size() ? "," : "");
        out << line;
    }
    char tail[256];
    std::snprintf(tail, sizeof(tail), "  ],\n  \"mean_psnr\": %.17g,\n  \"mean_ssim\": %.17g\n}\n",
                  result.mean_psnr, result.mean_ssim);
    out << tail;
    std::printf("results: %s\n", results_path.c_str());
    return 0;
}

int cmd_info(const std::string& ckpt_path) {
    const Model<float> model = load_checkpoint(ckpt_path);
    const ModelInfo info = model_info(model);
    const auto bytes = fs::file_size(ckpt_path);

    std::printf("mode: %s\n", info.mode == FieldMode::VM ? "vm" : "cp");
    std::printf("decoder: %s\n", decoder_kind_name(info.decoder));
    std::printf("feature_count: %d\n", info.feature_count);
    std::printf("density_ranks: %d,%d,%d\n", info.density_ranks.x, info.density_ranks.y,
                info.density_ranks.z);
    std::printf("appearance_ranks: %d,%d,%d\n", info.appearance_ranks.x, info.appearance_ranks.y,
                info.appearance_ranks.z);
    std::printf("resolution: %dx%dx%d\n", info.geometry.resolution.x, info.geometry.resolution.y,
                info.geometry.resolution.z);
    std::printf("bbox: [%g, %g, %g] .. [%g, %g, %g]\n", info.geometry.bbox.min.x,
                info.geometry.bbox.min.y, info.geometry.bbox.min.z, info.geometry.bbox.max.x,
                info.geometry.bbox.max.y, info.geometry.bbox.max.z);
    std::printf("parameters: %zu\n", info.parameters);
    std::printf("checkpoint_bytes: %ju\n", static_cast<std::uintmax_t>(bytes));
    std::printf("dense_parameters: %zu\n", info.dense_parameters);
    std::printf("compression: %.4f%%\n", info.compression_percent);
    return 0;
}

int cmd_make_oracle(const std::string& kind_name, std::uint64_t seed, const std::string& out_dir,
                    int train_views, int val_views, int test_views, int width, int height,
                    int resolution, double radius, double angle_x) {
    const OracleKind kind = oracle_kind_from_name(kind_name);
    const OracleScene scene = make_oracle_scene(kind, seed, resolution);
    export_nerf_synthetic(scene, out_dir, train_views, val_views, test_views, width, height,
                          angle_x, radius);
    std::printf("wrote %s dataset (%d train / %d val / %d test views at %dx%d) to %s\n",
                kind_name.c_str(), train_views, val_views, test_views, width, height,
                out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tensorf: factorized radiance-field reconstruction"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt_path, dataset_root;
    std::string split = "test", mode = "rgb";
    std::int64_t seed_override = -1;
    int deterministic_override = -1;

    auto* train_cmd = app.add_subcommand("train", "reconstruct a scene from a config file");
    train_cmd->add_option("--config", config_path, "key=value run configuration")->required();
    train_cmd->add_option("--out", out_dir, "output directory override");
    train_cmd->add_option("--seed", seed_override, "seed override");
    train_cmd->add_flag("--deterministic{1},--no-deterministic{0}", deterministic_override,
                        "force or forbid single-threaded deterministic mode");

    auto* render_cmd = app.add_subcommand("render", "render dataset poses from a checkpoint");
    render_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    render_cmd->add_option("--dataset", dataset_root, "dataset root (poses source)")->required();
    render_cmd->add_option("--split", split, "dataset split (default test)");
    render_cmd->add_option("--out", out_dir, "output directory")->required();
    render_cmd->add_option("--mode", mode, "rgb or depth");

    auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint against a dataset split");
    eval_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
    eval_cmd->add_option("--dataset", dataset_root, "dataset root")->required();
    eval_cmd->add_option("--split", split, "dataset split (default test)");
    eval_cmd->add_option("--out", out_dir, "directory for results.json")->default_val(".");

    auto* info_cmd = app.add_subcommand("info", "describe a checkpoint");
    info_cmd->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();

    std::string oracle_kind = "sphere";
    std::uint64_t oracle_seed = 0;
    int train_views = 40, val_views = 0, test_views = 10;
    int width = 200, height = 200, resolution = 65;
    double radius = 4.0, angle_x = 0.9;
    auto* oracle_cmd = app.add_subcommand("make-oracle", "generate a synthetic oracle dataset");
    oracle_cmd->add_option("--kind", oracle_kind, "sphere, two-blobs, or checker-cube");
    oracle_cmd->add_option("--seed", oracle_seed, "generator seed");
    oracle_cmd->add_option("--out", out_dir, "output directory")->required();
    oracle_cmd->add_option("--train-views", train_views, "training view count");
    oracle_cmd->add_option("--val-views", val_views, "validation view count");
    oracle_cmd->add_option("--test-views", test_views, "test view count");
    oracle_cmd->add_option("--width", width, "image width");
    oracle_cmd->add_option("--height", height, "image height");
    oracle_cmd->add_option("--resolution", resolution, "dense grid nodes per axis");
    oracle_cmd->add_option("--radius", radius, "camera orbit radius");
    oracle_cmd->add_option("--angle-x", angle_x, "horizontal field of view in radians");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed())
            return cmd_train(config_path, out_dir, seed_override, deterministic_override);
        if (render_cmd->parsed())
            return cmd_render(ckpt_path, dataset_root, split, out_dir, mode);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, dataset_root, split, out_dir);
        if (info_cmd->parsed()) return cmd_info(ckpt_path);
        if (oracle_cmd->parsed())
            return cmd_make_oracle(oracle_kind, oracle_seed, out_dir, train_views, val_views,
                                   test_views, width, height, resolution, radius, angle_x);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
