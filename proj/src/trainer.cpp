#include "tensorf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "tensorf/metrics.hpp"

namespace tensorf {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (total_steps < 0) throw std::invalid_argument("TrainConfig: total_steps must be >= 0");
    if (n0 < 2 || final_n < n0)
        throw std::invalid_argument("TrainConfig: need 2 <= n0 <= final_n");
    for (std::size_t i = 0; i < upsample_steps.size(); ++i) {
        if (upsample_steps[i] >= total_steps)
            throw std::invalid_argument("TrainConfig: upsample steps must be < total_steps");
        if (i > 0 && upsample_steps[i] <= upsample_steps[i - 1])
            throw std::invalid_argument("TrainConfig: upsample steps must be strictly increasing");
    }
    for (int a = 0; a < 3; ++a)
        if (ranks.density[a] < 1 || ranks.appearance[a] < 1)
            throw std::invalid_argument("TrainConfig: component counts must be >= 1");
    if (feature_count < 1) throw std::invalid_argument("TrainConfig: feature_count must be >= 1");
    if (trace_interval < 1) throw std::invalid_argument("TrainConfig: trace_interval must be >= 1");
}

std::vector<std::string> preset_names() {
    return {"VM-48", "VM-96", "VM-192", "VM-384", "CP-384", "VM-48-FF", "VM-96-FF"};
}

TrainConfig preset(const std::string& name) {
    TrainConfig cfg;
    cfg.loss = {RegKind::L1, 4e-4, 0.1, false};
    if (name == "VM-48") {
        cfg.ranks = {{8, 8, 8}, {8, 8, 8}};
    } else if (name == "VM-96") {
        cfg.ranks = {{8, 8, 8}, {24, 24, 24}};
    } else if (name == "VM-192") {
        cfg.ranks = {{16, 16, 16}, {48, 48, 48}};
    } else if (name == "VM-384") {
        cfg.ranks = {{32, 32, 32}, {96, 96, 96}};
    } else if (name == "CP-384") {
        cfg.mode = FieldMode::CP;
        cfg.ranks = {{96, 96, 96}, {288, 288, 288}};
    } else if (name == "VM-48-FF") {
        cfg.ranks = {{4, 4, 16}, {4, 4, 16}};
        cfg.loss = {RegKind::TV, 1.0, 0.1, false};
    } else if (name == "VM-96-FF") {
        cfg.ranks = {{8, 8, 32}, {8, 8, 32}};
        cfg.loss = {RegKind::TV, 1.0, 0.1, false};
    } else {
        std::string names;
        for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
        throw std::invalid_argument("unknown preset \"" + name + "\" (available: " + names + ")");
    }
    return cfg;
}

std::vector<double> upsample_schedule(int n0, int n, int stage_count) {
    if (n < n0) throw std::invalid_argument("upsample_schedule: need n >= n0");
    const double lo = 3.0 * std::log(static_cast<double>(n0));
    const double hi = 3.0 * std::log(static_cast<double>(n));
    std::vector<double> budgets;
    budgets.reserve(static_cast<std::size_t>(stage_count));
    for (int k = 1; k <= stage_count; ++k)
        budgets.push_back(std::exp(lo + (hi - lo) * (static_cast<double>(k) / stage_count)));
    return budgets;
}

RaySet build_ray_set(const Dataset& dataset, double ndc_near) {
    RaySet set;
    const std::size_t per_frame =
        static_cast<std::size_t>(dataset.camera.width) * dataset.camera.height;
    set.rays.reserve(per_frame * dataset.frames.size());
    set.targets.reserve(per_frame * dataset.frames.size());
    Camera cam = dataset.camera;
    for (const Frame& frame : dataset.frames) {
        cam.pose = frame.pose;
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x) {
                Rayd ray = generate_ray(cam, x, y);
                if (dataset.forward_facing)
                    ray = ndc_transform(ray, cam.width, cam.height, cam.focal, ndc_near);
                Ray<float> rf;
                rf.origin = ray.origin.cast<float>();
                rf.direction = ray.direction.cast<float>();
                rf.t_near = static_cast<float>(ray.t_near);
                rf.t_far = static_cast<float>(ray.t_far);
                set.rays.push_back(rf);
                set.targets.push_back({frame.image.at(x, y, 0), frame.image.at(x, y, 1),
                                       frame.image.at(x, y, 2)});
            }
    }
    return set;
}

namespace {

/// Counter-driven Fisher-Yates shuffle, reproducible across platforms.
void shuffle_indices(std::vector<std::uint32_t>& order, std::uint64_t seed, std::uint64_t epoch) {
    std::uint64_t s = splitmix64(seed ^ splitmix64(0x7a5e ^ epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
        s = splitmix64(s);
        const std::size_t j = static_cast<std::size_t>(s % i);
        std::swap(order[i - 1], order[j]);
    }
}

double batch_psnr(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

void write_trace_line(std::ostream& out, const TraceRecord& rec) {
    out << std::setprecision(10) << "{\"step\":" << rec.step << ",\"loss\":" << rec.loss
        << ",\"l2\":" << rec.l2 << ",\"reg\":" << rec.reg << ",\"train_psnr\":" << rec.train_psnr
        << ",\"lr_factors\":" << rec.lr_factors << ",\"lr_decoder\":" << rec.lr_decoder
        << ",\"wall_seconds\":" << rec.wall_seconds << ",\"resolution\":[" << rec.resolution.x
        << "," << rec.resolution.y << "," << rec.resolution.z << "]}\n";
}

/// Zeroes Adam moments for entries whose arrays changed size, keeping the
/// moments of everything untouched by the resolution change.
void sync_adam(AdamState<float>& adam, const ParamSet<float>& params) {
    for (std::size_t i = 0; i < params.entries.size(); ++i)
        if (adam.m[i].size() != params.entries[i].size)
            adam.reset_entry(i, params.entries[i].size);
}

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, std::ostream* trace_out) {
    cfg.validate();
    if (dataset.frames.empty()) throw std::invalid_argument("train: dataset has no frames");

    BBoxd bbox;
    bool bbox_provided;
    if (dataset.forward_facing) {
        bbox = {{-1, -1, -1}, {1, 1, 1}};  // NDC cube
        bbox_provided = true;
    } else if (dataset.scene_bbox) {
        bbox = *dataset.scene_bbox;
        bbox_provided = true;
    } else {
        bbox = cfg.default_bbox;
        bbox_provided = false;
    }

    double budget = std::pow(static_cast<double>(cfg.n0), 3.0);
    const auto budgets =
        upsample_schedule(cfg.n0, cfg.final_n, static_cast<int>(cfg.upsample_steps.size()));

    TrainResult result;
    result.model = make_model<float>(cfg.mode, cfg.decoder, {bbox, derive_resolution(bbox, budget)},
                                     cfg.ranks, cfg.feature_count, cfg.seed);
    Model<float>& model = result.model;
    model.density_shift = static_cast<float>(cfg.density_shift);

    ThreadPool pool(cfg.deterministic ? 1 : default_thread_count());
    const int workers = pool.thread_count();

    ParamSet<float> params = collect_params(model);
    AdamState<float> adam;
    adam.init(params);
    GradSet<float> grads(params);
    std::vector<GradSet<float>> worker_grads(static_cast<std::size_t>(workers));
    std::vector<RenderWorkspace<float>> worker_ws(static_cast<std::size_t>(workers));

    const RaySet rays = build_ray_set(dataset, cfg.ndc_near);
    if (rays.size() == 0) throw std::invalid_argument("train: dataset has no pixels");
    std::vector<std::uint32_t> order(rays.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    std::uint64_t epoch = 0;
    std::size_t cursor = order.size();  // forces a shuffle before the first batch

    std::vector<Ray<float>> batch_rays;
    std::vector<Vec3f> batch_targets;
    batch_rays.reserve(static_cast<std::size_t>(cfg.batch_size));
    batch_targets.reserve(static_cast<std::size_t>(cfg.batch_size));

    const LrSchedule schedule{cfg.lr_factors, cfg.lr_decoder, cfg.total_steps,
                              cfg.lr_final_factor};

    double step_size = nominal_step_size(model.density.geom, cfg.max_samples);
    const auto t_start = std::chrono::steady_clock::now();

    auto refresh_occupancy = [&]() {
        result.occupancy = update_occupancy(
            model.density, occupancy_resolution(model.density.geom.resolution),
            cfg.occupancy_alpha_threshold, step_size, cfg.density_shift);
        if (!result.occupancy.any_occupied())
            throw std::runtime_error("train: occupancy refresh found an entirely empty field");
        result.has_occupancy = true;
    };

    for (int t = 0; t < cfg.total_steps; ++t) {
        bool resized = false;
        const auto stage_it =
            std::find(cfg.upsample_steps.begin(), cfg.upsample_steps.end(), t);
        if (stage_it != cfg.upsample_steps.end()) {
            budget = budgets[static_cast<std::size_t>(stage_it - cfg.upsample_steps.begin())];
            upsample_model(model, derive_resolution(model.density.geom.bbox, budget));
            resized = true;
        }
        if (resized) step_size = nominal_step_size(model.density.geom, cfg.max_samples);

        if (std::find(cfg.occupancy_steps.begin(), cfg.occupancy_steps.end(), t) !=
            cfg.occupancy_steps.end()) {
            if (resized) params = collect_params(model);
            refresh_occupancy();
        }

        if (t == cfg.bbox_shrink_step && !bbox_provided && result.has_occupancy) {
            const BBoxd shrunk = tight_bbox(result.occupancy);
            resample_model_bbox(model, shrunk, derive_resolution(shrunk, budget));
            resized = true;
            step_size = nominal_step_size(model.density.geom, cfg.max_samples);
            params = collect_params(model);
            refresh_occupancy();
        }

        if (resized) {
            params = collect_params(model);
            sync_adam(adam, params);
            grads.resize(params);
        }

        if (cursor + 1 > order.size()) {
            shuffle_indices(order, cfg.seed, epoch);
            ++epoch;
            cursor = 0;
        }
        const std::size_t take =
            std::min(static_cast<std::size_t>(cfg.batch_size), order.size() - cursor);
        batch_rays.clear();
        batch_targets.clear();
        for (std::size_t i = 0; i < take; ++i) {
            const std::uint32_t idx = order[cursor + i];
            batch_rays.push_back(rays.rays[idx]);
            batch_targets.push_back(rays.targets[idx]);
        }
        cursor += take;

        RenderOptions<float> opts;
        opts.step_size = static_cast<float>(step_size);
        opts.background = {1, 1, 1};
        opts.density_shift = static_cast<float>(cfg.density_shift);
        opts.alpha_cutoff = static_cast<float>(cfg.alpha_cutoff);
        opts.termination_tau = static_cast<float>(cfg.termination_tau);
        opts.jitter = cfg.jitter;
        opts.jitter_seed = cfg.seed;

        grads.zero();
        const double l2_scale = 1.0 / (3.0 * static_cast<double>(take));
        const BatchResult batch = backward_render(
            model, std::span<const Ray<float>>(batch_rays),
            std::span<const Vec3f>(batch_targets), opts,
            result.has_occupancy ? &result.occupancy : nullptr, cfg.loss, params, grads, pool,
            worker_grads, worker_ws, l2_scale, static_cast<std::uint64_t>(t));

        const LrPair lr = lr_at(t, schedule);
        adam_step(params, grads, adam, static_cast<float>(lr.factors),
                  static_cast<float>(lr.decoder));

        if (t % cfg.trace_interval == 0 || t == cfg.total_steps - 1) {
            TraceRecord rec;
            rec.step = t;
            rec.loss = batch.loss;
            rec.l2 = batch.l2;
            rec.reg = batch.reg;
            rec.train_psnr = batch_psnr(batch.l2);
            rec.lr_factors = lr.factors;
            rec.lr_decoder = lr.decoder;
            rec.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            rec.resolution = model.density.geom.resolution;
            result.trace.push_back(rec);
            if (trace_out) write_trace_line(*trace_out, rec);
        }
    }

    if (cfg.final_train_eval && cfg.total_steps > 0) {
        const auto eval_opts = eval_render_options(cfg, model.density.geom);
        const EvalResult scores =
            evaluate(model, dataset, eval_opts, result.has_occupancy ? &result.occupancy : nullptr,
                     pool, cfg.ndc_near);
        result.final_train_psnr = scores.mean_psnr;
        result.final_train_ssim = scores.mean_ssim;
        if (trace_out) {
            const double wall =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            *trace_out << std::setprecision(10) << "{\"step\":" << cfg.total_steps
                       << ",\"final_train_psnr\":" << scores.mean_psnr
                       << ",\"final_train_ssim\":" << scores.mean_ssim
                       << ",\"wall_seconds\":" << wall << "}\n";
        }
    }
    return result;
}

RenderOptions<float> eval_render_options(const TrainConfig& cfg, const GridGeometry& geom) {
    RenderOptions<float> opts;
    opts.step_size = static_cast<float>(nominal_step_size(geom, cfg.max_samples));
    opts.background = {1, 1, 1};
    opts.density_shift = static_cast<float>(cfg.density_shift);
    opts.alpha_cutoff = static_cast<float>(cfg.alpha_cutoff);
    opts.termination_tau = static_cast<float>(cfg.termination_tau);
    opts.jitter = false;
    return opts;
}

namespace {

template <typename PixelFn>
void for_each_pixel_parallel(const Model<float>& model, const Camera& cam,
                             const RenderOptions<float>& opts, const OccupancyVolume* occ,
                             ThreadPool& pool, bool ndc, double ndc_near, PixelFn&& fn) {
    const std::size_t total = static_cast<std::size_t>(cam.width) * cam.height;
    pool.parallel_ranges(total, [&](int, std::size_t begin, std::size_t end) {
        RenderScratch<float> scratch;
        MlpWorkspace<float> mlp_ws;
        for (std::size_t i = begin; i < end; ++i) {
            const int x = static_cast<int>(i % static_cast<std::size_t>(cam.width));
            const int y = static_cast<int>(i / static_cast<std::size_t>(cam.width));
            Rayd rd = generate_ray(cam, x, y);
            if (ndc) rd = ndc_transform(rd, cam.width, cam.height, cam.focal, ndc_near);
            Ray<float> ray;
            ray.origin = rd.origin.cast<float>();
            ray.direction = rd.direction.cast<float>();
            const auto res = render_pixel(
                model.density, model.appearance,
                [&](const float* feat, const Vec3f& dir) { return model.decode(feat, dir, mlp_ws); },
                ray, opts, occ, 0.0f, scratch);
            fn(x, y, res);
        }
    });
}

}  // namespace

ImageF render_view(const Model<float>& model, const Camera& cam, const RenderOptions<float>& opts,
                   const OccupancyVolume* occ, ThreadPool& pool, bool ndc, double ndc_near) {
    ImageF out = ImageF::zeros(cam.width, cam.height);
    for_each_pixel_parallel(model, cam, opts, occ, pool, ndc, ndc_near,
                            [&](int x, int y, const PixelResult<float>& res) {
                                for (int c = 0; c < 3; ++c)
                                    out.at(x, y, c) = std::clamp(res.rgb[c], 0.0f, 1.0f);
                            });
    return out;
}

ImageF render_depth_view(const Model<float>& model, const Camera& cam,
                         const RenderOptions<float>& opts, const OccupancyVolume* occ,
                         ThreadPool& pool, bool ndc, double ndc_near) {
    ImageF out = ImageF::zeros(cam.width, cam.height);
    std::vector<float> depth(static_cast<std::size_t>(cam.width) * cam.height, 0.0f);
    for_each_pixel_parallel(model, cam, opts, occ, pool, ndc, ndc_near,
                            [&](int x, int y, const PixelResult<float>& res) {
                                depth[static_cast<std::size_t>(y) * cam.width + x] = res.depth;
                            });
    const auto [lo_it, hi_it] = std::minmax_element(depth.begin(), depth.end());
    const float lo = *lo_it, hi = *hi_it;
    const float span = hi > lo ? hi - lo : 1.0f;
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x) {
            const float v = (depth[static_cast<std::size_t>(y) * cam.width + x] - lo) / span;
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = v;
        }
    return out;
}

EvalResult evaluate(const Model<float>& model, const Dataset& dataset,
                    const RenderOptions<float>& opts, const OccupancyVolume* occ,
                    ThreadPool& pool, double ndc_near) {
    EvalResult result;
    Camera cam = dataset.camera;
    for (const Frame& frame : dataset.frames) {
        cam.pose = frame.pose;
        const ImageF rendered =
            render_view(model, cam, opts, occ, pool, dataset.forward_facing, ndc_near);
        EvalRecord rec;
        rec.name = frame.path;
        rec.psnr = psnr(frame.image, rendered);
        rec.ssim = ssim(frame.image, rendered);
        result.views.push_back(rec);
        result.mean_psnr += rec.psnr;
        result.mean_ssim += rec.ssim;
    }
    if (!result.views.empty()) {
        result.mean_psnr /= static_cast<double>(result.views.size());
        result.mean_ssim /= static_cast<double>(result.views.size());
    }
    return result;
}

}  // namespace tensorf
