#include "vsdsr/i3ds.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/metrics.hpp"
#include "vsdsr/paths.hpp"

namespace vsdsr {

Method method_from_string(const std::string& s) {
    if (s == "vsd_lora_spaced") return Method::vsd_lora_spaced;
    if (s == "vsd_lora") return Method::vsd_lora;
    if (s == "sds") return Method::sds;
    if (s == "identity") return Method::identity;
    throw ConfigError("unknown method '" + s + "' (want vsd_lora_spaced|vsd_lora|sds|identity)");
}

std::string to_string(Method m) {
    switch (m) {
    case Method::vsd_lora_spaced: return "vsd_lora_spaced";
    case Method::vsd_lora: return "vsd_lora";
    case Method::sds: return "sds";
    default: return "identity";
    }
}

void I3DSConfig::validate(int T) const {
    if (rounds < 1) throw ConfigError("i3ds: rounds must be >= 1");
    if (max_sync_iter < 1) throw ConfigError("i3ds: max_sync_iter must be >= 1");
    if (ray_batch < 1) throw ConfigError("i3ds: ray_batch must be >= 1");
    if (!(sync_lr > 0.0)) throw ConfigError("i3ds: sync_lr must be positive");
    if (sr_grid_res < 2) throw ConfigError("i3ds: sr_grid_res must be >= 2");
    if (render_samples < 1) throw ConfigError("i3ds: render_samples must be >= 1");
    if (adapter_rank < 1) throw ConfigError("i3ds: adapter_rank must be >= 1");
    if (!(far > near) || !(near > 0.0)) throw ConfigError("i3ds: need 0 < near < far");
    vsd.validate(T);
}

nlohmann::json RoundReport::to_json() const {
    nlohmann::json j;
    j["round"] = round;
    j["view_final_vsd_loss"] = view_final_vsd_loss;
    j["sync_loss_first"] = sync_loss.empty() ? 0.0 : sync_loss.front();
    j["sync_loss_last"] = sync_loss.empty() ? 0.0 : sync_loss.back();
    j["sync_iters"] = sync_loss.size();
    j["sync_loss"] = sync_loss;
    j["mean_target_psnr"] = std::isnan(mean_target_psnr) ? nlohmann::json(nullptr)
                                                         : nlohmann::json(mean_target_psnr);
    j["render_psnr"] =
        std::isnan(render_psnr) ? nlohmann::json(nullptr) : nlohmann::json(render_psnr);
    j["upscale_seconds"] = upscale_seconds;
    j["sync_seconds"] = sync_seconds;
    return j;
}

RoundReport RoundReport::from_json(const nlohmann::json& j) {
    RoundReport r;
    r.round = j.at("round").get<int>();
    r.view_final_vsd_loss = j.at("view_final_vsd_loss").get<std::vector<real>>();
    r.sync_loss = j.at("sync_loss").get<std::vector<real>>();
    r.mean_target_psnr = j.at("mean_target_psnr").is_null()
                             ? std::numeric_limits<real>::quiet_NaN()
                             : j.at("mean_target_psnr").get<real>();
    r.render_psnr = j.at("render_psnr").is_null() ? std::numeric_limits<real>::quiet_NaN()
                                                  : j.at("render_psnr").get<real>();
    r.upscale_seconds = j.at("upscale_seconds").get<real>();
    r.sync_seconds = j.at("sync_seconds").get<real>();
    return r;
}

std::vector<Image> upscale_stage(const RadianceField& field, const MultiViewDataset& dataset,
                                 const DenoiserBundle& denoiser, const CodecParams& codec,
                                 AdapterSet* adapters, Adam* lora_opt, const I3DSConfig& cfg,
                                 RngStream& rng, const std::filesystem::path& round_dir,
                                 RoundReport* report) {
    cfg.validate(denoiser.sched.T);
    const bool lora = cfg.method == Method::vsd_lora_spaced || cfg.method == Method::vsd_lora;
    if (lora && (!adapters || !lora_opt))
        throw ConfigError("upscale_stage: LoRA method needs adapters and their optimizer");
    if (dataset.lr_images.empty()) throw ConfigError("upscale_stage: dataset has no LR images");

    const uint64_t field_h0 = field.param_hash();
    const int lr_w = dataset.lr_images[0].w, lr_h = dataset.lr_images[0].h;
    const int hr_w = dataset.has_hr() ? dataset.hr_width() : 4 * lr_w;
    const real pose_scale = static_cast<real>(lr_w) / hr_w;
    const int prompt_id = denoiser.vocab.id_of(dataset.scene_id);

    Container latents;
    latents.meta["kind"] = "refined_latents";
    if (!round_dir.empty()) {
        std::filesystem::create_directories(round_dir / "targets");
        std::filesystem::create_directories(round_dir / "traces");
    }

    std::vector<Image> targets(dataset.train_indices.size());
    for (size_t k = 0; k < dataset.train_indices.size(); k++) {
        const int vi = dataset.train_indices[k];
        try {
            RenderOptions opts;
            opts.n_samples = cfg.render_samples;
            opts.near = cfg.near;
            opts.far = cfg.far;
            opts.seed = mix_seed(rng.seed(), 0x200 + static_cast<uint64_t>(vi));
            opts.background = cfg.background;
            Image lr_render =
                render_image(field, dataset.poses[vi].scaled(pose_scale), lr_w, lr_h, opts);
            lr_render.clamp01();

            LatentImage x0 = encode(upsample_x4(lr_render), codec);
            x0.source_view = vi;
            const int class_id = azimuth_bucket(dataset.poses[vi]);
            RngStream vrng = rng.child(0x100 + static_cast<uint64_t>(vi));
            std::vector<VSDTraceRow> trace;
            ResidualLatent h;
            LatentImage refined;
            switch (cfg.method) {
            case Method::vsd_lora_spaced:
            case Method::vsd_lora:
                refined = vsd_upscale(x0, dataset.lr_images[vi], prompt_id, class_id, denoiser,
                                      *adapters, *lora_opt, codec, cfg.vsd, vrng, &trace, &h);
                break;
            case Method::sds:
                refined = sds_upscale(x0, dataset.lr_images[vi], prompt_id, class_id, denoiser,
                                      codec, cfg.vsd, vrng, &trace, &h);
                break;
            case Method::identity: {
                VSDConfig id_cfg = cfg.vsd;
                id_cfg.M = 0;
                refined = sds_upscale(x0, dataset.lr_images[vi], prompt_id, class_id, denoiser,
                                      codec, id_cfg, vrng, &trace, &h);
                break;
            }
            }
            targets[k] = decode(refined, codec);
            if (report)
                report->view_final_vsd_loss.push_back(trace.empty() ? 0.0 : trace.back().l_vsd);
            if (!round_dir.empty()) {
                save_png(targets[k], round_dir / "targets" / view_png_name(vi));
                write_trace_csv(round_dir / "traces" / view_trace_name(vi), trace);
                latents.tensors[view_png_name(vi).substr(0, 4)] = refined.data;
            }
        } catch (const NumericalError& e) {
            throw NumericalError("upscale_stage view " + std::to_string(vi) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError("upscale_stage view " + std::to_string(vi) + ": " + e.what());
        }
    }

    if (report && dataset.has_hr()) {
        real acc = 0;
        for (size_t k = 0; k < targets.size(); k++)
            acc += psnr(targets[k], dataset.hr_images[dataset.train_indices[k]]);
        report->mean_target_psnr = acc / static_cast<real>(targets.size());
    }
    if (!round_dir.empty()) latents.save(round_dir / "latents.bin");
    if (field.param_hash() != field_h0)
        throw NumericalError("upscale_stage: field parameters changed during upscaling");
    return targets;
}

std::vector<real> sync_stage(RadianceField& field, const std::vector<Image>& targets,
                             const std::vector<CameraPose>& poses, const I3DSConfig& cfg,
                             RngStream& rng) {
    if (targets.empty()) throw ConfigError("sync_stage: no targets");
    if (targets.size() != poses.size())
        throw ShapeError("sync_stage: " + std::to_string(targets.size()) + " targets vs " +
                         std::to_string(poses.size()) + " poses");
    for (const Image& t : targets)
        if (!t.same_dims(targets[0]))
            throw ShapeError("sync_stage: target dimensions are inconsistent");

    FieldTrainer trainer(field);
    RenderOptions opts;
    opts.n_samples = cfg.render_samples;
    opts.near = cfg.near;
    opts.far = cfg.far;
    opts.background = cfg.background;

    std::vector<real> trace;
    trace.reserve(cfg.max_sync_iter);
    real init_mean = 0;
    int diverged = 0;
    for (int it = 0; it < cfg.max_sync_iter; it++) {
        const int v = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(targets.size()) - 1));
        RayBatch rays = sample_rays(targets[v], poses[v], cfg.ray_batch, rng, cfg.near, cfg.far);
        opts.seed = mix_seed(rng.seed(), 0x7000000ULL + static_cast<uint64_t>(it));
        const real loss = trainer.fit_step(rays, cfg.sync_lr, opts);
        trace.push_back(loss);
        if (it < 10)
            init_mean = (init_mean * it + loss) / (it + 1);
        else if (loss > 10.0 * init_mean) {
            if (++diverged >= 100)
                throw NumericalError("sync_stage diverged: loss " + std::to_string(loss) +
                                     " vs initial " + std::to_string(init_mean) + " at iter " +
                                     std::to_string(it));
        } else {
            diverged = 0;
        }
    }
    return trace;
}

namespace {

void save_adam(const Adam& opt, const std::filesystem::path& path) {
    Container c;
    c.meta["kind"] = "adam_state";
    c.meta["t"] = opt.t_;
    for (size_t i = 0; i < opt.m.size(); i++) {
        c.tensors["m" + std::to_string(i)] = opt.m[i];
        c.tensors["v" + std::to_string(i)] = opt.v[i];
    }
    c.save(path);
}

void load_adam(Adam& opt, const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "adam_state")
        throw IngestionError("not an optimizer-state file: " + path.string());
    opt.t_ = c.meta.at("t").get<int64_t>();
    for (size_t i = 0; i < opt.m.size(); i++) {
        opt.m[i] = c.at("m" + std::to_string(i));
        opt.v[i] = c.at("v" + std::to_string(i));
    }
}

real seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<real>(std::chrono::steady_clock::now() - t0).count();
}

} // namespace

std::pair<RadianceField, std::vector<RoundReport>>
run_i3ds(RadianceField lr_field, const MultiViewDataset& dataset, const DenoiserBundle& denoiser,
         const CodecParams& codec, const I3DSConfig& cfg, const std::filesystem::path& run_dir,
         bool verbose) {
    I3DSConfig rc = cfg;
    rc.near = dataset.near;
    rc.far = dataset.far;
    rc.validate(denoiser.sched.T);
    dataset.validate();
    const bool lora = rc.method == Method::vsd_lora_spaced || rc.method == Method::vsd_lora;
    if (rc.method == Method::vsd_lora) rc.vsd.lora_interval = 1;

    const auto ckpt_dir = run_dir / kCheckpointDir;
    std::filesystem::create_directories(ckpt_dir);

    RadianceField field = std::move(lr_field);
    AdapterSet adapters;
    std::optional<Adam> lora_opt;
    auto fresh_adapters = [&] {
        adapters = AdapterSet();
        attach_default_adapters(adapters, rc.adapter_rank, rc.adapter_scale,
                                mix_seed(rc.seed, 0xADAB));
        lora_opt.emplace(adapters.params());
    };
    if (lora) fresh_adapters();

    // resume at the last completed round boundary
    std::vector<RoundReport> reports;
    int start_round = 0;
    for (int r = rc.rounds - 1; r >= 0; r--) {
        const auto field_ck = ckpt_dir / field_round_name(r);
        const auto report_file = run_dir / round_dir_name(r) / kRunReportFile;
        const auto ad_ck = ckpt_dir / adapters_round_name(r);
        const auto opt_ck = ckpt_dir / lora_opt_round_name(r);
        if (std::filesystem::exists(field_ck) && std::filesystem::exists(report_file) &&
            (!lora || (std::filesystem::exists(ad_ck) && std::filesystem::exists(opt_ck)))) {
            field = RadianceField::load(field_ck);
            if (lora) {
                adapters = AdapterSet::load(ad_ck);
                lora_opt.emplace(adapters.params());
                load_adam(*lora_opt, opt_ck);
            }
            for (int p = 0; p <= r; p++) {
                std::ifstream in(run_dir / round_dir_name(p) / kRunReportFile);
                if (!in)
                    throw IngestionError("missing completed-round report for round " +
                                         std::to_string(p));
                nlohmann::json j;
                in >> j;
                reports.push_back(RoundReport::from_json(j));
            }
            start_round = r + 1;
            break;
        }
    }
    if (verbose && start_round > 0)
        std::printf("resuming at round %d/%d\n", start_round, rc.rounds);

    std::vector<CameraPose> train_poses;
    for (int vi : dataset.train_indices) train_poses.push_back(dataset.poses[vi]);

    for (int round = start_round; round < rc.rounds; round++) {
        RngStream round_rng = RngStream(rc.seed).child(1000 + static_cast<uint64_t>(round));
        RoundReport rr;
        rr.round = round;
        const auto rdir = run_dir / round_dir_name(round);
        std::filesystem::create_directories(rdir);

        if (lora && rc.reset_adapters_each_round && round > 0) fresh_adapters();

        auto t0 = std::chrono::steady_clock::now();
        RngStream up_rng = round_rng.child(1);
        std::vector<Image> targets =
            upscale_stage(field, dataset, denoiser, codec, lora ? &adapters : nullptr,
                          lora ? &*lora_opt : nullptr, rc, up_rng, rdir, &rr);
        rr.upscale_seconds = seconds_since(t0);

        if (field.res() < rc.sr_grid_res) field = field.upsampled(rc.sr_grid_res);

        const uint64_t ad_h0 = lora ? adapters.param_hash() : 0;
        t0 = std::chrono::steady_clock::now();
        RngStream sync_rng = round_rng.child(2);
        try {
            rr.sync_loss = sync_stage(field, targets, train_poses, rc, sync_rng);
        } catch (const NumericalError& e) {
            throw NumericalError("round " + std::to_string(round) + ": " + e.what());
        }
        rr.sync_seconds = seconds_since(t0);
        if (lora && adapters.param_hash() != ad_h0)
            throw NumericalError("round " + std::to_string(round) +
                                 ": adapters changed during sync_stage");

        if (dataset.has_hr() && !dataset.eval_indices.empty()) {
            RenderOptions opts;
            opts.n_samples = rc.render_samples;
            opts.near = rc.near;
            opts.far = rc.far;
            opts.background = rc.background;
            real acc = 0;
            for (int vi : dataset.eval_indices) {
                opts.seed = mix_seed(rc.seed, 0xEE00 + static_cast<uint64_t>(vi));
                Image render = render_image(field, dataset.poses[vi], dataset.hr_width(),
                                            dataset.hr_height(), opts);
                render.clamp01();
                acc += psnr(render, dataset.hr_images[vi]);
            }
            rr.render_psnr = acc / static_cast<real>(dataset.eval_indices.size());
        }

        field.save(ckpt_dir / field_round_name(round));
        if (lora) {
            adapters.save(ckpt_dir / adapters_round_name(round));
            save_adam(*lora_opt, ckpt_dir / lora_opt_round_name(round));
        }
        std::ofstream out(rdir / kRunReportFile);
        out << rr.to_json().dump(2) << "\n";
        reports.push_back(rr);
        if (verbose)
            std::printf("round %d done  upscale %.1fs  sync %.1fs  target_psnr %.2f  "
                        "render_psnr %.2f\n",
                        round, rr.upscale_seconds, rr.sync_seconds, rr.mean_target_psnr,
                        rr.render_psnr);
    }

    field.save(run_dir / kRunFieldFile);
    return {std::move(field), std::move(reports)};
}

} // namespace vsdsr
