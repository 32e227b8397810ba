#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"
#include "vsdsr/i3ds.hpp"
#include "vsdsr/paths.hpp"

using namespace vsdsr;
using namespace vsdsr::test;

namespace {

struct TinyWorld {
    MultiViewDataset dataset;
    DenoiserBundle bundle;
    CodecParams codec;
    I3DSConfig cfg;

    TinyWorld() {
        dataset = generate_synthetic_scene(41, 16, 6, 32).second;
        bundle.params = DenoiserParams::random_init(4, 42);
        RngStream hr(43);
        hr.fill_uniform(bundle.params.head_w, -0.05, 0.05);
        bundle.sched = make_schedule(ScheduleKind::cosine, 1000);
        bundle.vocab.add(dataset.scene_id);
        codec = CodecParams::random_init(44);

        cfg.rounds = 1;
        cfg.max_sync_iter = 25;
        cfg.vsd.M = 3;
        cfg.vsd.lora_interval = 3;
        cfg.ray_batch = 256;
        cfg.sync_lr = 0.05;
        cfg.sr_grid_res = 20;
        cfg.render_samples = 16;
        cfg.seed = 9;
        cfg.near = dataset.near;
        cfg.far = dataset.far;
    }

    RadianceField blank_field(int res) const { return RadianceField(res, dataset.bbox); }
};

} // namespace

TEST_CASE("method names round trip") {
    for (Method m : {Method::vsd_lora_spaced, Method::vsd_lora, Method::sds, Method::identity})
        CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(method_from_string("bogus"), ConfigError);
}

TEST_CASE("i3ds config validation rejects out-of-range settings") {
    I3DSConfig ok;
    CHECK_NOTHROW(ok.validate(1000));
    I3DSConfig c = ok;
    c.rounds = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.max_sync_iter = -1;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.ray_batch = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.sync_lr = 0.0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.sr_grid_res = 1;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.render_samples = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.adapter_rank = 0;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
    c = ok;
    c.vsd.M = -2;
    CHECK_THROWS_AS(c.validate(1000), ConfigError);
}

TEST_CASE("round reports round trip through JSON") {
    RoundReport r;
    r.round = 3;
    r.view_final_vsd_loss = {0.5, 0.25};
    r.sync_loss = {1.0, 0.75, 0.5};
    r.mean_target_psnr = 27.5;
    r.render_psnr = 24.0;
    r.upscale_seconds = 12.5;
    r.sync_seconds = 3.25;
    RoundReport back = RoundReport::from_json(r.to_json());
    CHECK(back.round == 3);
    CHECK(back.view_final_vsd_loss == r.view_final_vsd_loss);
    CHECK(back.sync_loss == r.sync_loss);
    CHECK(back.mean_target_psnr == r.mean_target_psnr);
    CHECK(back.render_psnr == r.render_psnr);
    CHECK(back.upscale_seconds == r.upscale_seconds);
    CHECK(back.sync_seconds == r.sync_seconds);

    // Reports for runs without ground truth carry NaN metrics.
    RoundReport nan_r;
    nan_r.round = 0;
    RoundReport nan_back = RoundReport::from_json(nan_r.to_json());
    CHECK(std::isnan(nan_back.mean_target_psnr));
    CHECK(std::isnan(nan_back.render_psnr));
}

TEST_CASE("upscale_stage produces one HR target per training view") {
    TinyWorld w;
    RadianceField field = w.blank_field(12);
    const uint64_t field_h0 = field.param_hash();

    for (Method m : {Method::identity, Method::sds}) {
        I3DSConfig cfg = w.cfg;
        cfg.method = m;
        if (m == Method::identity) cfg.vsd.M = 0;
        RngStream rng(100);
        std::vector<Image> targets =
            upscale_stage(field, w.dataset, w.bundle, w.codec, nullptr, nullptr, cfg, rng);
        CHECK(targets.size() == w.dataset.train_indices.size());
        for (const Image& t : targets) {
            CHECK(t.w == w.dataset.hr_width());
            CHECK(t.h == w.dataset.hr_height());
            for (real v : t.v) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    CHECK(field.param_hash() == field_h0);
}

TEST_CASE("upscale_stage trains adapters for LoRA methods and leaves them alone otherwise") {
    TinyWorld w;
    RadianceField field = w.blank_field(12);

    AdapterSet adapters;
    attach_default_adapters(adapters, 4, 1.0, 7);
    Adam opt(adapters.params());
    const uint64_t a_h0 = adapters.param_hash();

    I3DSConfig cfg = w.cfg;
    cfg.method = Method::vsd_lora_spaced;
    RngStream rng(101);
    upscale_stage(field, w.dataset, w.bundle, w.codec, &adapters, &opt, cfg, rng);
    CHECK(adapters.param_hash() != a_h0); // M=3, k=3: one adapter update per view
    CHECK(opt.t() == static_cast<int64_t>(w.dataset.train_indices.size()));

    // LoRA methods refuse to run without adapters.
    RngStream rng2(102);
    CHECK_THROWS_AS(
        upscale_stage(field, w.dataset, w.bundle, w.codec, nullptr, nullptr, cfg, rng2),
        ConfigError);
}

TEST_CASE("upscale_stage writes per-round artifacts when given a directory") {
    TinyWorld w;
    RadianceField field = w.blank_field(12);
    ScratchDir dir("upscale_artifacts");
    I3DSConfig cfg = w.cfg;
    cfg.method = Method::identity;
    cfg.vsd.M = 0;
    RngStream rng(103);
    RoundReport report;
    upscale_stage(field, w.dataset, w.bundle, w.codec, nullptr, nullptr, cfg, rng, dir.path,
                  &report);

    CHECK(std::filesystem::exists(dir.path / "latents.bin"));
    for (int vi : w.dataset.train_indices) {
        CHECK(std::filesystem::exists(dir.path / "targets" / view_png_name(vi)));
        CHECK(std::filesystem::exists(dir.path / "traces" / view_trace_name(vi)));
    }
    CHECK(report.view_final_vsd_loss.size() == w.dataset.train_indices.size());
    CHECK(std::isfinite(report.mean_target_psnr)); // ground truth available
}

TEST_CASE("sync_stage fits the field toward fixed targets") {
    TinyWorld w;
    RadianceField field = w.blank_field(w.cfg.sr_grid_res);
    const uint64_t h0 = field.param_hash();

    // Textured targets far from the blank field's background renders.
    std::vector<Image> targets;
    std::vector<CameraPose> poses;
    for (int vi : w.dataset.train_indices) {
        targets.push_back(w.dataset.hr_images[vi]);
        poses.push_back(w.dataset.poses[vi]);
    }

    I3DSConfig cfg = w.cfg;
    cfg.max_sync_iter = 60;
    RngStream rng(105);
    std::vector<real> trace = sync_stage(field, targets, poses, cfg, rng);
    REQUIRE(trace.size() == 60);
    real first = 0, last = 0;
    for (int i = 0; i < 10; i++) {
        first += trace[i] / 10;
        last += trace[trace.size() - 10 + i] / 10;
    }
    CHECK(last < first);
    CHECK(field.param_hash() != h0);

    CHECK_THROWS_AS(sync_stage(field, {}, {}, cfg, rng), ConfigError);
    std::vector<Image> bad{targets[0], Image(8, 8)};
    std::vector<CameraPose> bad_poses{poses[0], poses[1]};
    CHECK_THROWS_AS(sync_stage(field, bad, bad_poses, cfg, rng), ShapeError);
}

TEST_CASE("run_i3ds writes checkpoints, reports, and the final field") {
    TinyWorld w;
    ScratchDir dir("i3ds_run");
    I3DSConfig cfg = w.cfg;
    cfg.rounds = 2;
    cfg.method = Method::vsd_lora_spaced;

    auto [field, reports] =
        run_i3ds(w.blank_field(12), w.dataset, w.bundle, w.codec, cfg, dir.path);

    CHECK(field.res() == cfg.sr_grid_res);
    REQUIRE(reports.size() == 2);
    for (int r = 0; r < 2; r++) {
        CHECK(reports[r].round == r);
        CHECK(reports[r].sync_loss.size() == static_cast<size_t>(cfg.max_sync_iter));
        CHECK(reports[r].view_final_vsd_loss.size() == w.dataset.train_indices.size());
        CHECK(std::isfinite(reports[r].mean_target_psnr));
        CHECK(std::isfinite(reports[r].render_psnr));
        CHECK(std::filesystem::exists(dir.path / kCheckpointDir / field_round_name(r)));
        CHECK(std::filesystem::exists(dir.path / kCheckpointDir / adapters_round_name(r)));
        CHECK(std::filesystem::exists(dir.path / kCheckpointDir / lora_opt_round_name(r)));
        CHECK(std::filesystem::exists(dir.path / round_dir_name(r) / kRunReportFile));
    }
    CHECK(std::filesystem::exists(dir.path / kRunFieldFile));

    RadianceField reloaded = RadianceField::load(dir.path / kRunFieldFile);
    CHECK(reloaded.param_hash() == field.param_hash());
}

TEST_CASE("run_i3ds resumes at a round boundary with identical results") {
    TinyWorld w;
    I3DSConfig cfg = w.cfg;
    cfg.method = Method::vsd_lora_spaced;

    ScratchDir full_dir("i3ds_full");
    cfg.rounds = 2;
    auto [field_full, reports_full] =
        run_i3ds(w.blank_field(12), w.dataset, w.bundle, w.codec, cfg, full_dir.path);

    // Same configuration stopped after round 0, then continued for round 1.
    ScratchDir resume_dir("i3ds_resume");
    cfg.rounds = 1;
    run_i3ds(w.blank_field(12), w.dataset, w.bundle, w.codec, cfg, resume_dir.path);
    cfg.rounds = 2;
    auto [field_resumed, reports_resumed] =
        run_i3ds(w.blank_field(12), w.dataset, w.bundle, w.codec, cfg, resume_dir.path);

    CHECK(field_resumed.param_hash() == field_full.param_hash());
    REQUIRE(reports_resumed.size() == reports_full.size());
    CHECK(reports_resumed[1].sync_loss == reports_full[1].sync_loss);
    CHECK(reports_resumed[0].view_final_vsd_loss == reports_full[0].view_final_vsd_loss);
}

TEST_CASE("identity and sds methods run without adapter state") {
    TinyWorld w;
    for (Method m : {Method::identity, Method::sds}) {
        ScratchDir dir(std::string("i3ds_") + to_string(m));
        I3DSConfig cfg = w.cfg;
        cfg.method = m;
        if (m == Method::identity) cfg.vsd.M = 0;
        auto [field, reports] =
            run_i3ds(w.blank_field(12), w.dataset, w.bundle, w.codec, cfg, dir.path);
        CHECK(reports.size() == 1);
        CHECK(field.res() == cfg.sr_grid_res);
        CHECK(std::filesystem::exists(dir.path / kCheckpointDir / field_round_name(0)));
        CHECK(!std::filesystem::exists(dir.path / kCheckpointDir / adapters_round_name(0)));
    }
}
