#include "vsdsr/config.hpp"

#include <fstream>

#include "vsdsr/errors.hpp"
#include "vsdsr/paths.hpp"
#include "vsdsr/vsd_sr.hpp"

namespace vsdsr {

namespace {
void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                 const char* where) {
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (k == a) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(std::string("unknown config key '") + k + "' in " + where);
    }
}

nlohmann::json vec3_json(const Eigen::Vector3d& v) {
    return nlohmann::json::array({v.x(), v.y(), v.z()});
}

Eigen::Vector3d vec3_from(const nlohmann::json& j, const char* where) {
    if (!j.is_array() || j.size() != 3)
        throw ConfigError(std::string(where) + " must be a 3-element array");
    return {j[0].get<real>(), j[1].get<real>(), j[2].get<real>()};
}
} // namespace

void RunConfig::validate() const {
    method_from_string(method); // throws on a bad name
    if (scene.source != "synthetic" && scene.source != "llff")
        throw ConfigError("scene.source must be synthetic or llff");
    if (scene.source == "synthetic") {
        if (scene.grid_res < 2) throw ConfigError("scene.grid_res must be >= 2");
        if (scene.n_views < 2) throw ConfigError("scene.n_views must be >= 2");
        if (scene.hr_size < 8 || scene.hr_size % 4 != 0)
            throw ConfigError("scene.hr_size must be a multiple of 4, >= 8");
    } else if (scene.llff_dir.empty()) {
        throw ConfigError("scene.llff_dir required for llff scenes");
    }
    if (pretrain.scene_seeds.empty()) throw ConfigError("pretrain.scene_seeds must be non-empty");
    if (pretrain.codec_epochs < 1) throw ConfigError("pretrain.codec_epochs must be >= 1");
    if (pretrain.denoiser_steps < 1) throw ConfigError("pretrain.denoiser_steps must be >= 1");
    if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
    if (!(pretrain.lr > 0)) throw ConfigError("pretrain.lr must be positive");
    if (fit_lr.steps < 1) throw ConfigError("fit_lr.steps must be >= 1");
    if (fit_lr.grid_res < 2) throw ConfigError("fit_lr.grid_res must be >= 2");
    if (fit_lr.n_samples < 1) throw ConfigError("fit_lr.n_samples must be >= 1");
    if (fit_lr.ray_batch < 1) throw ConfigError("fit_lr.ray_batch must be >= 1");
    if (!(fit_lr.lr > 0)) throw ConfigError("fit_lr.lr must be positive");
    if (fit_lr.checkpoint_every < 1) throw ConfigError("fit_lr.checkpoint_every must be >= 1");
    if (T < 2) throw ConfigError("schedule.T must be >= 2");
    if (out_dir.empty() || data_dir.empty() || ckpt_dir.empty())
        throw ConfigError("out_dir, data_dir, and ckpt_dir must be set");
    i3ds.validate(T);
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["method"] = method;
    j["out_dir"] = out_dir.string();
    j["data_dir"] = data_dir.string();
    j["ckpt_dir"] = ckpt_dir.string();
    j["background"] = vec3_json(background);
    j["schedule"] = {{"kind", to_string(schedule)}, {"T", T}};
    j["scene"] = {{"source", scene.source},
                  {"synthetic_seed", scene.synthetic_seed},
                  {"grid_res", scene.grid_res},
                  {"n_views", scene.n_views},
                  {"hr_size", scene.hr_size},
                  {"llff_dir", scene.llff_dir.string()}};
    j["pretrain"] = {{"scene_seeds", pretrain.scene_seeds},
                     {"codec_epochs", pretrain.codec_epochs},
                     {"denoiser_steps", pretrain.denoiser_steps},
                     {"batch_size", pretrain.batch_size},
                     {"lr", pretrain.lr}};
    j["fit_lr"] = {{"steps", fit_lr.steps},
                   {"grid_res", fit_lr.grid_res},
                   {"n_samples", fit_lr.n_samples},
                   {"ray_batch", fit_lr.ray_batch},
                   {"lr", fit_lr.lr},
                   {"checkpoint_every", fit_lr.checkpoint_every}};
    j["vsd"] = {{"M", i3ds.vsd.M},
                {"eta1", i3ds.vsd.eta1},
                {"eta2", i3ds.vsd.eta2},
                {"lora_interval", i3ds.vsd.lora_interval},
                {"omega", to_string(i3ds.vsd.omega)},
                {"t_min", i3ds.vsd.t_min},
                {"t_max", i3ds.vsd.t_max},
                {"loss_mode", to_string(i3ds.vsd.loss_mode)}};
    j["i3ds"] = {{"rounds", i3ds.rounds},
                 {"max_sync_iter", i3ds.max_sync_iter},
                 {"ray_batch", i3ds.ray_batch},
                 {"sync_lr", i3ds.sync_lr},
                 {"sr_grid_res", i3ds.sr_grid_res},
                 {"render_samples", i3ds.render_samples},
                 {"reset_adapters_each_round", i3ds.reset_adapters_each_round},
                 {"adapter_rank", i3ds.adapter_rank},
                 {"adapter_scale", i3ds.adapter_scale}};
    j["metrics"] = {{"niqe_model", niqe_model.string()}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    expect_keys(j,
                {"seed", "method", "out_dir", "data_dir", "ckpt_dir", "background", "schedule",
                 "scene", "pretrain", "fit_lr", "vsd", "i3ds", "metrics"},
                "config root");
    RunConfig c;
    c.seed = j.value("seed", c.seed);
    c.method = j.value("method", c.method);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.data_dir = j.value("data_dir", c.data_dir.string());
    c.ckpt_dir = j.value("ckpt_dir", c.ckpt_dir.string());
    if (j.contains("background")) c.background = vec3_from(j["background"], "background");
    if (j.contains("schedule")) {
        const auto& s = j["schedule"];
        expect_keys(s, {"kind", "T"}, "schedule");
        c.schedule = schedule_kind_from_string(s.value("kind", to_string(c.schedule)));
        c.T = s.value("T", c.T);
    }
    if (j.contains("scene")) {
        const auto& s = j["scene"];
        expect_keys(s, {"source", "synthetic_seed", "grid_res", "n_views", "hr_size", "llff_dir"},
                    "scene");
        c.scene.source = s.value("source", c.scene.source);
        c.scene.synthetic_seed = s.value("synthetic_seed", c.scene.synthetic_seed);
        c.scene.grid_res = s.value("grid_res", c.scene.grid_res);
        c.scene.n_views = s.value("n_views", c.scene.n_views);
        c.scene.hr_size = s.value("hr_size", c.scene.hr_size);
        c.scene.llff_dir = s.value("llff_dir", c.scene.llff_dir.string());
    }
    if (j.contains("pretrain")) {
        const auto& s = j["pretrain"];
        expect_keys(s, {"scene_seeds", "codec_epochs", "denoiser_steps", "batch_size", "lr"},
                    "pretrain");
        if (s.contains("scene_seeds"))
            c.pretrain.scene_seeds = s["scene_seeds"].get<std::vector<uint64_t>>();
        c.pretrain.codec_epochs = s.value("codec_epochs", c.pretrain.codec_epochs);
        c.pretrain.denoiser_steps = s.value("denoiser_steps", c.pretrain.denoiser_steps);
        c.pretrain.batch_size = s.value("batch_size", c.pretrain.batch_size);
        c.pretrain.lr = s.value("lr", c.pretrain.lr);
    }
    if (j.contains("fit_lr")) {
        const auto& s = j["fit_lr"];
        expect_keys(s, {"steps", "grid_res", "n_samples", "ray_batch", "lr", "checkpoint_every"},
                    "fit_lr");
        c.fit_lr.steps = s.value("steps", c.fit_lr.steps);
        c.fit_lr.grid_res = s.value("grid_res", c.fit_lr.grid_res);
        c.fit_lr.n_samples = s.value("n_samples", c.fit_lr.n_samples);
        c.fit_lr.ray_batch = s.value("ray_batch", c.fit_lr.ray_batch);
        c.fit_lr.lr = s.value("lr", c.fit_lr.lr);
        c.fit_lr.checkpoint_every = s.value("checkpoint_every", c.fit_lr.checkpoint_every);
    }
    if (j.contains("vsd")) {
        const auto& s = j["vsd"];
        expect_keys(s, {"M", "eta1", "eta2", "lora_interval", "omega", "t_min", "t_max",
                        "loss_mode"},
                    "vsd");
        VSDConfig& v = c.i3ds.vsd;
        v.M = s.value("M", v.M);
        v.eta1 = s.value("eta1", v.eta1);
        v.eta2 = s.value("eta2", v.eta2);
        v.lora_interval = s.value("lora_interval", v.lora_interval);
        v.omega = omega_from_string(s.value("omega", to_string(v.omega)));
        v.t_min = s.value("t_min", v.t_min);
        v.t_max = s.value("t_max", v.t_max);
        v.loss_mode = loss_mode_from_string(s.value("loss_mode", to_string(v.loss_mode)));
    }
    if (j.contains("i3ds")) {
        const auto& s = j["i3ds"];
        expect_keys(s, {"rounds", "max_sync_iter", "ray_batch", "sync_lr", "sr_grid_res",
                        "render_samples", "reset_adapters_each_round", "adapter_rank",
                        "adapter_scale"},
                    "i3ds");
        c.i3ds.rounds = s.value("rounds", c.i3ds.rounds);
        c.i3ds.max_sync_iter = s.value("max_sync_iter", c.i3ds.max_sync_iter);
        c.i3ds.ray_batch = s.value("ray_batch", c.i3ds.ray_batch);
        c.i3ds.sync_lr = s.value("sync_lr", c.i3ds.sync_lr);
        c.i3ds.sr_grid_res = s.value("sr_grid_res", c.i3ds.sr_grid_res);
        c.i3ds.render_samples = s.value("render_samples", c.i3ds.render_samples);
        c.i3ds.reset_adapters_each_round =
            s.value("reset_adapters_each_round", c.i3ds.reset_adapters_each_round);
        c.i3ds.adapter_rank = s.value("adapter_rank", c.i3ds.adapter_rank);
        c.i3ds.adapter_scale = s.value("adapter_scale", c.i3ds.adapter_scale);
    }
    if (j.contains("metrics")) {
        const auto& s = j["metrics"];
        expect_keys(s, {"niqe_model"}, "metrics");
        c.niqe_model = s.value("niqe_model", c.niqe_model.string());
    }
    c.i3ds.method = method_from_string(c.method);
    c.i3ds.seed = c.seed;
    c.i3ds.background = c.background;
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << canonical();
}

std::string RunConfig::canonical() const { return to_json().dump(2) + "\n"; }

std::filesystem::path RunConfig::niqe_model_path() const {
    if (!niqe_model.empty()) return niqe_model;
    return default_data_root() / "niqe_pristine.bin";
}

FitFieldConfig RunConfig::fit_field_config() const {
    FitFieldConfig f;
    f.grid_res = fit_lr.grid_res;
    f.n_samples = fit_lr.n_samples;
    f.ray_batch = fit_lr.ray_batch;
    f.lr = fit_lr.lr;
    f.seed = seed;
    f.background = background;
    f.checkpoint_every = fit_lr.checkpoint_every;
    return f;
}

} // namespace vsdsr
