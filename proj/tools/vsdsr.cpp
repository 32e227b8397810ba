// Pipeline driver: generate / pretrain / fit-lr / superres / evaluate / compare.
// One JSON config is the source of truth; command-line flags override it.
// Exit codes: 0 success, 2 config error, 3 ingestion error, 4 numerical abort.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>

#include "vsdsr/config.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/paths.hpp"
#include "vsdsr/pipeline.hpp"

using namespace vsdsr;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::optional<uint64_t> seed;
    std::optional<std::string> method, schedule, omega, loss_mode, source;
    std::optional<std::string> out_dir, data_dir, ckpt_dir, llff_dir, niqe_model;
    std::optional<int> T, rounds, sync_iters, sr_grid_res, render_samples;
    std::optional<int> vsd_steps, lora_interval, t_min, t_max;
    std::optional<double> eta1, eta2, sync_lr;
    std::optional<uint64_t> scene_seed;
    std::optional<int> grid_res, n_views, hr_size;
    std::optional<int> fit_steps, pretrain_steps, codec_epochs;
};

void add_common(CLI::App* cmd, std::string& config_path, Overrides& o) {
    cmd->add_option("-c,--config", config_path, "JSON config file (defaults apply when omitted)");
    cmd->add_option("--seed", o.seed, "global seed");
    cmd->add_option("--method", o.method, "vsd_lora_spaced | vsd_lora | sds | identity");
    cmd->add_option("--out-dir", o.out_dir, "run directory");
    cmd->add_option("--data-dir", o.data_dir, "scene dataset directory");
    cmd->add_option("--ckpt-dir", o.ckpt_dir, "checkpoint directory");
    cmd->add_option("--schedule", o.schedule, "cosine | linear");
    cmd->add_option("--timesteps", o.T, "diffusion steps T");
    cmd->add_option("--rounds", o.rounds, "alternation rounds");
    cmd->add_option("--sync-iters", o.sync_iters, "field-sync iterations per round");
    cmd->add_option("--sr-grid-res", o.sr_grid_res, "field resolution after upgrade");
    cmd->add_option("--render-samples", o.render_samples, "quadrature samples per ray");
    cmd->add_option("--vsd-steps", o.vsd_steps, "distillation steps M per view");
    cmd->add_option("--lora-interval", o.lora_interval, "adapter update spacing k");
    cmd->add_option("--eta1", o.eta1, "latent step size");
    cmd->add_option("--eta2", o.eta2, "adapter learning rate");
    cmd->add_option("--sync-lr", o.sync_lr, "field-sync learning rate");
    cmd->add_option("--omega", o.omega, "constant | one_minus_alpha_bar | snr");
    cmd->add_option("--t-min", o.t_min, "distillation timestep floor (-1: default)");
    cmd->add_option("--t-max", o.t_max, "distillation timestep ceiling (-1: default)");
    cmd->add_option("--loss-mode", o.loss_mode, "score_shortcut | literal_l1");
    cmd->add_option("--source", o.source, "scene source: synthetic | llff");
    cmd->add_option("--scene-seed", o.scene_seed, "synthetic scene seed");
    cmd->add_option("--grid-res", o.grid_res, "ground-truth / LR field resolution");
    cmd->add_option("--n-views", o.n_views, "camera count");
    cmd->add_option("--hr-size", o.hr_size, "HR image side");
    cmd->add_option("--llff-dir", o.llff_dir, "LLFF scene directory");
    cmd->add_option("--fit-steps", o.fit_steps, "LR NeRF fit steps");
    cmd->add_option("--pretrain-steps", o.pretrain_steps, "denoiser pretrain steps");
    cmd->add_option("--codec-epochs", o.codec_epochs, "codec training epochs");
    cmd->add_option("--niqe-model", o.niqe_model, "quality-model file");
}

RunConfig make_config(const std::string& config_path, const Overrides& o) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.method) cfg.method = *o.method;
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.data_dir) cfg.data_dir = *o.data_dir;
    if (o.ckpt_dir) cfg.ckpt_dir = *o.ckpt_dir;
    if (o.schedule) cfg.schedule = schedule_kind_from_string(*o.schedule);
    if (o.T) cfg.T = *o.T;
    if (o.rounds) cfg.i3ds.rounds = *o.rounds;
    if (o.sync_iters) cfg.i3ds.max_sync_iter = *o.sync_iters;
    if (o.sr_grid_res) cfg.i3ds.sr_grid_res = *o.sr_grid_res;
    if (o.render_samples) cfg.i3ds.render_samples = *o.render_samples;
    if (o.vsd_steps) cfg.i3ds.vsd.M = *o.vsd_steps;
    if (o.lora_interval) cfg.i3ds.vsd.lora_interval = *o.lora_interval;
    if (o.eta1) cfg.i3ds.vsd.eta1 = *o.eta1;
    if (o.eta2) cfg.i3ds.vsd.eta2 = *o.eta2;
    if (o.sync_lr) cfg.i3ds.sync_lr = *o.sync_lr;
    if (o.omega) cfg.i3ds.vsd.omega = omega_from_string(*o.omega);
    if (o.t_min) cfg.i3ds.vsd.t_min = *o.t_min;
    if (o.t_max) cfg.i3ds.vsd.t_max = *o.t_max;
    if (o.loss_mode) cfg.i3ds.vsd.loss_mode = loss_mode_from_string(*o.loss_mode);
    if (o.source) cfg.scene.source = *o.source;
    if (o.scene_seed) cfg.scene.synthetic_seed = *o.scene_seed;
    if (o.grid_res) {
        cfg.scene.grid_res = *o.grid_res;
        cfg.fit_lr.grid_res = *o.grid_res;
    }
    if (o.n_views) cfg.scene.n_views = *o.n_views;
    if (o.hr_size) cfg.scene.hr_size = *o.hr_size;
    if (o.llff_dir) cfg.scene.llff_dir = *o.llff_dir;
    if (o.fit_steps) cfg.fit_lr.steps = *o.fit_steps;
    if (o.pretrain_steps) cfg.pretrain.denoiser_steps = *o.pretrain_steps;
    if (o.codec_epochs) cfg.pretrain.codec_epochs = *o.codec_epochs;
    if (o.niqe_model) cfg.niqe_model = *o.niqe_model;
    cfg.i3ds.method = method_from_string(cfg.method);
    cfg.i3ds.seed = cfg.seed;
    cfg.i3ds.background = cfg.background;
    cfg.validate();
    return cfg;
}

void print_table(const std::vector<MetricReport>& rows, const std::vector<std::string>& failures,
                 const std::string& csv_path) {
    std::cout << comparison_text(rows);
    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw ConfigError("cannot write " + csv_path);
        out << comparison_csv(rows);
        std::cout << "csv written to " << csv_path << "\n";
    }
    for (const auto& f : failures) std::cerr << "FAILED " << f << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion-guided NeRF super-resolution pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    Overrides o;
    bool force = false;
    bool verbose = false;
    std::vector<std::string> dirs;
    std::string csv_path = "comparison.csv";

    auto* generate = app.add_subcommand("generate", "synthesize or ingest the scene dataset");
    add_common(generate, config_path, o);
    generate->add_flag("--force", force, "overwrite a non-empty dataset directory");

    auto* pretrain = app.add_subcommand("pretrain", "train and freeze codec + denoiser");
    add_common(pretrain, config_path, o);
    pretrain->add_flag("-v,--verbose", verbose, "log training progress");

    auto* fitlr = app.add_subcommand("fit-lr", "fit the low-resolution field");
    add_common(fitlr, config_path, o);
    fitlr->add_flag("-v,--verbose", verbose, "log fitting progress");

    auto* superres = app.add_subcommand("superres", "run the upscale/sync alternation");
    add_common(superres, config_path, o);
    superres->add_flag("--force", force, "restart a run dir whose config differs, steal its lock");
    superres->add_flag("-v,--verbose", verbose, "log per-round progress");

    auto* evaluate = app.add_subcommand("evaluate", "recompute metrics for run dirs");
    evaluate->add_option("dirs", dirs, "run directories")->required()->expected(-1);
    evaluate->add_option("--csv", csv_path, "comparison CSV path (empty: skip)")
        ->capture_default_str();

    auto* compare = app.add_subcommand("compare", "tabulate existing reports without recompute");
    compare->add_option("dirs", dirs, "run directories")->required()->expected(-1);
    compare->add_option("--csv", csv_path, "comparison CSV path (empty: skip)")
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) {
            RunConfig cfg = make_config(config_path, o);
            int n = run_generate(cfg, force);
            std::cout << "wrote " << n << " files to " << cfg.data_dir.string() << "\n";
        } else if (pretrain->parsed()) {
            RunConfig cfg = make_config(config_path, o);
            run_pretrain(cfg, verbose);
            std::cout << "checkpoints ready in " << cfg.ckpt_dir.string() << "\n";
        } else if (fitlr->parsed()) {
            RunConfig cfg = make_config(config_path, o);
            run_fit_lr(cfg, verbose);
            std::cout << "LR field at " << cfg.field_lr_path().string() << "\n";
        } else if (superres->parsed()) {
            RunConfig cfg = make_config(config_path, o);
            MetricReport report = run_superres(cfg, force, verbose);
            std::cout << comparison_text({report});
            std::cout << "run complete: " << cfg.out_dir.string() << "\n";
        } else if (evaluate->parsed()) {
            std::vector<fs::path> paths(dirs.begin(), dirs.end());
            std::vector<std::string> failures;
            auto rows = run_evaluate(paths, &failures);
            print_table(rows, failures, csv_path);
        } else if (compare->parsed()) {
            std::vector<fs::path> paths(dirs.begin(), dirs.end());
            std::vector<std::string> failures;
            auto rows = read_reports(paths, &failures);
            print_table(rows, failures, csv_path);
        }
        return 0;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const IngestionError& e) {
        std::cerr << "ingestion error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
