#include "vsdsr/pipeline.hpp"

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <unistd.h>

#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"
#include "vsdsr/i3ds.hpp"
#include "vsdsr/paths.hpp"
#include "vsdsr/scene_data.hpp"

namespace vsdsr {

namespace fs = std::filesystem;

DirLock::DirLock(const fs::path& dir, bool force) : path_(dir / kRunLockFile) {
    fs::create_directories(dir);
    if (fs::exists(path_)) {
        bool stale = false;
        if (!force) {
            std::ifstream in(path_);
            std::string word;
            long pid = -1;
            if ((in >> word >> pid) && word == "pid" && pid > 0)
                stale = ::kill(static_cast<pid_t>(pid), 0) == -1 && errno == ESRCH;
        }
        if (!force && !stale)
            throw ConfigError("run directory " + dir.string() +
                              " is locked by another active command; remove " + path_.string() +
                              " or pass --force if that process is gone");
        fs::remove(path_);
    }
    std::ofstream out(path_);
    if (!out) throw ConfigError("cannot create lock file " + path_.string());
    out << "pid " << ::getpid() << "\n";
    held_ = true;
}

DirLock::~DirLock() {
    if (held_) {
        std::error_code ec;
        fs::remove(path_, ec);
    }
}

void write_status(const fs::path& run_dir, const std::string& state, const std::string& stage,
                  const std::string& error) {
    nlohmann::json j;
    j["state"] = state;
    j["stage"] = stage;
    j["error"] = error.empty() ? nlohmann::json() : nlohmann::json(error);
    j["time"] = utc_timestamp();
    std::ofstream out(run_dir / kRunStatusFile);
    out << j.dump(2) << "\n";
}

namespace {

uint64_t hash_file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IngestionError("cannot read " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return fnv1a64(bytes.data(), bytes.size());
}

std::vector<MultiViewDataset> pretrain_ensemble(const RunConfig& cfg) {
    std::vector<MultiViewDataset> out;
    out.reserve(cfg.pretrain.scene_seeds.size());
    for (uint64_t s : cfg.pretrain.scene_seeds) {
        auto [gt, ds] = generate_synthetic_scene(s, cfg.scene.grid_res, cfg.scene.n_views,
                                                 cfg.scene.hr_size);
        (void)gt;
        out.push_back(std::move(ds));
    }
    return out;
}

MultiViewDataset load_scene(const RunConfig& cfg) {
    if (!fs::exists(cfg.data_dir))
        throw IngestionError("dataset directory " + cfg.data_dir.string() +
                             " does not exist; run `generate` first");
    return load_dataset(cfg.data_dir).dataset;
}

} // namespace

int run_generate(const RunConfig& cfg, bool force) {
    const fs::path dir = cfg.data_dir;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force)
            throw ConfigError("dataset directory " + dir.string() +
                              " is not empty; pass --force to overwrite");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);

    if (cfg.scene.source == "synthetic") {
        auto [gt, ds] = generate_synthetic_scene(cfg.scene.synthetic_seed, cfg.scene.grid_res,
                                                 cfg.scene.n_views, cfg.scene.hr_size);
        save_dataset(ds, dir, &gt);
    } else {
        MultiViewDataset ds = load_llff(cfg.scene.llff_dir);
        save_dataset(ds, dir, nullptr);
    }

    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());

    nlohmann::json manifest;
    manifest["scene_source"] = cfg.scene.source;
    manifest["files"] = nlohmann::json::array();
    for (const auto& f : files) {
        nlohmann::json row;
        row["path"] = fs::relative(f, dir).generic_string();
        row["bytes"] = static_cast<int64_t>(fs::file_size(f));
        row["fnv1a64"] = hash_hex(hash_file_bytes(f));
        manifest["files"].push_back(row);
    }
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << "\n";
    return static_cast<int>(files.size()) + 1;
}

void run_pretrain(const RunConfig& cfg, bool verbose) {
    fs::create_directories(cfg.ckpt_dir);

    CodecParams codec;
    if (fs::exists(cfg.codec_path())) {
        if (verbose) std::cout << "codec checkpoint present, skipping: " << cfg.codec_path() << "\n";
        codec = CodecParams::load(cfg.codec_path());
    } else {
        auto datasets = pretrain_ensemble(cfg);
        codec = train_codec(datasets, cfg.pretrain.codec_epochs, cfg.seed, verbose);
        codec.save(cfg.codec_path());
    }

    DenoiserBundle bundle;
    if (fs::exists(cfg.denoiser_path())) {
        if (verbose)
            std::cout << "denoiser checkpoint present, skipping: " << cfg.denoiser_path() << "\n";
        bundle = DenoiserBundle::load(cfg.denoiser_path());
    } else {
        auto datasets = pretrain_ensemble(cfg);
        PretrainConfig pc;
        pc.batch_size = cfg.pretrain.batch_size;
        pc.lr = cfg.pretrain.lr;
        pc.schedule = cfg.schedule;
        pc.T = cfg.T;
        pc.verbose = verbose;
        bundle = pretrain_denoiser(codec, datasets, cfg.pretrain.denoiser_steps, cfg.seed, pc);
        bundle.save(cfg.denoiser_path());
    }

    nlohmann::json hashes;
    hashes["codec"] = hash_hex(codec.weight_hash());
    hashes["denoiser"] = hash_hex(bundle.params.weight_hash());
    hashes["codec_val_mse"] = codec.final_val_mse;
    hashes["denoiser_val_mse"] = bundle.params.final_val_mse;
    std::ofstream out(cfg.ckpt_dir / "hashes.json");
    out << hashes.dump(2) << "\n";
}

void run_fit_lr(const RunConfig& cfg, bool verbose) {
    if (fs::exists(cfg.field_lr_path())) {
        if (verbose)
            std::cout << "LR field present, skipping: " << cfg.field_lr_path() << "\n";
        return;
    }
    MultiViewDataset ds = load_scene(cfg);
    FitFieldConfig fc = cfg.fit_field_config();
    fc.verbose = verbose;
    fc.checkpoint_dir = cfg.ckpt_dir / "fit_lr";
    RadianceField field = fit_lr_nerf(ds, cfg.fit_lr.steps, fc);
    fs::create_directories(cfg.ckpt_dir);
    field.save(cfg.field_lr_path());
}

MetricReport run_superres(const RunConfig& cfg, bool force, bool verbose) {
    const fs::path run_dir = cfg.out_dir;
    fs::create_directories(run_dir);
    DirLock lock(run_dir, force);

    const fs::path cfg_path = run_dir / kRunConfigFile;
    const std::string canon = cfg.canonical();
    if (fs::exists(cfg_path)) {
        std::ifstream in(cfg_path);
        std::string existing((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
        if (existing != canon) {
            if (!force)
                throw ConfigError("run directory " + run_dir.string() +
                                  " holds a different config; pass --force to restart it");
            for (const auto& e : fs::directory_iterator(run_dir)) {
                if (e.path().filename() == kRunLockFile) continue;
                fs::remove_all(e.path());
            }
        }
    }
    {
        std::ofstream out(cfg_path);
        out << canon;
    }

    try {
        write_status(run_dir, "running", "load");
        cfg.validate();
        if (!fs::exists(cfg.codec_path()) || !fs::exists(cfg.denoiser_path()) ||
            !fs::exists(cfg.field_lr_path()))
            throw IngestionError("missing checkpoints (need " + cfg.codec_path().string() + ", " +
                                 cfg.denoiser_path().string() + ", " +
                                 cfg.field_lr_path().string() +
                                 "); run `pretrain` and `fit-lr` first");
        CodecParams codec = CodecParams::load(cfg.codec_path());
        DenoiserBundle bundle = DenoiserBundle::load(cfg.denoiser_path());
        if (bundle.sched.T != cfg.T || bundle.sched.kind != cfg.schedule)
            throw ConfigError("denoiser checkpoint was pretrained with schedule " +
                              to_string(bundle.sched.kind) + " T=" +
                              std::to_string(bundle.sched.T) + " but the config asks for " +
                              to_string(cfg.schedule) + " T=" +
                              std::to_string(cfg.T));
        RadianceField field_lr = RadianceField::load(cfg.field_lr_path());
        MultiViewDataset ds = load_scene(cfg);
        NiqeModel niqe_model = NiqeModel::load(cfg.niqe_model_path());

        I3DSConfig rc = cfg.i3ds;
        rc.method = method_from_string(cfg.method);
        rc.seed = cfg.seed;
        rc.background = cfg.background;

        write_status(run_dir, "running", "i3ds");
        run_i3ds(std::move(field_lr), ds, bundle, codec, rc, run_dir, verbose);

        write_status(run_dir, "running", "evaluate");
        MetricReport report = evaluate_run(run_dir, ds, codec, niqe_model);
        report.save(run_dir / kRunReportFile);

        write_status(run_dir, "complete", "done");
        return report;
    } catch (const std::exception& e) {
        write_status(run_dir, "failed", "superres", e.what());
        throw;
    }
}

namespace {

// Caches shared inputs across run dirs so a 4-method comparison loads the
// dataset/codec/NIQE model once each.
struct EvalCache {
    std::map<std::string, std::shared_ptr<MultiViewDataset>> datasets;
    std::map<std::string, std::shared_ptr<CodecParams>> codecs;
    std::map<std::string, std::shared_ptr<NiqeModel>> niqe;

    const MultiViewDataset& dataset(const fs::path& p) {
        auto& slot = datasets[p.string()];
        if (!slot) slot = std::make_shared<MultiViewDataset>(load_dataset(p).dataset);
        return *slot;
    }
    const CodecParams& codec(const fs::path& p) {
        auto& slot = codecs[p.string()];
        if (!slot) slot = std::make_shared<CodecParams>(CodecParams::load(p));
        return *slot;
    }
    const NiqeModel& niqe_model(const fs::path& p) {
        auto& slot = niqe[p.string()];
        if (!slot) slot = std::make_shared<NiqeModel>(NiqeModel::load(p));
        return *slot;
    }
};

MetricReport failed_row(const fs::path& dir) {
    MetricReport r;
    r.method = dir.filename().empty() ? dir.string() : dir.filename().string();
    try {
        RunConfig cfg = RunConfig::load(dir / kRunConfigFile);
        r.method = cfg.method;
    } catch (const std::exception&) {
    }
    r.config_hash = "FAILED";
    r.n_views = 0;
    r.timestamp = utc_timestamp();
    return r;
}

} // namespace

std::vector<MetricReport> run_evaluate(const std::vector<fs::path>& run_dirs,
                                       std::vector<std::string>* failures) {
    EvalCache cache;
    std::vector<MetricReport> rows;
    for (const auto& dir : run_dirs) {
        try {
            RunConfig cfg = RunConfig::load(dir / kRunConfigFile);
            const MultiViewDataset& ds = cache.dataset(cfg.data_dir);
            const CodecParams& codec = cache.codec(cfg.codec_path());
            const NiqeModel& model = cache.niqe_model(cfg.niqe_model_path());
            MetricReport report = evaluate_run(dir, ds, codec, model);
            report.save(dir / kRunReportFile);
            rows.push_back(std::move(report));
        } catch (const std::exception& e) {
            if (failures) failures->push_back(dir.string() + ": " + e.what());
            rows.push_back(failed_row(dir));
        }
    }
    return rows;
}

std::vector<MetricReport> read_reports(const std::vector<fs::path>& run_dirs,
                                       std::vector<std::string>* failures) {
    std::vector<MetricReport> rows;
    for (const auto& dir : run_dirs) {
        try {
            rows.push_back(MetricReport::load(dir / kRunReportFile));
        } catch (const std::exception& e) {
            if (failures) failures->push_back(dir.string() + ": " + e.what());
            rows.push_back(failed_row(dir));
        }
    }
    return rows;
}

} // namespace vsdsr
