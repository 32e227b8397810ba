#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vsdsr/diffusion_core.hpp"
#include "vsdsr/i3ds.hpp"
#include "vsdsr/radiance_field.hpp"

namespace vsdsr {

struct SceneConfig {
    std::string source = "synthetic"; // synthetic | llff
    uint64_t synthetic_seed = 7;
    int grid_res = 64;
    int n_views = 20;
    int hr_size = 128;
    std::filesystem::path llff_dir;
};

struct PretrainSection {
    std::vector<uint64_t> scene_seeds{101, 102, 103, 104, 105, 106};
    int codec_epochs = 40;
    int denoiser_steps = 2500;
    int batch_size = 2;
    real lr = 1e-3;
};

struct FitLRSection {
    int steps = 3000;
    int grid_res = 64;
    int n_samples = 64;
    int ray_batch = 4096;
    real lr = 0.05;
    int checkpoint_every = 1000;
};

// Whole-pipeline configuration: one JSON file, flags override, serialized
// verbatim into every run directory. Unknown keys are rejected.
struct RunConfig {
    uint64_t seed = 7;
    std::string method = "vsd_lora_spaced";
    std::filesystem::path out_dir = "runs/run0";
    std::filesystem::path data_dir = "data/scene";
    std::filesystem::path ckpt_dir = "checkpoints";
    ScheduleKind schedule = ScheduleKind::cosine;
    int T = 1000;
    Eigen::Vector3d background{1, 1, 1};
    SceneConfig scene;
    PretrainSection pretrain;
    FitLRSection fit_lr;
    I3DSConfig i3ds; // holds the VSD section as i3ds.vsd
    std::filesystem::path niqe_model; // empty: <data root>/niqe_pristine.bin

    void validate() const;
    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string canonical() const;

    // derived paths and configs
    std::filesystem::path codec_path() const { return ckpt_dir / "codec.bin"; }
    std::filesystem::path denoiser_path() const { return ckpt_dir / "denoiser.bin"; }
    std::filesystem::path field_lr_path() const { return ckpt_dir / "field_lr.bin"; }
    std::filesystem::path niqe_model_path() const;
    FitFieldConfig fit_field_config() const;
};

} // namespace vsdsr
