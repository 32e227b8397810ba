#pragma once

#include <filesystem>
#include <json.hpp>
#include <optional>
#include <vector>

#include "vsdsr/radiance_field.hpp"
#include "vsdsr/scene_data.hpp"
#include "vsdsr/vsd_sr.hpp"

namespace vsdsr {

enum class Method { vsd_lora_spaced, vsd_lora, sds, identity };
Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct I3DSConfig {
    int rounds = 4;
    int max_sync_iter = 500;
    VSDConfig vsd;
    int ray_batch = 4096;
    real sync_lr = 0.05;
    int sr_grid_res = 128;  // field upgraded to this before the first sync
    int render_samples = 64;
    Method method = Method::vsd_lora_spaced;
    bool reset_adapters_each_round = false;
    int adapter_rank = 4;
    real adapter_scale = 1.0;
    uint64_t seed = 0;
    Eigen::Vector3d background{1, 1, 1};
    real near = 0.5, far = 5.0; // overwritten from the dataset by run_i3ds

    void validate(int T) const;
};

struct RoundReport {
    int round = -1;
    std::vector<real> view_final_vsd_loss; // last distillation loss per view
    std::vector<real> sync_loss;           // per sync iteration
    real mean_target_psnr = std::numeric_limits<real>::quiet_NaN(); // I_tr vs GT HR
    real render_psnr = std::numeric_limits<real>::quiet_NaN();      // post-sync renders vs GT HR
    real upscale_seconds = 0;
    real sync_seconds = 0;

    nlohmann::json to_json() const;
    static RoundReport from_json(const nlohmann::json& j);
};

// One upscaling pass over all training views: render at LR, 4x upsample,
// encode, refine by the configured method, decode. Adapters/optimizer are only
// touched by the LoRA methods and may be null otherwise. When `round_dir` is
// set, targets, refined latents, and loss traces are written there.
std::vector<Image> upscale_stage(const RadianceField& field, const MultiViewDataset& dataset,
                                 const DenoiserBundle& denoiser, const CodecParams& codec,
                                 AdapterSet* adapters, Adam* lora_opt, const I3DSConfig& cfg,
                                 RngStream& rng, const std::filesystem::path& round_dir = {},
                                 RoundReport* report = nullptr);

// Re-fit the field to the SR targets: max_sync_iter iterations of ray sampling
// + one photometric descent step each. Mutates `field`; returns the per-
// iteration loss trace. Poses must carry intrinsics at the target resolution.
std::vector<real> sync_stage(RadianceField& field, const std::vector<Image>& targets,
                             const std::vector<CameraPose>& poses, const I3DSConfig& cfg,
                             RngStream& rng);

// Full alternation: rounds x (upscale_stage -> sync_stage), with per-round
// artifacts and checkpoints under run_dir, resumable at round boundaries.
std::pair<RadianceField, std::vector<RoundReport>>
run_i3ds(RadianceField lr_field, const MultiViewDataset& dataset, const DenoiserBundle& denoiser,
         const CodecParams& codec, const I3DSConfig& cfg, const std::filesystem::path& run_dir,
         bool verbose = false);

} // namespace vsdsr
