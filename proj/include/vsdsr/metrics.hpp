#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "vsdsr/image.hpp"
#include "vsdsr/latent_codec.hpp"
#include "vsdsr/scene_data.hpp"

namespace vsdsr {

// 10*log10(max_val^2 / MSE); identical images give +infinity.
real psnr(const Image& a, const Image& b, real max_val = 1.0);

// Pristine multivariate-Gaussian model over NIQE features: 18 per scale, two
// scales. Shipped as a data file; scores are comparable only within this model.
struct NiqeModel {
    Tensor mu;  // [36]
    Tensor cov; // [36,36]
    int patch = 96;
    int n_fit_patches = 0;

    static NiqeModel fit(const std::vector<Image>& pristine, int patch = 96);
    void save(const std::filesystem::path& path) const;
    static NiqeModel load(const std::filesystem::path& path);
};

// 36-feature vector (GGD + 4 AGGD fits of MSCN coefficients, two scales) for
// each complete patch of the image's luminance plane.
std::vector<std::vector<real>> niqe_features(const Image& img, int patch = 96);

// Mahalanobis distance of the image's mean feature vector to the pristine
// model. Requires min(h, w) >= patch.
real niqe(const Image& img, const NiqeModel& model);

// Mean squared distance between codec encoder feature maps, averaged over the
// three encoder stages. Perceptual stand-in; a pseudometric.
real perc_proxy(const Image& a, const Image& b, const CodecParams& codec);

struct MetricReport {
    std::string method;
    real psnr_db = 0;    // +inf: identical; NaN: no ground truth available
    real niqe = 0;
    real perc_proxy = 0; // NaN: no ground truth available
    int n_views = 0;
    std::string config_hash;
    std::string timestamp;

    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path) const;
    static MetricReport load(const std::filesystem::path& path);
};

// Render the held-out views of a completed run's final field and score them.
// PSNR and perc_proxy need ground-truth HR images and are NaN without them;
// NIQE runs on the renders alone.
MetricReport evaluate_run(const std::filesystem::path& run_dir, const MultiViewDataset& dataset,
                          const CodecParams& codec, const NiqeModel& niqe_model);

std::string utc_timestamp();

// Comparison tables, one row per report, sorted by method name.
std::string comparison_csv(const std::vector<MetricReport>& reports);
std::string comparison_text(const std::vector<MetricReport>& reports);

} // namespace vsdsr
