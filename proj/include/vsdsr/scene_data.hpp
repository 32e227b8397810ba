#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vsdsr/camera.hpp"
#include "vsdsr/image.hpp"
#include "vsdsr/radiance_field.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

// Synthetic oracle: direct-valued grids (no activations), trilinear sampling.
class GroundTruthField {
public:
    GroundTruthField() = default;
    GroundTruthField(int res, Bounds bbox);

    Tensor density; // [G,G,G], >= 0
    Tensor color;   // [G,G,G,3], in [0,1]

    int res() const { return res_; }
    const Bounds& bbox() const { return bbox_; }
    void sample(const Eigen::Vector3d& p, real& sigma, Eigen::Vector3d& rgb) const;

    void save(const std::filesystem::path& path) const;
    static GroundTruthField load(const std::filesystem::path& path);

private:
    int res_ = 0;
    Bounds bbox_;
};

struct MultiViewDataset {
    std::vector<Image> hr_images; // empty for real captures
    std::vector<Image> lr_images;
    std::vector<CameraPose> poses; // intrinsics on the HR pixel plane
    std::string scene_id;
    Bounds bbox;
    real near = 0.5;
    real far = 5.0;
    std::vector<int> train_indices;
    std::vector<int> eval_indices;

    size_t n_views() const { return poses.size(); }
    bool has_hr() const { return !hr_images.empty(); }
    int hr_width() const;
    int hr_height() const;
    void validate() const; // throws IngestionError on violated invariants
};

// [OP] generate_synthetic_scene: 3-6 gaussian density blobs with sinusoidal
// color texture, ring of cameras, HR renders + box-downsampled LR pairs.
// Every 5th view goes to the eval split.
std::pair<GroundTruthField, MultiViewDataset> generate_synthetic_scene(uint64_t seed, int grid_res,
                                                                       int n_views, int hr_size);

// [OP] load_llff: `images/*.png` + `poses_bounds.npy` (N x 17). Loaded images
// are treated as the LR layer; intrinsics are stored at 4x (HR convention).
MultiViewDataset load_llff(const std::filesystem::path& dir);

// [OP] downsample_x4: 4x4 box average.
Image downsample_x4(const Image& img);

void save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir,
                  const GroundTruthField* gt = nullptr);

struct DatasetBundle {
    MultiViewDataset dataset;
    std::optional<GroundTruthField> gt;
};
DatasetBundle load_dataset(const std::filesystem::path& dir);

// Minimal NPY (version 1.0, C-order, '<f8'/'<f4') 2-D reader/writer.
Tensor load_npy(const std::filesystem::path& path);
void save_npy(const std::filesystem::path& path, const Tensor& t);

} // namespace vsdsr
