// Builds the pristine image-quality model and the small reference corpus.
// Fit images come from a fixed ensemble of sharp synthetic HR renders; the
// corpus (10 PNGs) comes from a held-out seed of the same family.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "vsdsr/errors.hpp"
#include "vsdsr/metrics.hpp"
#include "vsdsr/scene_data.hpp"

using namespace vsdsr;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Fit the pristine quality model and write the reference corpus"};
    std::string out = "data/niqe_pristine.bin";
    std::string corpus_dir = "data/corpus";
    std::vector<uint64_t> fit_seeds{201, 202, 203};
    uint64_t corpus_seed = 204;
    int n_views = 20;
    int hr_size = 128;
    int grid_res = 64;
    int corpus_count = 10;
    app.add_option("--out", out, "model output path")->capture_default_str();
    app.add_option("--corpus-dir", corpus_dir, "corpus output directory")->capture_default_str();
    app.add_option("--fit-seeds", fit_seeds, "scene seeds for the fit ensemble");
    app.add_option("--corpus-seed", corpus_seed, "held-out seed for the corpus images");
    app.add_option("--n-views", n_views, "views per scene")->capture_default_str();
    app.add_option("--hr-size", hr_size, "image side")->capture_default_str();
    app.add_option("--grid-res", grid_res, "scene field resolution")->capture_default_str();
    app.add_option("--corpus-count", corpus_count, "corpus image count")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        std::vector<Image> pristine;
        for (uint64_t s : fit_seeds) {
            auto [gt, ds] = generate_synthetic_scene(s, grid_res, n_views, hr_size);
            (void)gt;
            for (const auto& img : ds.hr_images) pristine.push_back(img);
        }
        std::cout << "fitting on " << pristine.size() << " images\n";
        NiqeModel model = NiqeModel::fit(pristine);
        fs::create_directories(fs::path(out).parent_path());
        model.save(out);
        std::cout << "model (" << model.n_fit_patches << " patches) -> " << out << "\n";

        auto [gt, ds] = generate_synthetic_scene(corpus_seed, grid_res, n_views, hr_size);
        (void)gt;
        if (corpus_count > static_cast<int>(ds.hr_images.size()))
            throw ConfigError("corpus needs " + std::to_string(corpus_count) + " images but the scene has " +
                              std::to_string(ds.hr_images.size()) + " views");
        fs::create_directories(corpus_dir);
        for (int i = 0; i < corpus_count; ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "img_%02d.png", i);
            save_png(ds.hr_images[i], fs::path(corpus_dir) / name);
        }
        std::cout << corpus_count << " corpus images -> " << corpus_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
