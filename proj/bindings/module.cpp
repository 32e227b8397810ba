// Python surface: numpy adapters over the core operations — scene synthesis,
// schedules, codec, field rendering, per-view refinement, the full pipeline,
// and the metrics.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vsdsr/config.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"
#include "vsdsr/i3ds.hpp"
#include "vsdsr/lora.hpp"
#include "vsdsr/metrics.hpp"
#include "vsdsr/pipeline.hpp"
#include "vsdsr/scene_data.hpp"
#include "vsdsr/vsd_sr.hpp"

namespace py = pybind11;
using namespace vsdsr;

namespace {

Tensor tensor_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    std::vector<int64_t> shape(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
    Tensor t(shape);
    std::copy(a.data(), a.data() + t.numel(), t.vec().begin());
    return t;
}

py::array tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> a(shape);
    std::copy(t.vec().begin(), t.vec().end(), a.mutable_data());
    return a;
}

Image image_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    if (a.ndim() != 3 || a.shape(2) != 3)
        throw ShapeError("image array must be [h, w, 3]");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + img.v.size(), img.v.begin());
    return img;
}

py::array image_to_numpy(const Image& img) {
    py::array_t<double> a({static_cast<py::ssize_t>(img.h), static_cast<py::ssize_t>(img.w),
                           static_cast<py::ssize_t>(3)});
    std::copy(img.v.begin(), img.v.end(), a.mutable_data());
    return a;
}

py::object json_to_py(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

py::object report_to_py(const MetricReport& r) { return json_to_py(r.to_json()); }

VSDConfig vsd_config_from_kwargs(int M, real eta1, real eta2, int lora_interval,
                                 const std::string& omega, int t_min, int t_max,
                                 const std::string& loss_mode) {
    VSDConfig cfg;
    cfg.M = M;
    cfg.eta1 = eta1;
    cfg.eta2 = eta2;
    cfg.lora_interval = lora_interval;
    cfg.omega = omega_from_string(omega);
    cfg.t_min = t_min;
    cfg.t_max = t_max;
    cfg.loss_mode = loss_mode_from_string(loss_mode);
    return cfg;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "diffusion-guided NeRF super-resolution core";

    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<IngestionError>(m, "IngestionError");
    py::register_exception<NumericalError>(m, "NumericalError");

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("T", &NoiseSchedule::T)
        .def("alpha_bar", &NoiseSchedule::at, py::arg("t"))
        .def_property_readonly("kind",
                               [](const NoiseSchedule& s) { return to_string(s.kind); });
    m.def("make_schedule",
          [](const std::string& kind, int T) {
              return make_schedule(schedule_kind_from_string(kind), T);
          },
          py::arg("kind") = "cosine", py::arg("T") = 1000);
    m.def("add_noise",
          [](const py::array_t<double>& x0, int t, const py::array_t<double>& eps,
             const NoiseSchedule& sched) {
              LatentImage li;
              li.data = tensor_from_numpy(x0);
              return tensor_to_numpy(add_noise(li, t, tensor_from_numpy(eps), sched).data);
          },
          py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("sched"));

    py::class_<CameraPose>(m, "CameraPose")
        .def("scaled", &CameraPose::scaled, py::arg("factor"))
        .def_readonly("fx", &CameraPose::fx)
        .def_readonly("fy", &CameraPose::fy);

    py::class_<MultiViewDataset>(m, "MultiViewDataset")
        .def_property_readonly("n_views", &MultiViewDataset::n_views)
        .def_readonly("scene_id", &MultiViewDataset::scene_id)
        .def_readonly("train_indices", &MultiViewDataset::train_indices)
        .def_readonly("eval_indices", &MultiViewDataset::eval_indices)
        .def_readonly("near", &MultiViewDataset::near)
        .def_readonly("far", &MultiViewDataset::far)
        .def_property_readonly("has_hr", &MultiViewDataset::has_hr)
        .def("hr_image", [](const MultiViewDataset& d, int i) {
            return image_to_numpy(d.hr_images.at(i));
        })
        .def("lr_image", [](const MultiViewDataset& d, int i) {
            return image_to_numpy(d.lr_images.at(i));
        })
        .def("pose", [](const MultiViewDataset& d, int i) { return d.poses.at(i); });

    py::class_<GroundTruthField>(m, "GroundTruthField");
    m.def("generate_synthetic_scene",
          [](uint64_t seed, int grid_res, int n_views, int hr_size) {
              auto [gt, ds] = generate_synthetic_scene(seed, grid_res, n_views, hr_size);
              return py::make_tuple(std::move(gt), std::move(ds));
          },
          py::arg("seed"), py::arg("grid_res") = 64, py::arg("n_views") = 20,
          py::arg("hr_size") = 128);
    m.def("load_dataset_dir",
          [](const std::filesystem::path& dir) { return load_dataset(dir).dataset; },
          py::arg("dir"));

    py::class_<RadianceField>(m, "RadianceField")
        .def_static("load", &RadianceField::load, py::arg("path"))
        .def_property_readonly("res", &RadianceField::res)
        .def("param_hash", [](const RadianceField& f) { return hash_hex(f.param_hash()); })
        .def("render",
             [](RadianceField& f, const CameraPose& pose, int width, int height, int n_samples,
                double near, double far, uint64_t seed,
                const std::tuple<double, double, double>& background) {
                 RenderOptions opts;
                 opts.n_samples = n_samples;
                 opts.near = near;
                 opts.far = far;
                 opts.seed = seed;
                 opts.background = {std::get<0>(background), std::get<1>(background),
                                    std::get<2>(background)};
                 return image_to_numpy(render_image(f, pose, width, height, opts));
             },
             py::arg("pose"), py::arg("width"), py::arg("height"), py::arg("n_samples") = 64,
             py::arg("near") = 0.5, py::arg("far") = 5.0, py::arg("seed") = 0,
             py::arg("background") = std::make_tuple(1.0, 1.0, 1.0));
    m.def("fit_lr_nerf",
          [](const MultiViewDataset& ds, int steps, int grid_res, uint64_t seed, int ray_batch,
             double lr) {
              FitFieldConfig fc;
              fc.grid_res = grid_res;
              fc.seed = seed;
              fc.ray_batch = ray_batch;
              fc.lr = lr;
              return fit_lr_nerf(ds, steps, fc);
          },
          py::arg("dataset"), py::arg("steps"), py::arg("grid_res") = 64, py::arg("seed") = 0,
          py::arg("ray_batch") = 4096, py::arg("lr") = 0.05);

    py::class_<CodecParams>(m, "CodecParams")
        .def_static("load", &CodecParams::load, py::arg("path"))
        .def_static("random_init", &CodecParams::random_init, py::arg("seed"))
        .def("weight_hash", [](const CodecParams& c) { return hash_hex(c.weight_hash()); })
        .def_readonly("final_val_mse", &CodecParams::final_val_mse);
    m.def("encode",
          [](const py::array_t<double>& img, const CodecParams& codec) {
              return tensor_to_numpy(encode(image_from_numpy(img), codec).data);
          },
          py::arg("image"), py::arg("codec"));
    m.def("decode",
          [](const py::array_t<double>& latent, const CodecParams& codec) {
              LatentImage li;
              li.data = tensor_from_numpy(latent);
              return image_to_numpy(decode(li, codec));
          },
          py::arg("latent"), py::arg("codec"));
    m.def("upsample_x4",
          [](const py::array_t<double>& img) {
              return image_to_numpy(upsample_x4(image_from_numpy(img)));
          },
          py::arg("image"));

    py::class_<DenoiserBundle>(m, "DenoiserBundle")
        .def_static("load", &DenoiserBundle::load, py::arg("path"))
        .def("weight_hash",
             [](const DenoiserBundle& b) { return hash_hex(b.params.weight_hash()); })
        .def_property_readonly("schedule", [](const DenoiserBundle& b) { return b.sched; })
        .def_property_readonly("final_val_mse",
                               [](const DenoiserBundle& b) { return b.params.final_val_mse; });

    py::class_<AdapterSet>(m, "AdapterSet")
        .def(py::init<>())
        .def("param_hash", [](const AdapterSet& s) { return hash_hex(s.param_hash()); })
        .def("layer_ids", [](const AdapterSet& s) {
            std::vector<std::string> ids;
            for (const auto& [id, a] : s.all()) ids.push_back(id);
            return ids;
        });
    m.def("attach_default_adapters",
          [](AdapterSet& set, int rank, double scale, uint64_t seed) {
              attach_default_adapters(set, rank, scale, seed);
          },
          py::arg("adapters"), py::arg("rank") = 4, py::arg("scale") = 1.0, py::arg("seed") = 0);

    m.def("vsd_upscale",
          [](const py::array_t<double>& x0, const py::array_t<double>& lr_image, int prompt_id,
             int class_id, const DenoiserBundle& bundle, const CodecParams& codec, uint64_t seed,
             int M, real eta1, real eta2, int lora_interval, const std::string& omega, int t_min,
             int t_max, const std::string& loss_mode, int adapter_rank, real adapter_scale) {
              VSDConfig cfg = vsd_config_from_kwargs(M, eta1, eta2, lora_interval, omega, t_min,
                                                     t_max, loss_mode);
              cfg.validate(bundle.sched.T);
              LatentImage li;
              li.data = tensor_from_numpy(x0);
              AdapterSet adapters;
              attach_default_adapters(adapters, adapter_rank, adapter_scale, mix_seed(seed, 0xADAB));
              Adam opt(adapters.params());
              RngStream rng(seed);
              std::vector<VSDTraceRow> trace;
              LatentImage out = vsd_upscale(li, image_from_numpy(lr_image), prompt_id, class_id,
                                            bundle, adapters, opt, codec, cfg, rng, &trace);
              py::list rows;
              for (const auto& r : trace)
                  rows.append(py::make_tuple(r.step, r.t, r.l_vsd, r.l_diff));
              return py::make_tuple(tensor_to_numpy(out.data), rows);
          },
          py::arg("x0"), py::arg("lr_image"), py::arg("prompt_id"), py::arg("class_id"),
          py::arg("bundle"), py::arg("codec"), py::arg("seed") = 0, py::arg("M") = 200,
          py::arg("eta1") = 0.1, py::arg("eta2") = 1e-3, py::arg("lora_interval") = 3,
          py::arg("omega") = "constant", py::arg("t_min") = -1, py::arg("t_max") = -1,
          py::arg("loss_mode") = "score_shortcut", py::arg("adapter_rank") = 4,
          py::arg("adapter_scale") = 1.0);
    m.def("sds_upscale",
          [](const py::array_t<double>& x0, const py::array_t<double>& lr_image, int prompt_id,
             int class_id, const DenoiserBundle& bundle, const CodecParams& codec, uint64_t seed,
             int M, real eta1, const std::string& omega, int t_min, int t_max) {
              VSDConfig cfg;
              cfg.M = M;
              cfg.eta1 = eta1;
              cfg.omega = omega_from_string(omega);
              cfg.t_min = t_min;
              cfg.t_max = t_max;
              cfg.validate(bundle.sched.T);
              LatentImage li;
              li.data = tensor_from_numpy(x0);
              RngStream rng(seed);
              std::vector<VSDTraceRow> trace;
              LatentImage out = sds_upscale(li, image_from_numpy(lr_image), prompt_id, class_id,
                                            bundle, codec, cfg, rng, &trace);
              py::list rows;
              for (const auto& r : trace)
                  rows.append(py::make_tuple(r.step, r.t, r.l_vsd, r.l_diff));
              return py::make_tuple(tensor_to_numpy(out.data), rows);
          },
          py::arg("x0"), py::arg("lr_image"), py::arg("prompt_id"), py::arg("class_id"),
          py::arg("bundle"), py::arg("codec"), py::arg("seed") = 0, py::arg("M") = 200,
          py::arg("eta1") = 0.1, py::arg("omega") = "constant", py::arg("t_min") = -1,
          py::arg("t_max") = -1);

    py::class_<NiqeModel>(m, "NiqeModel")
        .def_static("load", &NiqeModel::load, py::arg("path"))
        .def_readonly("n_fit_patches", &NiqeModel::n_fit_patches);
    m.def("psnr",
          [](const py::array_t<double>& a, const py::array_t<double>& b, double max_val) {
              return psnr(image_from_numpy(a), image_from_numpy(b), max_val);
          },
          py::arg("a"), py::arg("b"), py::arg("max_val") = 1.0);
    m.def("niqe",
          [](const py::array_t<double>& img, const NiqeModel& model) {
              return niqe(image_from_numpy(img), model);
          },
          py::arg("image"), py::arg("model"));
    m.def("perc_proxy",
          [](const py::array_t<double>& a, const py::array_t<double>& b,
             const CodecParams& codec) {
              return perc_proxy(image_from_numpy(a), image_from_numpy(b), codec);
          },
          py::arg("a"), py::arg("b"), py::arg("codec"));

    py::class_<RunConfig>(m, "RunConfig")
        .def_static("from_json",
                    [](const std::string& text) {
                        return RunConfig::from_json(nlohmann::json::parse(text));
                    },
                    py::arg("text"))
        .def_static("load", &RunConfig::load, py::arg("path"))
        .def("to_json", [](const RunConfig& c) { return json_to_py(c.to_json()); })
        .def("canonical", &RunConfig::canonical)
        .def("validate", &RunConfig::validate);
    m.def("run_generate", &run_generate, py::arg("config"), py::arg("force") = false);
    m.def("run_pretrain", &run_pretrain, py::arg("config"), py::arg("verbose") = false);
    m.def("run_fit_lr", &run_fit_lr, py::arg("config"), py::arg("verbose") = false);
    m.def("run_superres",
          [](const RunConfig& cfg, bool force, bool verbose) {
              return report_to_py(run_superres(cfg, force, verbose));
          },
          py::arg("config"), py::arg("force") = false, py::arg("verbose") = false);
    m.def("run_evaluate",
          [](const std::vector<std::filesystem::path>& dirs) {
              std::vector<std::string> failures;
              auto rows = run_evaluate(dirs, &failures);
              py::list out;
              for (const auto& r : rows) out.append(report_to_py(r));
              return py::make_tuple(out, failures);
          },
          py::arg("run_dirs"));
}
