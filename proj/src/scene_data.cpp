#include "vsdsr/scene_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/rng.hpp"

namespace vsdsr {

using nlohmann::json;

GroundTruthField::GroundTruthField(int res, Bounds bbox) : res_(res), bbox_(bbox) {
    if (res < 2) throw ConfigError("ground-truth field resolution must be >= 2");
    density = Tensor::zeros({res, res, res});
    color = Tensor::full({res, res, res, 3}, 0.5);
}

void GroundTruthField::sample(const Eigen::Vector3d& p, real& sigma, Eigen::Vector3d& rgb) const {
    TriStencil st = tri_stencil(bbox_, res_, p);
    real d = 0, c0 = 0, c1 = 0, c2 = 0;
    for (int k = 0; k < 8; k++) {
        d += st.w[k] * density[st.cell[k]];
        const real* c = &color[st.cell[k] * 3];
        c0 += st.w[k] * c[0];
        c1 += st.w[k] * c[1];
        c2 += st.w[k] * c[2];
    }
    sigma = d;
    rgb = {c0, c1, c2};
}

void GroundTruthField::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "ground_truth_field";
    c.meta["res"] = res_;
    c.tensors["density"] = density;
    c.tensors["color"] = color;
    Tensor bb({6});
    for (int a = 0; a < 3; a++) {
        bb[a] = bbox_.lo[a];
        bb[3 + a] = bbox_.hi[a];
    }
    c.tensors["bbox"] = bb;
    c.save(path);
}

GroundTruthField GroundTruthField::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "ground_truth_field")
        throw IngestionError("not a ground-truth field file: " + path.string());
    GroundTruthField f;
    f.res_ = c.meta.at("res").get<int>();
    const Tensor& bb = c.at("bbox");
    for (int a = 0; a < 3; a++) {
        f.bbox_.lo[a] = bb[a];
        f.bbox_.hi[a] = bb[3 + a];
    }
    f.density = c.at("density");
    f.color = c.at("color");
    int64_t g = f.res_;
    f.density.check_shape({g, g, g}, "density");
    f.color.check_shape({g, g, g, 3}, "color");
    if (f.density.min() < 0.0) throw IngestionError("ground-truth density has negative entries");
    return f;
}

int MultiViewDataset::hr_width() const {
    if (has_hr()) return hr_images[0].w;
    if (!lr_images.empty()) return lr_images[0].w * 4;
    return 0;
}

int MultiViewDataset::hr_height() const {
    if (has_hr()) return hr_images[0].h;
    if (!lr_images.empty()) return lr_images[0].h * 4;
    return 0;
}

void MultiViewDataset::validate() const {
    if (lr_images.size() != poses.size())
        throw IngestionError("dataset: LR image count != pose count");
    if (has_hr() && hr_images.size() != poses.size())
        throw IngestionError("dataset: HR image count != pose count");
    for (size_t i = 0; i < poses.size(); i++) {
        if (!poses[i].orthonormal())
            throw IngestionError("dataset: pose " + std::to_string(i) + " is not orthonormal");
    }
    for (size_t i = 0; i < lr_images.size(); i++) {
        const Image& lr = lr_images[i];
        if (lr.h != lr_images[0].h || lr.w != lr_images[0].w)
            throw IngestionError("dataset: inconsistent LR image sizes");
        if (has_hr()) {
            const Image& hr = hr_images[i];
            if (hr.h != lr.h * 4 || hr.w != lr.w * 4)
                throw IngestionError("dataset: HR dims are not exactly 4x LR dims");
        }
    }
    if (!(near > 0.0) || !(far > near)) throw IngestionError("dataset: need 0 < near < far");
    std::vector<char> seen(poses.size(), 0);
    for (int i : train_indices) {
        if (i < 0 || i >= static_cast<int>(poses.size()) || seen[i])
            throw IngestionError("dataset: bad train split");
        seen[i] = 1;
    }
    for (int i : eval_indices) {
        if (i < 0 || i >= static_cast<int>(poses.size()) || seen[i])
            throw IngestionError("dataset: bad eval split");
        seen[i] = 1;
    }
    if (std::count(seen.begin(), seen.end(), 1) != static_cast<long>(poses.size()))
        throw IngestionError("dataset: split does not cover all views");
}

Image downsample_x4(const Image& img) {
    if (img.h % 4 != 0 || img.w % 4 != 0)
        throw ConfigError("downsample_x4 needs dims divisible by 4");
    return box_downsample(img, 4);
}

std::pair<GroundTruthField, MultiViewDataset> generate_synthetic_scene(uint64_t seed, int grid_res,
                                                                       int n_views, int hr_size) {
    if (grid_res < 16) throw ConfigError("generate: grid_res must be >= 16");
    if (hr_size <= 0 || hr_size % 4 != 0)
        throw ConfigError("generate: hr_size must be a positive multiple of 4");
    if (n_views < 2) throw ConfigError("generate: n_views must be >= 2");

    Bounds bbox; // [-1,1]^3
    RngStream rng(seed);
    RngStream blob_rng = rng.child(1);

    struct Blob {
        Eigen::Vector3d center;
        real radius, amp;
        Eigen::Vector3d base;
        Eigen::Vector3d tex_u, tex_v;
        real freq, tex_amp;
    };
    int n_blobs = static_cast<int>(blob_rng.uniform_int(3, 6));
    std::vector<Blob> blobs(n_blobs);
    for (Blob& b : blobs) {
        for (int a = 0; a < 3; a++) b.center[a] = blob_rng.uniform(-0.5, 0.5);
        b.radius = blob_rng.uniform(0.14, 0.32);
        b.amp = blob_rng.uniform(25.0, 60.0);
        for (int a = 0; a < 3; a++) b.base[a] = blob_rng.uniform(0.15, 0.85);
        Eigen::Vector3d u, v;
        for (int a = 0; a < 3; a++) u[a] = blob_rng.normal();
        for (int a = 0; a < 3; a++) v[a] = blob_rng.normal();
        b.tex_u = u.normalized();
        b.tex_v = (v - v.dot(b.tex_u) * b.tex_u).normalized();
        b.freq = blob_rng.uniform(2.5, 5.0);
        b.tex_amp = blob_rng.uniform(0.25, 0.4);
    }

    GroundTruthField gt(grid_res, bbox);
    const real eps = 1e-6;
    for (int64_t iz = 0; iz < grid_res; iz++) {
        for (int64_t iy = 0; iy < grid_res; iy++) {
            for (int64_t ix = 0; ix < grid_res; ix++) {
                Eigen::Vector3d p;
                const int64_t idx3[3] = {ix, iy, iz};
                for (int a = 0; a < 3; a++)
                    p[a] = bbox.lo[a] + (idx3[a] + 0.5) / grid_res * (bbox.hi[a] - bbox.lo[a]);
                real sigma = 0.0;
                Eigen::Vector3d cnum(0.5 * eps, 0.5 * eps, 0.5 * eps);
                real cden = eps;
                for (const Blob& b : blobs) {
                    real q = (p - b.center).squaredNorm() / (2.0 * b.radius * b.radius);
                    real phi = std::exp(-q);
                    sigma += b.amp * phi;
                    real tex = std::sin(2.0 * M_PI * b.freq * p.dot(b.tex_u)) *
                               std::sin(2.0 * M_PI * b.freq * p.dot(b.tex_v));
                    Eigen::Vector3d col = b.base + Eigen::Vector3d::Constant(b.tex_amp * tex);
                    for (int a = 0; a < 3; a++) col[a] = std::clamp(col[a], 0.0, 1.0);
                    cnum += phi * col;
                    cden += phi;
                }
                int64_t cell = (iz * grid_res + iy) * grid_res + ix;
                gt.density[cell] = sigma;
                for (int a = 0; a < 3; a++) gt.color[cell * 3 + a] = cnum[a] / cden;
            }
        }
    }

    MultiViewDataset ds;
    ds.bbox = bbox;
    ds.near = 2.0;
    ds.far = 5.0;
    char sid[96];
    std::snprintf(sid, sizeof(sid), "synthetic-seed%llu-g%d-v%d-hr%d",
                  static_cast<unsigned long long>(seed), grid_res, n_views, hr_size);
    ds.scene_id = sid;

    const real cam_radius = 3.5;
    const real fov_deg = 50.0;
    const real f_pix = 0.5 * hr_size / std::tan(0.5 * fov_deg * M_PI / 180.0);
    RenderOptions ropts;
    ropts.n_samples = 128;
    ropts.near = ds.near;
    ropts.far = ds.far;
    ropts.jitter = false;
    ropts.background = {1, 1, 1};

    for (int i = 0; i < n_views; i++) {
        real azim = 2.0 * M_PI * i / n_views;
        real frac = i * 0.6180339887498949;
        frac -= std::floor(frac);
        real elev = (-20.0 + 40.0 * frac) * M_PI / 180.0;
        Eigen::Vector3d eye(cam_radius * std::cos(elev) * std::cos(azim),
                            cam_radius * std::sin(elev),
                            cam_radius * std::cos(elev) * std::sin(azim));
        CameraPose pose = look_at(eye, {0, 0, 0}, {0, 1, 0}, f_pix, f_pix, 0.5 * hr_size,
                                  0.5 * hr_size);
        ds.poses.push_back(pose);
        Image hr = render_image(gt, pose, hr_size, hr_size, ropts);
        hr.clamp01();
        ds.lr_images.push_back(downsample_x4(hr));
        ds.hr_images.push_back(std::move(hr));
        if (i % 5 == 0)
            ds.eval_indices.push_back(i);
        else
            ds.train_indices.push_back(i);
    }
    ds.validate();
    return {std::move(gt), std::move(ds)};
}

// ---- NPY (minimal: version 1.0, little-endian f4/f8, C order, 2-D) ----

Tensor load_npy(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + path.string());
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0)
        throw IngestionError("not an NPY file: " + path.string());
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    uint32_t header_len = 0;
    if (ver[0] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        header_len = b[0] | (b[1] << 8);
    } else if (ver[0] == 2) {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<uint32_t>(b[3]) << 24);
    } else {
        throw IngestionError("unsupported NPY version in " + path.string());
    }
    std::string header(header_len, '\0');
    in.read(header.data(), header_len);
    if (!in) throw IngestionError("truncated NPY header in " + path.string());

    auto find_str = [&](const std::string& key) -> std::string {
        size_t k = header.find("'" + key + "'");
        if (k == std::string::npos)
            throw IngestionError("NPY header missing " + key + " in " + path.string());
        size_t q1 = header.find('\'', header.find(':', k));
        size_t q2 = header.find('\'', q1 + 1);
        return header.substr(q1 + 1, q2 - q1 - 1);
    };
    std::string descr = find_str("descr");
    bool f8;
    if (descr == "<f8")
        f8 = true;
    else if (descr == "<f4")
        f8 = false;
    else
        throw IngestionError("unsupported NPY dtype '" + descr + "' in " + path.string());
    if (header.find("'fortran_order': False") == std::string::npos)
        throw IngestionError("fortran-order NPY not supported: " + path.string());

    size_t sk = header.find("'shape'");
    size_t p1 = header.find('(', sk);
    size_t p2 = header.find(')', p1);
    if (sk == std::string::npos || p1 == std::string::npos || p2 == std::string::npos)
        throw IngestionError("NPY header missing shape in " + path.string());
    std::string shape_s = header.substr(p1 + 1, p2 - p1 - 1);
    std::vector<int64_t> shape;
    size_t pos = 0;
    while (pos < shape_s.size()) {
        while (pos < shape_s.size() && !std::isdigit(static_cast<unsigned char>(shape_s[pos])))
            pos++;
        if (pos >= shape_s.size()) break;
        size_t end = pos;
        while (end < shape_s.size() && std::isdigit(static_cast<unsigned char>(shape_s[end])))
            end++;
        shape.push_back(std::stoll(shape_s.substr(pos, end - pos)));
        pos = end;
    }
    if (shape.size() != 2)
        throw IngestionError("expected a 2-D NPY array in " + path.string());

    Tensor out(shape);
    size_t n = static_cast<size_t>(out.numel());
    if (f8) {
        in.read(reinterpret_cast<char*>(out.data()), n * sizeof(double));
    } else {
        std::vector<float> tmp(n);
        in.read(reinterpret_cast<char*>(tmp.data()), n * sizeof(float));
        for (size_t i = 0; i < n; i++) out[static_cast<int64_t>(i)] = tmp[i];
    }
    if (!in) throw IngestionError("truncated NPY data in " + path.string());
    return out;
}

void save_npy(const std::filesystem::path& path, const Tensor& t) {
    if (t.ndim() != 2) throw ConfigError("save_npy handles 2-D tensors only");
    std::string dict = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(t.dim(0)) + ", " + std::to_string(t.dim(1)) + "), }";
    size_t base = 6 + 2 + 2;
    size_t total = base + dict.size() + 1; // +1 newline
    size_t pad = (64 - total % 64) % 64;
    dict += std::string(pad, ' ');
    dict += '\n';
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IngestionError("cannot write " + path.string());
    out.write("\x93NUMPY", 6);
    out.put(1).put(0);
    uint16_t hl = static_cast<uint16_t>(dict.size());
    out.put(static_cast<char>(hl & 0xFF)).put(static_cast<char>(hl >> 8));
    out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!out) throw IngestionError("failed writing " + path.string());
}

MultiViewDataset load_llff(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::path poses_path = dir / "poses_bounds.npy";
    if (!fs::exists(poses_path))
        throw IngestionError("missing LLFF poses file: " + poses_path.string());
    Tensor pb = load_npy(poses_path);
    if (pb.dim(1) != 17)
        throw IngestionError("LLFF poses file must be N x 17, got " + pb.shape_str() + " in " +
                             poses_path.string());
    int64_t n = pb.dim(0);

    fs::path img_dir = dir / "images";
    if (!fs::is_directory(img_dir))
        throw IngestionError("missing LLFF images directory: " + img_dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(img_dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (static_cast<int64_t>(files.size()) != n)
        throw IngestionError("LLFF image count " + std::to_string(files.size()) +
                             " != pose row count " + std::to_string(n) + " (expected " +
                             std::to_string(n) + " images)");

    MultiViewDataset ds;
    ds.scene_id = "llff-" + dir.filename().string();
    real min_near = std::numeric_limits<real>::max();
    real max_far = 0.0;

    for (int64_t i = 0; i < n; i++) {
        const real* row = &pb[i * 17];
        // rows of the 3x5 block are stored contiguously: [R | t | hwf]
        Eigen::Matrix3d m; // columns: down, right, back
        Eigen::Vector3d t, hwf;
        for (int r = 0; r < 3; r++) {
            for (int c = 0; c < 3; c++) m(r, c) = row[r * 5 + c];
            t[r] = row[r * 5 + 3];
            hwf[r] = row[r * 5 + 4];
        }
        Eigen::Matrix3d rot; // columns: right, down, forward
        rot.col(0) = m.col(1);
        rot.col(1) = m.col(0);
        rot.col(2) = -m.col(2);

        CameraPose pose;
        pose.rotation = rot;
        pose.translation = t;
        if (!pose.orthonormal(1e-3))
            throw IngestionError("LLFF pose " + std::to_string(i) + " is not orthonormal in " +
                                 poses_path.string());
        // float32 storage leaves ~1e-6 drift; project back onto SO(3)
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(rot, Eigen::ComputeFullU | Eigen::ComputeFullV);
        pose.rotation = svd.matrixU() * svd.matrixV().transpose();

        int ih = static_cast<int>(std::lround(hwf[0]));
        int iw = static_cast<int>(std::lround(hwf[1]));
        real f = hwf[2];
        if (ih <= 0 || iw <= 0 || f <= 0)
            throw IngestionError("LLFF pose " + std::to_string(i) + " has invalid hwf");
        // loaded images sit on the LR plane; intrinsics follow the HR (4x) convention
        pose.fx = pose.fy = 4.0 * f;
        pose.cx = 4.0 * (0.5 * iw);
        pose.cy = 4.0 * (0.5 * ih);
        ds.poses.push_back(pose);

        Image img = load_png(files[static_cast<size_t>(i)]);
        if (img.h != ih || img.w != iw)
            throw IngestionError("LLFF image " + files[static_cast<size_t>(i)].string() +
                                 " dims disagree with poses file hwf");
        ds.lr_images.push_back(std::move(img));

        min_near = std::min(min_near, row[15]);
        max_far = std::max(max_far, row[16]);
    }
    if (!(min_near > 0.0) || !(max_far > min_near))
        throw IngestionError("LLFF depth bounds are invalid in " + poses_path.string());
    ds.near = 0.9 * min_near;
    ds.far = 1.1 * max_far;

    // scene box: felt out from the central rays over the depth range
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<real>::max());
    Eigen::Vector3d hi = -lo;
    for (const CameraPose& pose : ds.poses) {
        Eigen::Vector3d origin, dir;
        pose.pixel_ray(pose.cx - 0.5, pose.cy - 0.5, origin, dir); // optical-axis ray
        for (real d : {ds.near, 0.5 * (ds.near + ds.far), ds.far}) {
            Eigen::Vector3d p = origin + d * dir;
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
    }
    Eigen::Vector3d margin = 0.15 * (hi - lo) + Eigen::Vector3d::Constant(1e-3);
    ds.bbox.lo = lo - margin;
    ds.bbox.hi = hi + margin;

    for (int i = 0; i < static_cast<int>(n); i++) {
        if (i % 5 == 0)
            ds.eval_indices.push_back(i);
        else
            ds.train_indices.push_back(i);
    }
    if (ds.train_indices.empty()) { // tiny capture: train on everything
        ds.train_indices = ds.eval_indices;
        ds.eval_indices.clear();
    }
    ds.validate();
    return ds;
}

// ---- dataset directory round trip ----

static json pose_to_json(const CameraPose& p) {
    json j;
    json rows = json::array();
    for (int r = 0; r < 3; r++) {
        json row = json::array();
        for (int c = 0; c < 3; c++) row.push_back(p.rotation(r, c));
        rows.push_back(row);
    }
    j["rotation"] = rows;
    j["translation"] = {p.translation.x(), p.translation.y(), p.translation.z()};
    j["fx"] = p.fx;
    j["fy"] = p.fy;
    j["cx"] = p.cx;
    j["cy"] = p.cy;
    return j;
}

static CameraPose pose_from_json(const json& j) {
    CameraPose p;
    for (int r = 0; r < 3; r++)
        for (int c = 0; c < 3; c++) p.rotation(r, c) = j.at("rotation").at(r).at(c).get<real>();
    for (int a = 0; a < 3; a++) p.translation[a] = j.at("translation").at(a).get<real>();
    p.fx = j.at("fx").get<real>();
    p.fy = j.at("fy").get<real>();
    p.cx = j.at("cx").get<real>();
    p.cy = j.at("cy").get<real>();
    return p;
}

void save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir,
                  const GroundTruthField* gt) {
    namespace fs = std::filesystem;
    ds.validate();
    fs::create_directories(dir / "lr");
    if (ds.has_hr()) fs::create_directories(dir / "hr");
    char name[32];
    for (size_t i = 0; i < ds.lr_images.size(); i++) {
        std::snprintf(name, sizeof(name), "%04zu.png", i);
        save_png(ds.lr_images[i], dir / "lr" / name);
        if (ds.has_hr()) save_png(ds.hr_images[i], dir / "hr" / name);
    }
    json j;
    j["scene_id"] = ds.scene_id;
    j["near"] = ds.near;
    j["far"] = ds.far;
    j["bbox"] = {{"lo", {ds.bbox.lo.x(), ds.bbox.lo.y(), ds.bbox.lo.z()}},
                 {"hi", {ds.bbox.hi.x(), ds.bbox.hi.y(), ds.bbox.hi.z()}}};
    j["train_indices"] = ds.train_indices;
    j["eval_indices"] = ds.eval_indices;
    json views = json::array();
    for (const CameraPose& p : ds.poses) views.push_back(pose_to_json(p));
    j["views"] = views;
    std::ofstream out(dir / "poses.json");
    out << j.dump(2) << "\n";
    if (!out) throw IngestionError("failed writing " + (dir / "poses.json").string());
    if (gt) gt->save(dir / "gt_field.bin");
}

DatasetBundle load_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::path meta_path = dir / "poses.json";
    std::ifstream in(meta_path);
    if (!in) throw IngestionError("missing dataset metadata: " + meta_path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IngestionError("malformed " + meta_path.string() + ": " + e.what());
    }

    DatasetBundle bundle;
    MultiViewDataset& ds = bundle.dataset;
    try {
        ds.scene_id = j.at("scene_id").get<std::string>();
        ds.near = j.at("near").get<real>();
        ds.far = j.at("far").get<real>();
        for (int a = 0; a < 3; a++) {
            ds.bbox.lo[a] = j.at("bbox").at("lo").at(a).get<real>();
            ds.bbox.hi[a] = j.at("bbox").at("hi").at(a).get<real>();
        }
        ds.train_indices = j.at("train_indices").get<std::vector<int>>();
        ds.eval_indices = j.at("eval_indices").get<std::vector<int>>();
        for (const json& v : j.at("views")) ds.poses.push_back(pose_from_json(v));
    } catch (const json::exception& e) {
        throw IngestionError("malformed " + meta_path.string() + ": " + e.what());
    }

    char name[32];
    bool has_hr = fs::is_directory(dir / "hr");
    for (size_t i = 0; i < ds.poses.size(); i++) {
        std::snprintf(name, sizeof(name), "%04zu.png", i);
        ds.lr_images.push_back(load_png(dir / "lr" / name));
        if (has_hr) ds.hr_images.push_back(load_png(dir / "hr" / name));
    }
    ds.validate();
    if (fs::exists(dir / "gt_field.bin")) bundle.gt = GroundTruthField::load(dir / "gt_field.bin");
    return bundle;
}

} // namespace vsdsr
