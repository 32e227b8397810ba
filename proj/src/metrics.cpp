#include "vsdsr/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"
#include "vsdsr/paths.hpp"
#include "vsdsr/radiance_field.hpp"

namespace vsdsr {

real psnr(const Image& a, const Image& b, real max_val) {
    if (!a.same_dims(b))
        throw ShapeError("psnr: image dims differ (" + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                         std::to_string(b.w) + ")");
    const real m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<real>::infinity();
    return 10.0 * std::log10(max_val * max_val / m);
}

// ---- NIQE ----

namespace {

// shape-parameter grid and its moment-ratio curves, shared by both fits
struct GammaGrid {
    std::vector<real> gam, r_ggd, r_aggd;
    GammaGrid() {
        for (real g = 0.2; g <= 10.0 + 1e-9; g += 0.001) {
            real g1 = std::tgamma(1.0 / g), g2 = std::tgamma(2.0 / g),
                 g3 = std::tgamma(3.0 / g);
            gam.push_back(g);
            r_ggd.push_back(g1 * g3 / (g2 * g2));
            r_aggd.push_back(g2 * g2 / (g1 * g3));
        }
    }
};

const GammaGrid& grid() {
    static GammaGrid g;
    return g;
}

// generalized Gaussian: moment-match alpha and variance
void fit_ggd(const std::vector<real>& v, real& alpha, real& sigma_sq) {
    real ssq = 0, e = 0;
    for (real x : v) {
        ssq += x * x;
        e += std::abs(x);
    }
    ssq /= v.size();
    e /= v.size();
    sigma_sq = ssq;
    const real rho = ssq / (e * e + 1e-12);
    const GammaGrid& g = grid();
    size_t best = 0;
    real bd = std::numeric_limits<real>::max();
    for (size_t i = 0; i < g.gam.size(); i++) {
        real d = std::abs(rho - g.r_ggd[i]);
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    alpha = g.gam[best];
}

// asymmetric generalized Gaussian over a product field
void fit_aggd(const std::vector<real>& v, real& alpha, real& leftstd, real& rightstd) {
    real lsq = 0, rsq = 0, e = 0, ssq = 0;
    int64_t nl = 0, nr = 0;
    for (real x : v) {
        if (x < 0) {
            lsq += x * x;
            nl++;
        } else if (x > 0) {
            rsq += x * x;
            nr++;
        }
        e += std::abs(x);
        ssq += x * x;
    }
    leftstd = nl ? std::sqrt(lsq / nl) : 0.0;
    rightstd = nr ? std::sqrt(rsq / nr) : 0.0;
    e /= v.size();
    ssq /= v.size();
    const real gh = leftstd / (rightstd + 1e-12);
    const real rhat = e * e / (ssq + 1e-12);
    const real rhatnorm = rhat * (gh * gh * gh + 1.0) * (gh + 1.0) /
                          ((gh * gh + 1.0) * (gh * gh + 1.0));
    const GammaGrid& g = grid();
    size_t best = 0;
    real bd = std::numeric_limits<real>::max();
    for (size_t i = 0; i < g.gam.size(); i++) {
        real d = (g.r_aggd[i] - rhatnorm) * (g.r_aggd[i] - rhatnorm);
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    alpha = g.gam[best];
}

// separable zero-padded 7x7 Gaussian (sigma = 7/6)
std::vector<real> gauss_blur(const std::vector<real>& im, int h, int w) {
    static std::vector<real> k = [] {
        std::vector<real> kk(7);
        real s = 0;
        for (int i = 0; i < 7; i++) {
            real x = i - 3;
            kk[i] = std::exp(-x * x / (2.0 * (7.0 / 6.0) * (7.0 / 6.0)));
            s += kk[i];
        }
        for (real& v : kk) v /= s;
        return kk;
    }();
    std::vector<real> tmp(im.size(), 0.0), out(im.size(), 0.0);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            real acc = 0;
            for (int i = -3; i <= 3; i++) {
                int xx = x + i;
                if (xx >= 0 && xx < w) acc += k[i + 3] * im[static_cast<size_t>(y) * w + xx];
            }
            tmp[static_cast<size_t>(y) * w + x] = acc;
        }
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++) {
            real acc = 0;
            for (int i = -3; i <= 3; i++) {
                int yy = y + i;
                if (yy >= 0 && yy < h) acc += k[i + 3] * tmp[static_cast<size_t>(yy) * w + x];
            }
            out[static_cast<size_t>(y) * w + x] = acc;
        }
    return out;
}

struct MSCNPlane {
    std::vector<real> mscn, sigma;
    int h = 0, w = 0;
};

MSCNPlane mscn_of(const std::vector<real>& lum, int h, int w) {
    MSCNPlane p;
    p.h = h;
    p.w = w;
    std::vector<real> sq(lum.size());
    for (size_t i = 0; i < lum.size(); i++) sq[i] = lum[i] * lum[i];
    std::vector<real> mu = gauss_blur(lum, h, w);
    std::vector<real> musq = gauss_blur(sq, h, w);
    p.sigma.resize(lum.size());
    p.mscn.resize(lum.size());
    for (size_t i = 0; i < lum.size(); i++) {
        p.sigma[i] = std::sqrt(std::abs(musq[i] - mu[i] * mu[i]));
        p.mscn[i] = (lum[i] - mu[i]) / (p.sigma[i] + 1.0);
    }
    return p;
}

// 18 features of one block: GGD(mscn) + AGGD of the four circular-shift
// product fields (H, V, D1, D2), official feature order.
void block_features(const MSCNPlane& p, int y0, int x0, int bs, std::vector<real>& feat) {
    std::vector<real> v(static_cast<size_t>(bs) * bs);
    for (int y = 0; y < bs; y++)
        for (int x = 0; x < bs; x++)
            v[static_cast<size_t>(y) * bs + x] =
                p.mscn[static_cast<size_t>(y0 + y) * p.w + (x0 + x)];
    real alpha, ssq;
    fit_ggd(v, alpha, ssq);
    feat.push_back(alpha);
    feat.push_back(ssq);
    const int shifts[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    std::vector<real> pr(v.size());
    for (auto& sh : shifts) {
        for (int y = 0; y < bs; y++)
            for (int x = 0; x < bs; x++) {
                int ys = (y + sh[0] + bs) % bs;
                int xs = (x + sh[1] + bs) % bs;
                pr[static_cast<size_t>(y) * bs + x] = v[static_cast<size_t>(y) * bs + x] *
                                                      v[static_cast<size_t>(ys) * bs + xs];
            }
        real a, ls, rs;
        fit_aggd(pr, a, ls, rs);
        const real cst = std::sqrt(std::tgamma(1.0 / a)) / std::sqrt(std::tgamma(3.0 / a));
        const real meanparam = (rs - ls) * (std::tgamma(2.0 / a) / std::tgamma(1.0 / a)) * cst;
        feat.push_back(a);
        feat.push_back(meanparam);
        feat.push_back(ls * ls);
        feat.push_back(rs * rs);
    }
}

std::vector<real> half_scale(const std::vector<real>& lum, int h, int w, int& h2, int& w2) {
    h2 = h / 2;
    w2 = w / 2;
    std::vector<real> out(static_cast<size_t>(h2) * w2);
    for (int y = 0; y < h2; y++)
        for (int x = 0; x < w2; x++)
            out[static_cast<size_t>(y) * w2 + x] =
                0.25 * (lum[static_cast<size_t>(2 * y) * w + 2 * x] +
                        lum[static_cast<size_t>(2 * y) * w + 2 * x + 1] +
                        lum[static_cast<size_t>(2 * y + 1) * w + 2 * x] +
                        lum[static_cast<size_t>(2 * y + 1) * w + 2 * x + 1]);
    return out;
}

std::vector<std::vector<real>> features_with_sharpness(const Image& img, int patch,
                                                       std::vector<real>* sharpness) {
    if (std::min(img.h, img.w) < patch)
        throw ConfigError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                          " too small for " + std::to_string(patch) + "-patch quality metric");
    std::vector<real> lum = to_luminance(img);
    MSCNPlane s1 = mscn_of(lum, img.h, img.w);
    int h2, w2;
    std::vector<real> lum2 = half_scale(lum, img.h, img.w, h2, w2);
    MSCNPlane s2 = mscn_of(lum2, h2, w2);

    const int nbh = img.h / patch, nbw = img.w / patch, half = patch / 2;
    std::vector<std::vector<real>> feats;
    for (int by = 0; by < nbh; by++)
        for (int bx = 0; bx < nbw; bx++) {
            std::vector<real> f;
            f.reserve(36);
            block_features(s1, by * patch, bx * patch, patch, f);
            block_features(s2, by * half, bx * half, half, f);
            feats.push_back(std::move(f));
            if (sharpness) {
                real acc = 0;
                for (int y = 0; y < patch; y++)
                    for (int x = 0; x < patch; x++)
                        acc += s1.sigma[static_cast<size_t>(by * patch + y) * img.w +
                                        (bx * patch + x)];
                sharpness->push_back(acc / (static_cast<real>(patch) * patch));
            }
        }
    return feats;
}

} // namespace

std::vector<std::vector<real>> niqe_features(const Image& img, int patch) {
    return features_with_sharpness(img, patch, nullptr);
}

NiqeModel NiqeModel::fit(const std::vector<Image>& pristine, int patch) {
    std::vector<std::vector<real>> kept;
    for (const Image& img : pristine) {
        std::vector<real> sharp;
        auto feats = features_with_sharpness(img, patch, &sharp);
        real peak = *std::max_element(sharp.begin(), sharp.end());
        for (size_t i = 0; i < feats.size(); i++)
            if (sharp[i] >= 0.75 * peak) kept.push_back(std::move(feats[i]));
    }
    const int64_t n = static_cast<int64_t>(kept.size());
    if (n < 2) throw ConfigError("pristine model needs at least 2 patches, got " +
                                 std::to_string(n));
    const int64_t d = 36;
    NiqeModel m;
    m.patch = patch;
    m.n_fit_patches = static_cast<int>(n);
    m.mu = Tensor::zeros({d});
    for (const auto& f : kept)
        for (int64_t j = 0; j < d; j++) m.mu[j] += f[j] / n;
    m.cov = Tensor::zeros({d, d});
    for (const auto& f : kept)
        for (int64_t a = 0; a < d; a++)
            for (int64_t b = 0; b < d; b++)
                m.cov[a * d + b] += (f[a] - m.mu[a]) * (f[b] - m.mu[b]) / (n - 1);
    // ridge keeps the desk-scale (low-rank) model invertible
    real tr = 0;
    for (int64_t a = 0; a < d; a++) tr += m.cov[a * d + a];
    const real ridge = 1e-6 * tr / d + 1e-12;
    for (int64_t a = 0; a < d; a++) m.cov[a * d + a] += ridge;
    return m;
}

void NiqeModel::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "niqe_model";
    c.meta["patch"] = patch;
    c.meta["n_fit_patches"] = n_fit_patches;
    c.tensors["mu"] = mu;
    c.tensors["cov"] = cov;
    c.save(path);
}

NiqeModel NiqeModel::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "niqe_model")
        throw IngestionError("not a pristine-model file: " + path.string());
    NiqeModel m;
    m.patch = c.meta.at("patch").get<int>();
    m.n_fit_patches = c.meta.value("n_fit_patches", 0);
    m.mu = c.at("mu");
    m.cov = c.at("cov");
    m.mu.check_shape({36}, "niqe mu");
    m.cov.check_shape({36, 36}, "niqe cov");
    return m;
}

real niqe(const Image& img, const NiqeModel& model) {
    auto feats = niqe_features(img, model.patch);
    const int64_t n = static_cast<int64_t>(feats.size()), d = 36;
    Eigen::VectorXd fbar = Eigen::VectorXd::Zero(d);
    for (const auto& f : feats)
        for (int64_t j = 0; j < d; j++) fbar[j] += f[j] / n;
    Eigen::MatrixXd covf = Eigen::MatrixXd::Zero(d, d);
    if (n >= 2)
        for (const auto& f : feats)
            for (int64_t a = 0; a < d; a++)
                for (int64_t b = 0; b < d; b++)
                    covf(a, b) += (f[a] - fbar[a]) * (f[b] - fbar[b]) / (n - 1);
    Eigen::MatrixXd S(d, d);
    Eigen::VectorXd diff(d);
    for (int64_t a = 0; a < d; a++) {
        diff[a] = fbar[a] - model.mu[a];
        for (int64_t b = 0; b < d; b++) S(a, b) = 0.5 * (model.cov[a * d + b] + covf(a, b));
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success) {
        S.diagonal().array() += 1e-8;
        ldlt.compute(S);
    }
    const real q = diff.dot(ldlt.solve(diff));
    return std::sqrt(std::max<real>(q, 0.0));
}

real perc_proxy(const Image& a, const Image& b, const CodecParams& codec) {
    if (!a.same_dims(b)) throw ShapeError("perc_proxy: image dims differ");
    std::vector<Tensor> fa, fb;
    encode(a, codec, &fa);
    encode(b, codec, &fb);
    real acc = 0;
    for (size_t s = 0; s < fa.size(); s++) {
        real d = 0;
        for (int64_t i = 0; i < fa[s].numel(); i++) {
            real e = fa[s][i] - fb[s][i];
            d += e * e;
        }
        acc += d / fa[s].numel();
    }
    return acc / fa.size();
}

// ---- reports ----

namespace {
nlohmann::json real_to_json(real v) {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

real real_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::numeric_limits<real>::quiet_NaN();
    if (j.is_string())
        return j.get<std::string>() == "-inf" ? -std::numeric_limits<real>::infinity()
                                              : std::numeric_limits<real>::infinity();
    return j.get<real>();
}

std::string fmt_metric(real v) {
    if (std::isnan(v)) return "n/a";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}
} // namespace

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j;
    j["method"] = method;
    j["psnr_db"] = real_to_json(psnr_db);
    j["niqe"] = real_to_json(niqe);
    j["perc_proxy"] = real_to_json(perc_proxy);
    j["n_views"] = n_views;
    j["config_hash"] = config_hash;
    j["timestamp"] = timestamp;
    return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    MetricReport r;
    r.method = j.at("method").get<std::string>();
    r.psnr_db = real_from_json(j.at("psnr_db"));
    r.niqe = real_from_json(j.at("niqe"));
    r.perc_proxy = real_from_json(j.at("perc_proxy"));
    r.n_views = j.at("n_views").get<int>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
}

void MetricReport::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json().dump(2) << "\n";
}

MetricReport MetricReport::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("cannot read " + path.string());
    nlohmann::json j;
    in >> j;
    return from_json(j);
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

MetricReport evaluate_run(const std::filesystem::path& run_dir, const MultiViewDataset& dataset,
                          const CodecParams& codec, const NiqeModel& niqe_model) {
    const auto cfg_path = run_dir / kRunConfigFile;
    const auto field_path = run_dir / kRunFieldFile;
    std::string missing;
    for (const auto& p : {cfg_path, field_path})
        if (!std::filesystem::exists(p)) missing += (missing.empty() ? "" : ", ") + p.string();
    if (!missing.empty()) throw IngestionError("run incomplete; missing: " + missing);

    std::ifstream cin(cfg_path);
    std::string cfg_text((std::istreambuf_iterator<char>(cin)), std::istreambuf_iterator<char>());
    nlohmann::json cfg = nlohmann::json::parse(cfg_text);

    MetricReport rep;
    rep.method = cfg.value("method", "unknown");
    rep.config_hash = hash_hex(hash_string(cfg_text));
    rep.timestamp = utc_timestamp();

    RadianceField field = RadianceField::load(field_path);
    const std::vector<int>& views =
        dataset.eval_indices.empty() ? dataset.train_indices : dataset.eval_indices;
    rep.n_views = static_cast<int>(views.size());

    RenderOptions opts;
    opts.n_samples = 64;
    if (cfg.contains("i3ds") && cfg["i3ds"].contains("render_samples"))
        opts.n_samples = cfg["i3ds"]["render_samples"].get<int>();
    if (cfg.contains("background") && cfg["background"].is_array() &&
        cfg["background"].size() == 3)
        opts.background = {cfg["background"][0].get<real>(), cfg["background"][1].get<real>(),
                           cfg["background"][2].get<real>()};
    opts.near = dataset.near;
    opts.far = dataset.far;
    opts.seed = 0xE7A1;
    const int w = dataset.has_hr() ? dataset.hr_width() : 4 * dataset.lr_images[0].w;
    const int h = dataset.has_hr() ? dataset.hr_height() : 4 * dataset.lr_images[0].h;

    real psum = 0, nsum = 0, csum = 0;
    for (size_t v : views) {
        Image render = render_image(field, dataset.poses[v], w, h, opts);
        render.clamp01();
        nsum += niqe(render, niqe_model);
        if (dataset.has_hr()) {
            psum += psnr(render, dataset.hr_images[v]);
            csum += perc_proxy(render, dataset.hr_images[v], codec);
        }
    }
    const real nv = static_cast<real>(views.size());
    rep.niqe = nsum / nv;
    if (dataset.has_hr()) {
        rep.psnr_db = psum / nv;
        rep.perc_proxy = csum / nv;
    } else {
        rep.psnr_db = std::numeric_limits<real>::quiet_NaN();
        rep.perc_proxy = std::numeric_limits<real>::quiet_NaN();
    }
    return rep;
}

std::string comparison_csv(const std::vector<MetricReport>& reports) {
    std::vector<MetricReport> rs = reports;
    std::sort(rs.begin(), rs.end(),
              [](const MetricReport& a, const MetricReport& b) { return a.method < b.method; });
    std::ostringstream out;
    out << "method,psnr_db,niqe,perc_proxy,n_views,config_hash\n";
    for (const MetricReport& r : rs)
        out << r.method << "," << fmt_metric(r.psnr_db) << "," << fmt_metric(r.niqe) << ","
            << fmt_metric(r.perc_proxy) << "," << r.n_views << "," << r.config_hash << "\n";
    return out.str();
}

std::string comparison_text(const std::vector<MetricReport>& reports) {
    std::vector<MetricReport> rs = reports;
    std::sort(rs.begin(), rs.end(),
              [](const MetricReport& a, const MetricReport& b) { return a.method < b.method; });
    size_t mw = 6;
    for (const MetricReport& r : rs) mw = std::max(mw, r.method.size());
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-*s  %10s  %8s  %10s  %7s\n", static_cast<int>(mw),
                  "method", "psnr_db", "niqe", "perc_proxy", "n_views");
    out << buf;
    out << std::string(mw + 2 + 10 + 2 + 8 + 2 + 10 + 2 + 7, '-') << "\n";
    for (const MetricReport& r : rs) {
        std::snprintf(buf, sizeof(buf), "%-*s  %10s  %8s  %10s  %7d\n", static_cast<int>(mw),
                      r.method.c_str(), fmt_metric(r.psnr_db).c_str(),
                      fmt_metric(r.niqe).c_str(), fmt_metric(r.perc_proxy).c_str(), r.n_views);
        out << buf;
    }
    return out.str();
}

} // namespace vsdsr
