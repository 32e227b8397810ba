#include "vsdsr/lora.hpp"

#include <Eigen/Dense>

#include "vsdsr/container.hpp"
#include "vsdsr/errors.hpp"
#include "vsdsr/hashing.hpp"

namespace vsdsr {

using MatRM = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

Tensor effective_weight(const Tensor& W, const LoRAAdapter& a) {
    const int64_t m = a.m(), n = a.n(), r = a.rank;
    W.check_shape({m, n}, "effective_weight base");
    a.A.check_shape({m, r}, "adapter A");
    a.B.check_shape({r, n}, "adapter B");
    Tensor out = W;
    MapM om(out.data(), m, n);
    CMapM am(a.A.data(), m, r);
    CMapM bm(a.B.data(), r, n);
    om.noalias() += a.scale * (am * bm);
    return out;
}

void lora_grads(const Tensor& dL_dWp, const LoRAAdapter& a, Tensor& dL_dA, Tensor& dL_dB) {
    const int64_t m = a.m(), n = a.n(), r = a.rank;
    dL_dWp.check_shape({m, n}, "lora_grads upstream");
    dL_dA = Tensor({m, r});
    dL_dB = Tensor({r, n});
    CMapM gm(dL_dWp.data(), m, n);
    CMapM am(a.A.data(), m, r);
    CMapM bm(a.B.data(), r, n);
    MapM gam(dL_dA.data(), m, r);
    MapM gbm(dL_dB.data(), r, n);
    gam.noalias() = a.scale * (gm * bm.transpose());
    gbm.noalias() = a.scale * (am.transpose() * gm);
}

void AdapterSet::attach(const std::string& layer_id, int64_t m, int64_t n, int rank, real scale,
                        RngStream& rng) {
    if (adapters_.count(layer_id))
        throw ConfigError("adapter already attached to layer '" + layer_id + "'");
    if (rank < 1 || rank >= std::min(m, n))
        throw ConfigError("adapter rank must satisfy 1 <= r < min(m,n) for layer '" + layer_id +
                          "'");
    const real adapter_params = static_cast<real>(rank) * (m + n);
    if (adapter_params >= 0.1 * static_cast<real>(m) * static_cast<real>(n))
        throw ConfigError("adapter for layer '" + layer_id + "' breaks the parameter-economy " +
                          "bound: r(m+n) = " + std::to_string(rank * (m + n)) + " vs 10% of " +
                          std::to_string(m * n));
    LoRAAdapter a;
    a.layer_id = layer_id;
    a.rank = rank;
    a.scale = scale;
    a.A = Tensor({m, rank});
    for (int64_t i = 0; i < a.A.numel(); i++) a.A[i] = 0.01 * rng.normal();
    a.B = Tensor::zeros({rank, n});
    adapters_.emplace(layer_id, std::move(a));
}

void AdapterSet::detach(const std::string& layer_id) {
    if (!adapters_.erase(layer_id))
        throw ConfigError("no adapter attached to layer '" + layer_id + "'");
}

const LoRAAdapter& AdapterSet::at(const std::string& layer_id) const {
    auto it = adapters_.find(layer_id);
    if (it == adapters_.end())
        throw ConfigError("no adapter attached to layer '" + layer_id + "'");
    return it->second;
}

LoRAAdapter& AdapterSet::at(const std::string& layer_id) {
    auto it = adapters_.find(layer_id);
    if (it == adapters_.end())
        throw ConfigError("no adapter attached to layer '" + layer_id + "'");
    return it->second;
}

std::vector<Tensor*> AdapterSet::params() {
    std::vector<Tensor*> out;
    for (auto& [id, a] : adapters_) {
        out.push_back(&a.A);
        out.push_back(&a.B);
    }
    return out;
}

uint64_t AdapterSet::param_hash() const {
    uint64_t h = 0x10AA10AA10AA10AAULL;
    for (const auto& [id, a] : adapters_) {
        h = hash_combine(h, hash_string(id));
        h = hash_combine(h, hash_tensor(a.A));
        h = hash_combine(h, hash_tensor(a.B));
    }
    return h;
}

void AdapterSet::save(const std::filesystem::path& path) const {
    Container c;
    c.meta["kind"] = "lora_adapters";
    nlohmann::json layers = nlohmann::json::object();
    for (const auto& [id, a] : adapters_) {
        layers[id] = {{"rank", a.rank}, {"scale", a.scale}};
        c.tensors[id + ".A"] = a.A;
        c.tensors[id + ".B"] = a.B;
    }
    c.meta["layers"] = layers;
    c.save(path);
}

AdapterSet AdapterSet::load(const std::filesystem::path& path) {
    Container c = Container::load(path);
    if (c.meta.value("kind", "") != "lora_adapters")
        throw IngestionError("not an adapter file: " + path.string());
    AdapterSet set;
    for (auto& [id, info] : c.meta.at("layers").items()) {
        LoRAAdapter a;
        a.layer_id = id;
        a.rank = info.at("rank").get<int>();
        a.scale = info.at("scale").get<real>();
        a.A = c.at(id + ".A");
        a.B = c.at(id + ".B");
        if (a.A.ndim() != 2 || a.B.ndim() != 2 || a.A.dim(1) != a.rank || a.B.dim(0) != a.rank)
            throw IngestionError("adapter '" + id + "' has inconsistent shapes in " +
                                 path.string());
        set.adapters_.emplace(id, std::move(a));
    }
    return set;
}

} // namespace vsdsr
