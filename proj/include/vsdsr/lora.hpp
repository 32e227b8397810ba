#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "vsdsr/rng.hpp"
#include "vsdsr/tensor.hpp"

namespace vsdsr {

// Low-rank adapter on one base weight matrix: W' = W + scale * A * B.
// Conv kernels participate as their flattened [out_ch, in_ch*k*k] matrices.
struct LoRAAdapter {
    Tensor A;    // [m, r]
    Tensor B;    // [r, n], zero at init
    int rank = 4;
    real scale = 1.0;
    std::string layer_id;

    int64_t m() const { return A.dim(0); }
    int64_t n() const { return B.dim(1); }
};

// [OP] effective_weight: W + scale*(A*B); W is never mutated.
Tensor effective_weight(const Tensor& W, const LoRAAdapter& adapter);

// [OP] lora_grads: dL/dA = (dL/dW') B^T scale, dL/dB = A^T (dL/dW') scale.
void lora_grads(const Tensor& dL_dWp, const LoRAAdapter& adapter, Tensor& dL_dA, Tensor& dL_dB);

// Named adapter collection. attach() enforces the parameter-economy bound
// r(m+n) < 10% of m*n and rejects double-attachment.
class AdapterSet {
public:
    // A ~ N(0, 0.01^2), B = 0, so the adapted model starts bit-equal to the
    // frozen one.
    void attach(const std::string& layer_id, int64_t m, int64_t n, int rank, real scale,
                RngStream& rng);
    void detach(const std::string& layer_id);
    bool has(const std::string& layer_id) const { return adapters_.count(layer_id) > 0; }
    const LoRAAdapter& at(const std::string& layer_id) const;
    LoRAAdapter& at(const std::string& layer_id);
    size_t size() const { return adapters_.size(); }
    bool empty() const { return adapters_.empty(); }

    std::map<std::string, LoRAAdapter>& all() { return adapters_; }
    const std::map<std::string, LoRAAdapter>& all() const { return adapters_; }

    // A and B of every adapter, in layer-name order (stable for optimizers).
    std::vector<Tensor*> params();

    uint64_t param_hash() const;
    void save(const std::filesystem::path& path) const;
    static AdapterSet load(const std::filesystem::path& path);

private:
    std::map<std::string, LoRAAdapter> adapters_;
};

} // namespace vsdsr
