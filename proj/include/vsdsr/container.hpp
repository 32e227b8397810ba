#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "vsdsr/tensor.hpp"

namespace vsdsr {

// Versioned binary container used for every checkpoint and data blob.
//
// Layout (little-endian):
//   8 bytes   magic "VSDSRBIN"
//   u32       format version (currently 1)
//   u64       metadata length, followed by that many bytes of UTF-8 JSON
//   u32       tensor count, then per tensor:
//     u32       name length + name bytes
//     u32       ndim, then ndim * i64 dims
//     f64[]     row-major data
//
// Tensors are stored in name order so identical contents serialize to
// identical bytes.
struct Container {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> tensors;

    void save(const std::filesystem::path& path) const;
    static Container load(const std::filesystem::path& path);

    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return tensors.count(name) > 0; }
};

} // namespace vsdsr
