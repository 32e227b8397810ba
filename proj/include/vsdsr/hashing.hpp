#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vsdsr/tensor.hpp"

namespace vsdsr {

// FNV-1a over raw bytes. Used for the freeze contracts: frozen checkpoints
// record their hash and pipeline stages verify it did not move.
uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ull);

uint64_t hash_combine(uint64_t a, uint64_t b);
uint64_t hash_tensor(const Tensor& t, uint64_t h = 0xcbf29ce484222325ull);
uint64_t hash_string(const std::string& s, uint64_t h = 0xcbf29ce484222325ull);

std::string hash_hex(uint64_t h);

} // namespace vsdsr
