#include "vsdsr/hashing.hpp"

#include <cstdio>

namespace vsdsr {

uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h) {
    const unsigned char* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; i++) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t hash_combine(uint64_t a, uint64_t b) {
    // hash each operand through the full byte chain so the result is
    // order-sensitive (seeding with `a` directly is symmetric for small values)
    return fnv1a64(&b, sizeof(b), fnv1a64(&a, sizeof(a)));
}

uint64_t hash_tensor(const Tensor& t, uint64_t h) {
    const auto& shape = t.shape();
    h = fnv1a64(shape.data(), shape.size() * sizeof(int64_t), h);
    return fnv1a64(t.data(), static_cast<size_t>(t.numel()) * sizeof(real), h);
}

uint64_t hash_string(const std::string& s, uint64_t h) { return fnv1a64(s.data(), s.size(), h); }

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace vsdsr
