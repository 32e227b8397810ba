#include "vsdsr/rng.hpp"

#include <cmath>
#include <sstream>

#include "vsdsr/errors.hpp"

namespace vsdsr {

uint64_t mix_seed(uint64_t seed, uint64_t key) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (key + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

RngStream::RngStream(uint64_t seed) : eng_(seed), seed_(seed) {}

real RngStream::uniform() {
    // 53-bit mantissa in [0, 1)
    return static_cast<real>(eng_() >> 11) * 0x1.0p-53;
}

real RngStream::uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

int64_t RngStream::uniform_int(int64_t lo, int64_t hi) {
    if (hi < lo) throw ConfigError("uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // rejection sampling keeps the draw unbiased
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
}

real RngStream::normal() {
    // Box-Muller; u1 shifted into (0,1] so the log is finite
    real u1 = static_cast<real>((eng_() >> 11) + 1) * 0x1.0p-53;
    real u2 = static_cast<real>(eng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void RngStream::fill_normal(Tensor& t) {
    for (int64_t i = 0; i < t.numel(); i++) t[i] = normal();
}

void RngStream::fill_uniform(Tensor& t, real lo, real hi) {
    for (int64_t i = 0; i < t.numel(); i++) t[i] = uniform(lo, hi);
}

std::string RngStream::state() const {
    std::ostringstream os;
    os << seed_ << " ";
    os << eng_;
    return os.str();
}

void RngStream::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> seed_;
    is >> eng_;
    if (!is) throw IngestionError("bad RNG state string");
}

} // namespace vsdsr
