#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "vsdsr/tensor.hpp"

namespace vsdsr {

// splitmix64 step; used to derive independent child seeds from (seed, key).
uint64_t mix_seed(uint64_t seed, uint64_t key);

// Deterministic random stream. Gaussians use an explicit Box-Muller transform
// instead of std::normal_distribution, whose algorithm is implementation
// defined; this keeps byte-for-byte reproducibility across standard libraries.
class RngStream {
public:
    explicit RngStream(uint64_t seed);

    // Independent stream derived from this stream's seed and a key. Does not
    // advance this stream.
    RngStream child(uint64_t key) const { return RngStream(mix_seed(seed_, key)); }

    uint64_t seed() const { return seed_; }
    uint64_t next_u64() { return eng_(); }

    real uniform();                        // [0, 1)
    real uniform(real lo, real hi);        // [lo, hi)
    int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive on both ends, unbiased
    real normal();                         // N(0, 1)

    void fill_normal(Tensor& t);
    void fill_uniform(Tensor& t, real lo, real hi);

    // Textual engine state (mt19937_64 stream-insertion format), restorable.
    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 eng_;
    uint64_t seed_ = 0;
};

} // namespace vsdsr
