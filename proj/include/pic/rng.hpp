#pragma once

#include <cstdint>
#include <random>
#include <string>

#include <gmpxx.h>

namespace pic {

// Deterministic randomness source. One master seed drives the whole system;
// sub-generators are derived by label so entities and build steps stay
// reproducible independently of call order.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), mt_(seed) {
        gmp_randinit_mt(state_);
        gmp_randseed_ui(state_, static_cast<unsigned long>(seed));
    }

    Rng(const Rng&) = delete;
    Rng& operator=(const Rng&) = delete;

    Rng(Rng&& other) noexcept : seed_(other.seed_), mt_(other.mt_) {
        gmp_randinit_set(state_, other.state_);
    }

    ~Rng() { gmp_randclear(state_); }

    // Uniform residue in [0, n).
    mpz_class residue(const mpz_class& n) {
        mpz_class r;
        mpz_urandomm(r.get_mpz_t(), state_, n.get_mpz_t());
        return r;
    }

    // Uniform integer with exactly `bits` bits (top bit set).
    mpz_class exact_bits(unsigned bits) {
        mpz_class r;
        mpz_urandomb(r.get_mpz_t(), state_, bits);
        mpz_setbit(r.get_mpz_t(), bits - 1);
        return r;
    }

    uint64_t u64() { return mt_(); }

    uint64_t below(uint64_t bound) {
        std::uniform_int_distribution<uint64_t> d(0, bound - 1);
        return d(mt_);
    }

    double real01() {
        std::uniform_real_distribution<double> d(0.0, 1.0);
        return d(mt_);
    }

    std::mt19937_64& engine() { return mt_; }

    uint64_t seed() const { return seed_; }

    // Pure function of (seed, label): independent stream per role/step.
    Rng derive(const std::string& label) const {
        uint64_t h = 1469598103934665603ull; // FNV-1a
        for (unsigned char c : label) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return Rng(seed_ ^ h);
    }

private:
    uint64_t seed_;
    std::mt19937_64 mt_;
    gmp_randstate_t state_;
};

} // namespace pic
