#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <gmpxx.h>

#include "pic/rng.hpp"

namespace pic {

// Square matrix over Z_n. All entries are kept reduced in [0, n).
class ModMatrix {
public:
    ModMatrix() : d_(0) {}
    ModMatrix(uint32_t d, const mpz_class& n);

    static ModMatrix identity(uint32_t d, const mpz_class& n);
    static ModMatrix random(uint32_t d, const mpz_class& n, Rng& rng);

    uint32_t dim() const { return d_; }
    const mpz_class& modulus() const { return n_; }

    const mpz_class& at(uint32_t r, uint32_t c) const { return e_[r * d_ + c]; }
    mpz_class& at(uint32_t r, uint32_t c) { return e_[r * d_ + c]; }

    void set(uint32_t r, uint32_t c, const mpz_class& v) { e_[r * d_ + c] = v % n_; }

    ModMatrix mul(const ModMatrix& rhs) const;
    ModMatrix add(const ModMatrix& rhs) const;
    ModMatrix sub(const ModMatrix& rhs) const;

    // Determinant and inverse mod n via Faddeev-LeVerrier; avoids division by
    // arbitrary residues (only 1..d, coprime to n since n's prime factors are
    // large). Returns nullopt when gcd(det, n) != 1.
    mpz_class determinant() const;
    std::optional<ModMatrix> inverse() const;

    bool operator==(const ModMatrix& rhs) const { return d_ == rhs.d_ && e_ == rhs.e_; }
    bool operator!=(const ModMatrix& rhs) const { return !(*this == rhs); }

    bool is_identity() const;

    mpz_class trace() const;

private:
    // Char-poly recurrence shared by determinant() and inverse().
    void faddeev(mpz_class& det_out, ModMatrix* inv_numerator) const;

    uint32_t d_;
    mpz_class n_;
    std::vector<mpz_class> e_;
};

} // namespace pic
