#pragma once

#include <cstdint>
#include <vector>

#include <gmpxx.h>

#include "pic/bytes.hpp"
#include "pic/matrix.hpp"
#include "pic/rng.hpp"

namespace pic {

// Public parameters of the multi-level homomorphic encryption. n = p*q for
// two distinct lambda-bit primes; the factors are discarded at generation.
struct HEParams {
    unsigned lambda = 0; // security parameter, bits per prime
    unsigned m_lvl = 0;  // matrix-size parameter, d = 2*m_lvl
    mpz_class n;

    uint32_t dim() const { return 2 * m_lvl; }
    // Fixed serialized width of one residue: ceil(2*lambda / 8) bytes.
    size_t entry_width() const { return (2 * size_t(lambda) + 7) / 8; }
    // Matrix payload of one ciphertext, excluding the header.
    size_t ciphertext_payload_bytes() const { return size_t(dim()) * dim() * entry_width(); }
};

// Invertible d x d matrix over Z_n with its precomputed inverse.
// Keys compose by ordered multiplication; products never commute.
struct HEKey {
    ModMatrix mat;
    ModMatrix inv;

    static HEKey identity(const HEParams& p) {
        return HEKey{ModMatrix::identity(p.dim(), p.n), ModMatrix::identity(p.dim(), p.n)};
    }
};

struct Ciphertext {
    ModMatrix mat;

    bool operator==(const Ciphertext& rhs) const { return mat == rhs.mat; }
    bool operator!=(const Ciphertext& rhs) const { return mat != rhs.mat; }
};

HEParams gen_params(unsigned lambda, unsigned m_lvl, Rng& rng);

// Uniformly random invertible matrix (rejection-sampled) with stored inverse.
HEKey gen_key(const HEParams& params, Rng& rng);

// Ordered t-way split: k_1 ... k_{t-1} random invertible, k_t solved so that
// k_1 * k_2 * ... * k_t = k.mat (mod n).
std::vector<HEKey> split_key(const HEKey& k, size_t t, const HEParams& params, Rng& rng);

// C = key.inv * U * key.mat with U upper-triangular, U[0][0] = msg, the other
// diagonal entries random invertible residues and the strict upper triangle
// random. Fresh randomness per call: equal plaintexts give distinct outputs.
Ciphertext encrypt(const mpz_class& msg, const HEKey& key, const HEParams& params, Rng& rng);

// (key.mat * C * key.inv)[0][0]. Wrong keys yield garbage, not errors.
mpz_class decrypt(const Ciphertext& c, const HEKey& key, const HEParams& params);

Ciphertext he_add(const Ciphertext& c1, const Ciphertext& c2);
Ciphertext he_sub(const Ciphertext& c1, const Ciphertext& c2);
Ciphertext he_mul(const Ciphertext& c1, const Ciphertext& c2);

// Re-keys a ciphertext under K to one under K*factor without decrypting.
Ciphertext convert_append(const Ciphertext& c, const HEKey& factor);
// Exact inverse of convert_append: a ciphertext under K*factor becomes one
// under K. Bit-exact round trip.
Ciphertext convert_strip(const Ciphertext& c, const HEKey& factor);

// Wire forms. Header: magic, 1-byte version, 2-byte d, 4-byte entry width,
// then fixed-width big-endian entries in row-major order.
Bytes serialize_key(const HEKey& k, const HEParams& params);       // "PICK"
HEKey parse_key(const Bytes& in, const HEParams& params);
Bytes serialize_ciphertext(const Ciphertext& c, const HEParams& params); // "PICC"
Ciphertext parse_ciphertext(ByteReader& r, const HEParams& params);
Ciphertext parse_ciphertext(const Bytes& in, const HEParams& params);

inline constexpr uint8_t kFormatVersion = 1;

} // namespace pic
