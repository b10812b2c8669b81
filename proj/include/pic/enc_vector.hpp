#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pic/fixed_point.hpp"
#include "pic/he.hpp"

namespace pic {

// Feature vector in fixed-point form.
struct PlainVector {
    std::vector<FxpValue> coords;

    size_t dim() const { return coords.size(); }

    static PlainVector encode_reals(const std::vector<double>& vals, const FxpConfig& cfg);
    std::vector<double> decode_reals(const FxpConfig& cfg) const;
};

// Per-dimension ciphertexts of one vector. key_tag is an audit label naming
// the key stage ("k_u(alice)", "k_KA", ...); it never carries key material.
struct EncVector {
    std::vector<Ciphertext> cts;
    std::string key_tag;

    size_t dim() const { return cts.size(); }
};

enum class ConvertMode { append, strip };

EncVector encrypt_vector(const PlainVector& v, const HEKey& key, const HEParams& params,
                         Rng& rng, std::string key_tag = {});

// Centered decode of every coordinate back to fixed-point raws.
PlainVector decrypt_vector(const EncVector& x, const HEKey& key, const HEParams& params);

// Ciphertext of the squared Euclidean distance sum_j (x_j - y_j)^2 at scale
// 2^(2*frac_bits). One homomorphic multiplication of depth per dimension.
Ciphertext phi_distance(const EncVector& x, const EncVector& y);

// Ciphertext of the dot product sum_j x_j * y_j at the same scale.
Ciphertext phi_dot(const EncVector& x, const EncVector& y);

// Centered signed value of a phi output; stays at scale 2^(2*frac_bits).
mpz_class decrypt_scaled(const Ciphertext& c, const HEKey& key, const HEParams& params);

// Real-valued score: centered decode then rescale by 2^(2*frac_bits).
double decrypt_score(const Ciphertext& c, const HEKey& key, const HEParams& params,
                     const FxpConfig& cfg);

EncVector convert_vector(const EncVector& x, const HEKey& factor, ConvertMode mode,
                         std::string new_tag = {});

// Rejects (dim, fixed-point, params) combinations whose worst-case phi output
// could reach n/2 and wrap. dim * (2^(word_bits+1))^2 must stay below n/2.
void check_capacity(size_t dim, const FxpConfig& cfg, const HEParams& params);

// Wire form "PICV": magic, 1-byte version, 4-byte dim, then the concatenated
// ciphertexts. Matrix payload excludes all headers: dim * d^2 * entry_width.
Bytes serialize_enc_vector(const EncVector& x, const HEParams& params);
EncVector parse_enc_vector(const Bytes& in, const HEParams& params, std::string key_tag = {});
size_t enc_vector_payload_bytes(size_t dim, const HEParams& params);

} // namespace pic
