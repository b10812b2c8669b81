#include "pic/enc_vector.hpp"

#include "pic/errors.hpp"

namespace pic {

PlainVector PlainVector::encode_reals(const std::vector<double>& vals, const FxpConfig& cfg) {
    PlainVector p;
    p.coords.reserve(vals.size());
    for (double v : vals) p.coords.push_back(encode(v, cfg));
    return p;
}

std::vector<double> PlainVector::decode_reals(const FxpConfig& cfg) const {
    std::vector<double> out;
    out.reserve(coords.size());
    for (const auto& c : coords) out.push_back(decode(c, cfg));
    return out;
}

EncVector encrypt_vector(const PlainVector& v, const HEKey& key, const HEParams& params,
                         Rng& rng, std::string key_tag) {
    if (v.dim() == 0) throw DimensionError("cannot encrypt an empty vector");
    EncVector out;
    out.key_tag = std::move(key_tag);
    out.cts.reserve(v.dim());
    for (const auto& c : v.coords)
        out.cts.push_back(encrypt(lift(c, params.n), key, params, rng));
    return out;
}

PlainVector decrypt_vector(const EncVector& x, const HEKey& key, const HEParams& params) {
    PlainVector out;
    out.coords.reserve(x.dim());
    for (const auto& ct : x.cts) {
        mpz_class v = lower(decrypt(ct, key, params), params.n);
        out.coords.push_back(FxpValue{to_int64(v)});
    }
    return out;
}

Ciphertext phi_distance(const EncVector& x, const EncVector& y) {
    if (x.dim() != y.dim() || x.dim() == 0)
        throw DimensionError("phi_distance: dimension mismatch");
    Ciphertext acc;
    for (size_t j = 0; j < x.dim(); j++) {
        Ciphertext diff = he_sub(x.cts[j], y.cts[j]);
        Ciphertext sq = he_mul(diff, diff);
        acc = (j == 0) ? sq : he_add(acc, sq);
    }
    return acc;
}

Ciphertext phi_dot(const EncVector& x, const EncVector& y) {
    if (x.dim() != y.dim() || x.dim() == 0)
        throw DimensionError("phi_dot: dimension mismatch");
    Ciphertext acc;
    for (size_t j = 0; j < x.dim(); j++) {
        Ciphertext p = he_mul(x.cts[j], y.cts[j]);
        acc = (j == 0) ? p : he_add(acc, p);
    }
    return acc;
}

mpz_class decrypt_scaled(const Ciphertext& c, const HEKey& key, const HEParams& params) {
    return lower(decrypt(c, key, params), params.n);
}

double decrypt_score(const Ciphertext& c, const HEKey& key, const HEParams& params,
                     const FxpConfig& cfg) {
    mpz_class v = decrypt_scaled(c, key, params);
    mpq_class q(v);
    q /= mpq_class(mpz_class(1) << (2 * cfg.frac_bits()));
    return q.get_d();
}

EncVector convert_vector(const EncVector& x, const HEKey& factor, ConvertMode mode,
                         std::string new_tag) {
    EncVector out;
    out.key_tag = std::move(new_tag);
    out.cts.reserve(x.dim());
    for (const auto& ct : x.cts)
        out.cts.push_back(mode == ConvertMode::append ? convert_append(ct, factor)
                                                      : convert_strip(ct, factor));
    return out;
}

void check_capacity(size_t dim, const FxpConfig& cfg, const HEParams& params) {
    cfg.validate();
    if (dim == 0) throw ConfigError("dimension must be positive");
    // Worst case per dimension: (2 * 2^word_bits)^2; summed over dim.
    mpz_class per = mpz_class(1) << (2 * (cfg.word_bits + 1));
    mpz_class worst = per * static_cast<unsigned long>(dim);
    if (worst >= params.n / 2)
        throw ConfigError("unsafe (dim, fixed-point, lambda) combination: "
                          "worst-case distance reaches n/2");
}

Bytes serialize_enc_vector(const EncVector& x, const HEParams& params) {
    ByteWriter w;
    w.magic("PICV");
    w.u8(kFormatVersion);
    w.u32be(static_cast<uint32_t>(x.dim()));
    for (const auto& ct : x.cts) w.raw(serialize_ciphertext(ct, params));
    return w.take();
}

EncVector parse_enc_vector(const Bytes& in, const HEParams& params, std::string key_tag) {
    ByteReader r(in);
    r.expect_magic("PICV");
    if (r.u8() != kFormatVersion) throw ParseError("unsupported format version");
    uint32_t dim = r.u32be();
    if (dim == 0) throw ParseError("empty encrypted vector");
    EncVector out;
    out.key_tag = std::move(key_tag);
    out.cts.reserve(dim);
    for (uint32_t i = 0; i < dim; i++) out.cts.push_back(parse_ciphertext(r, params));
    if (!r.done()) throw ParseError("trailing bytes after encrypted vector");
    return out;
}

size_t enc_vector_payload_bytes(size_t dim, const HEParams& params) {
    return dim * params.ciphertext_payload_bytes();
}

} // namespace pic
