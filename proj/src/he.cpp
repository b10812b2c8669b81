#include "pic/he.hpp"

#include "pic/errors.hpp"

namespace pic {

namespace {

mpz_class random_prime(unsigned bits, Rng& rng) {
    for (;;) {
        mpz_class c = rng.exact_bits(bits);
        mpz_setbit(c.get_mpz_t(), 0);
        if (mpz_probab_prime_p(c.get_mpz_t(), 30) > 0) return c;
    }
}

mpz_class random_invertible_residue(const mpz_class& n, Rng& rng) {
    for (;;) {
        mpz_class r = rng.residue(n);
        mpz_class g;
        mpz_gcd(g.get_mpz_t(), r.get_mpz_t(), n.get_mpz_t());
        if (g == 1) return r;
    }
}

} // namespace

HEParams gen_params(unsigned lambda, unsigned m_lvl, Rng& rng) {
    if (lambda < 32) throw ConfigError("lambda must be >= 32");
    if (m_lvl < 1) throw ConfigError("m_lvl must be >= 1");
    HEParams p;
    p.lambda = lambda;
    p.m_lvl = m_lvl;
    mpz_class a = random_prime(lambda, rng);
    mpz_class b;
    do {
        b = random_prime(lambda, rng);
    } while (b == a);
    p.n = a * b;
    // a, b go out of scope here and are never stored.
    return p;
}

HEKey gen_key(const HEParams& params, Rng& rng) {
    for (;;) {
        ModMatrix m = ModMatrix::random(params.dim(), params.n, rng);
        auto inv = m.inverse();
        if (inv) return HEKey{std::move(m), std::move(*inv)};
    }
}

std::vector<HEKey> split_key(const HEKey& k, size_t t, const HEParams& params, Rng& rng) {
    if (t < 2) throw ConfigError("split_key requires t >= 2");
    std::vector<HEKey> parts;
    parts.reserve(t);
    ModMatrix prefix = ModMatrix::identity(params.dim(), params.n);
    ModMatrix prefix_inv = prefix;
    for (size_t i = 0; i + 1 < t; i++) {
        HEKey r = gen_key(params, rng);
        prefix = prefix.mul(r.mat);
        prefix_inv = r.inv.mul(prefix_inv);
        parts.push_back(std::move(r));
    }
    // Last part solved exactly: k_t = (k_1...k_{t-1})^-1 * k, and its inverse
    // is k^-1 * (k_1...k_{t-1}), both available without a fresh inversion.
    HEKey last;
    last.mat = prefix_inv.mul(k.mat);
    last.inv = k.inv.mul(prefix);
    parts.push_back(std::move(last));
    return parts;
}

Ciphertext encrypt(const mpz_class& msg, const HEKey& key, const HEParams& params, Rng& rng) {
    if (msg < 0 || msg >= params.n) throw RangeError("message outside [0, n)");
    const uint32_t d = params.dim();
    ModMatrix u(d, params.n);
    u.at(0, 0) = msg;
    for (uint32_t i = 1; i < d; i++) u.at(i, i) = random_invertible_residue(params.n, rng);
    for (uint32_t i = 0; i < d; i++)
        for (uint32_t j = i + 1; j < d; j++) u.at(i, j) = rng.residue(params.n);
    return Ciphertext{key.inv.mul(u).mul(key.mat)};
}

mpz_class decrypt(const Ciphertext& c, const HEKey& key, const HEParams& params) {
    (void)params;
    return key.mat.mul(c.mat).mul(key.inv).at(0, 0);
}

Ciphertext he_add(const Ciphertext& c1, const Ciphertext& c2) {
    return Ciphertext{c1.mat.add(c2.mat)};
}

Ciphertext he_sub(const Ciphertext& c1, const Ciphertext& c2) {
    return Ciphertext{c1.mat.sub(c2.mat)};
}

Ciphertext he_mul(const Ciphertext& c1, const Ciphertext& c2) {
    return Ciphertext{c1.mat.mul(c2.mat)};
}

Ciphertext convert_append(const Ciphertext& c, const HEKey& factor) {
    return Ciphertext{factor.inv.mul(c.mat).mul(factor.mat)};
}

Ciphertext convert_strip(const Ciphertext& c, const HEKey& factor) {
    return Ciphertext{factor.mat.mul(c.mat).mul(factor.inv)};
}

namespace {

void write_header(ByteWriter& w, const char magic[5], const HEParams& params) {
    w.magic(magic);
    w.u8(kFormatVersion);
    w.u16be(static_cast<uint16_t>(params.dim()));
    w.u32be(static_cast<uint32_t>(params.entry_width()));
}

void read_header(ByteReader& r, const char magic[5], const HEParams& params) {
    r.expect_magic(magic);
    uint8_t ver = r.u8();
    if (ver != kFormatVersion) throw ParseError("unsupported format version");
    uint16_t d = r.u16be();
    uint32_t width = r.u32be();
    if (d != params.dim()) throw ParseError("matrix dimension does not match params");
    if (width != params.entry_width()) throw ParseError("entry width does not match params");
}

void write_matrix(ByteWriter& w, const ModMatrix& m, size_t width) {
    for (uint32_t i = 0; i < m.dim(); i++)
        for (uint32_t j = 0; j < m.dim(); j++) w.mpz_fixed(m.at(i, j), width);
}

ModMatrix read_matrix(ByteReader& r, const HEParams& params) {
    ModMatrix m(params.dim(), params.n);
    for (uint32_t i = 0; i < params.dim(); i++)
        for (uint32_t j = 0; j < params.dim(); j++) {
            mpz_class v = r.mpz_fixed(params.entry_width());
            if (v >= params.n) throw ParseError("entry not reduced mod n");
            m.at(i, j) = std::move(v);
        }
    return m;
}

} // namespace

Bytes serialize_key(const HEKey& k, const HEParams& params) {
    ByteWriter w;
    write_header(w, "PICK", params);
    write_matrix(w, k.mat, params.entry_width());
    write_matrix(w, k.inv, params.entry_width());
    return w.take();
}

HEKey parse_key(const Bytes& in, const HEParams& params) {
    ByteReader r(in);
    read_header(r, "PICK", params);
    HEKey k;
    k.mat = read_matrix(r, params);
    k.inv = read_matrix(r, params);
    if (!k.mat.mul(k.inv).is_identity()) throw ParseError("key inverse check failed");
    return k;
}

Bytes serialize_ciphertext(const Ciphertext& c, const HEParams& params) {
    ByteWriter w;
    write_header(w, "PICC", params);
    write_matrix(w, c.mat, params.entry_width());
    return w.take();
}

Ciphertext parse_ciphertext(ByteReader& r, const HEParams& params) {
    read_header(r, "PICC", params);
    return Ciphertext{read_matrix(r, params)};
}

Ciphertext parse_ciphertext(const Bytes& in, const HEParams& params) {
    ByteReader r(in);
    return parse_ciphertext(r, params);
}

} // namespace pic
