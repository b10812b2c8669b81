#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "pic/enc_vector.hpp"
#include "pic/errors.hpp"

using namespace pic;

namespace {

struct Env {
    Rng rng{31};
    HEParams p;
    HEKey k;
    FxpConfig cfg{40, 24}; // F = 16

    Env(unsigned lambda = 64, unsigned m_lvl = 2) {
        p = gen_params(lambda, m_lvl, rng);
        k = gen_key(p, rng);
    }
};

// Independent route: squared distance on raw integers, scaled by 2^(2F).
mpz_class plain_sqdist(const PlainVector& x, const PlainVector& y) {
    mpz_class acc = 0;
    for (size_t j = 0; j < x.dim(); j++) {
        mpz_class d = mpz_class(long(x.coords[j].raw)) - long(y.coords[j].raw);
        acc += d * d;
    }
    return acc;
}

mpz_class plain_dot(const PlainVector& x, const PlainVector& y) {
    mpz_class acc = 0;
    for (size_t j = 0; j < x.dim(); j++)
        acc += mpz_class(long(x.coords[j].raw)) * long(y.coords[j].raw);
    return acc;
}

PlainVector random_vec(std::mt19937_64& mt, size_t dim, double lo, double hi,
                       const FxpConfig& cfg) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> vals(dim);
    for (auto& v : vals) v = d(mt);
    return PlainVector::encode_reals(vals, cfg);
}

} // namespace

TEST_CASE("encrypt_vector round trip, zero vector, empty rejection") {
    Env e;
    std::mt19937_64 mt(1);
    PlainVector v = random_vec(mt, 16, -100, 100, e.cfg);
    EncVector enc = encrypt_vector(v, e.k, e.p, e.rng, "k_u(alice)");
    CHECK(enc.dim() == 16);
    CHECK(enc.key_tag == "k_u(alice)");
    PlainVector back = decrypt_vector(enc, e.k, e.p);
    CHECK(back.coords == v.coords);

    PlainVector zero{std::vector<FxpValue>(8, FxpValue{0})};
    EncVector ez = encrypt_vector(zero, e.k, e.p, e.rng);
    for (const auto& ct : ez.cts) CHECK(decrypt(ct, e.k, e.p) == 0);

    CHECK_THROWS_AS(encrypt_vector(PlainVector{}, e.k, e.p, e.rng), DimensionError);
}

TEST_CASE("phi_distance: examples and integer-exact oracle equivalence") {
    Env e;
    PlainVector x = PlainVector::encode_reals({1, 2}, e.cfg);
    PlainVector y = PlainVector::encode_reals({4, 6}, e.cfg);
    EncVector ex = encrypt_vector(x, e.k, e.p, e.rng);
    EncVector ey = encrypt_vector(y, e.k, e.p, e.rng);

    CHECK(decrypt_scaled(phi_distance(ex, ex), e.k, e.p) == 0);
    CHECK(decrypt_score(phi_distance(ex, ex), e.k, e.p, e.cfg) == 0.0);
    CHECK(decrypt_score(phi_distance(ex, ey), e.k, e.p, e.cfg) == doctest::Approx(25.0));

    std::mt19937_64 mt(2);
    for (size_t dim : {2, 64, 128}) {
        PlainVector a = random_vec(mt, dim, 0, 255, e.cfg);
        PlainVector b = random_vec(mt, dim, 0, 255, e.cfg);
        EncVector ea = encrypt_vector(a, e.k, e.p, e.rng);
        EncVector eb = encrypt_vector(b, e.k, e.p, e.rng);
        CHECK(decrypt_scaled(phi_distance(ea, eb), e.k, e.p) == plain_sqdist(a, b));
    }

    EncVector short_vec = encrypt_vector(PlainVector::encode_reals({1.0}, e.cfg), e.k, e.p, e.rng);
    CHECK_THROWS_AS(phi_distance(ex, short_vec), DimensionError);
}

TEST_CASE("phi_dot: examples, commutativity, signs") {
    Env e;
    PlainVector x = PlainVector::encode_reals({1, 0, 2}, e.cfg);
    PlainVector y = PlainVector::encode_reals({3, 5, 4}, e.cfg);
    PlainVector z = PlainVector::encode_reals({0, 0, 0}, e.cfg);
    EncVector ex = encrypt_vector(x, e.k, e.p, e.rng);
    EncVector ey = encrypt_vector(y, e.k, e.p, e.rng);
    EncVector ez = encrypt_vector(z, e.k, e.p, e.rng);

    CHECK(decrypt_score(phi_dot(ex, ey), e.k, e.p, e.cfg) == doctest::Approx(11.0));
    CHECK(decrypt_scaled(phi_dot(ex, ez), e.k, e.p) == 0);
    CHECK(decrypt_scaled(phi_dot(ex, ey), e.k, e.p) == decrypt_scaled(phi_dot(ey, ex), e.k, e.p));

    // negative values decode with correct sign
    PlainVector neg = PlainVector::encode_reals({-3, 1, -4}, e.cfg);
    EncVector en = encrypt_vector(neg, e.k, e.p, e.rng);
    CHECK(decrypt_scaled(phi_dot(ex, en), e.k, e.p) == plain_dot(x, neg));
    CHECK(decrypt_score(phi_dot(ex, en), e.k, e.p, e.cfg) == doctest::Approx(-11.0));
}

TEST_CASE("decrypt_score matches real arithmetic within resolution") {
    Env e;
    std::mt19937_64 mt(3);
    std::uniform_real_distribution<double> d(0.0, 1.0);
    for (int trial = 0; trial < 20; trial++) {
        std::vector<double> xs(32), ys(32);
        for (auto& v : xs) v = d(mt);
        for (auto& v : ys) v = d(mt);
        double real = 0;
        for (size_t j = 0; j < xs.size(); j++) real += (xs[j] - ys[j]) * (xs[j] - ys[j]);
        EncVector ex = encrypt_vector(PlainVector::encode_reals(xs, e.cfg), e.k, e.p, e.rng);
        EncVector ey = encrypt_vector(PlainVector::encode_reals(ys, e.cfg), e.k, e.p, e.rng);
        double got = decrypt_score(phi_distance(ex, ey), e.k, e.p, e.cfg);
        CHECK(std::fabs(got - real) <= 1e-3 * std::max(1.0, real));
    }
}

TEST_CASE("ranking preservation: decrypted order equals plaintext order") {
    Env e;
    std::mt19937_64 mt(4);
    PlainVector q = random_vec(mt, 8, 0, 50, e.cfg);
    EncVector eq = encrypt_vector(q, e.k, e.p, e.rng);
    std::vector<mpz_class> plain, enc;
    for (int i = 0; i < 12; i++) {
        PlainVector y = random_vec(mt, 8, 0, 50, e.cfg);
        EncVector ey = encrypt_vector(y, e.k, e.p, e.rng);
        plain.push_back(plain_sqdist(q, y));
        enc.push_back(decrypt_scaled(phi_distance(eq, ey), e.k, e.p));
    }
    CHECK(plain == enc); // exact integer equality implies identical ranking
}

TEST_CASE("convert_vector: chain to k_KA, strip/append inverse, key staging") {
    Env e;
    auto thirds = split_key(e.k, 3, e.p, e.rng);
    auto halves = split_key(e.k, 2, e.p, e.rng); // k = k_KA * k_CS

    std::mt19937_64 mt(5);
    PlainVector x = random_vec(mt, 8, 0, 50, e.cfg);
    PlainVector y = random_vec(mt, 8, 0, 50, e.cfg);

    // owner: encrypt under k_u, append k_u' and k_u'' -> under k
    EncVector owner = encrypt_vector(x, thirds[0], e.p, e.rng, "k_u");
    owner = convert_vector(owner, thirds[1], ConvertMode::append, "k_u*k_u'");
    owner = convert_vector(owner, thirds[2], ConvertMode::append, "k");
    EncVector other = encrypt_vector(y, e.k, e.p, e.rng, "k");
    // strip k_CS on both: now under k_KA, and phi decrypts under k_KA
    EncVector ka_x = convert_vector(owner, halves[1], ConvertMode::strip, "k_KA");
    EncVector ka_y = convert_vector(other, halves[1], ConvertMode::strip, "k_KA");
    CHECK(decrypt_scaled(phi_distance(ka_x, ka_y), halves[0], e.p) == plain_sqdist(x, y));

    // strip(append(v)) is bitwise identity
    HEKey f = gen_key(e.p, e.rng);
    EncVector fwd = convert_vector(ka_x, f, ConvertMode::append);
    EncVector back = convert_vector(fwd, f, ConvertMode::strip);
    for (size_t j = 0; j < ka_x.dim(); j++) CHECK(back.cts[j] == ka_x.cts[j]);

    // a phi output under k decrypts only under k: a split factor fails
    Ciphertext dist = phi_distance(owner, other);
    CHECK(decrypt_scaled(dist, e.k, e.p) == plain_sqdist(x, y));
    CHECK(lower(decrypt(dist, thirds[0], e.p), e.p.n) != plain_sqdist(x, y));
}

TEST_CASE("capacity guard rejects unsafe combinations") {
    Env e; // lambda = 64: n ~ 2^128
    CHECK_NOTHROW(check_capacity(128, FxpConfig{40, 24}, e.p));
    CHECK_THROWS_AS(check_capacity(128, FxpConfig{62, 30}, e.p), ConfigError);
    CHECK_THROWS_AS(check_capacity(0, FxpConfig{40, 24}, e.p), ConfigError);
    Rng rng2(7);
    HEParams big = gen_params(128, 2, rng2);
    CHECK_NOTHROW(check_capacity(1000, FxpConfig{40, 24}, big));
}

TEST_CASE("PICV serialization: round trip and the 64KB golden payload") {
    Rng rng(32);
    HEParams p = gen_params(128, 2, rng);
    HEKey k = gen_key(p, rng);
    FxpConfig cfg{40, 24};

    std::mt19937_64 mt(6);
    std::uniform_real_distribution<double> d(0.0, 255.0);
    std::vector<double> coords(128);
    for (auto& c : coords) c = d(mt);
    EncVector ev = encrypt_vector(PlainVector::encode_reals(coords, cfg), k, p, rng, "k");

    CHECK(enc_vector_payload_bytes(128, p) == 65536); // 64KB matrix payload
    Bytes b = serialize_enc_vector(ev, p);
    EncVector back = parse_enc_vector(b, p, "k");
    CHECK(back.dim() == ev.dim());
    for (size_t j = 0; j < ev.dim(); j++) CHECK(back.cts[j] == ev.cts[j]);
    CHECK(serialize_enc_vector(back, p) == b);
    CHECK(b[0] == 'P');
    CHECK(b[3] == 'V');

    Bytes trunc(b.begin(), b.end() - 3);
    CHECK_THROWS_AS(parse_enc_vector(trunc, p), ParseError);
}
