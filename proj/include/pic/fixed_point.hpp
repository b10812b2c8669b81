#pragma once

#include <cmath>
#include <cstdint>

#include <gmpxx.h>

#include "pic/errors.hpp"

namespace pic {

// Fixed-point layout: raw = round(a * 2^frac_bits), stored as a signed 64-bit
// integer. word_bits caps |raw|; int_bits caps the integer part of a.
struct FxpConfig {
    unsigned word_bits = 40;
    unsigned int_bits = 24;

    unsigned frac_bits() const { return word_bits - int_bits; }
    double resolution() const { return std::ldexp(1.0, -int(frac_bits())); }

    void validate() const {
        if (int_bits == 0 || int_bits >= word_bits || word_bits > 62)
            throw ConfigError("fixed-point config requires 0 < int_bits < word_bits <= 62");
    }
};

struct FxpValue {
    int64_t raw = 0;

    bool operator==(const FxpValue& rhs) const { return raw == rhs.raw; }
};

namespace detail {
inline void check_word(int64_t raw, const FxpConfig& cfg, const char* op) {
    // |raw| < 2^word_bits
    if (raw >= (int64_t(1) << cfg.word_bits) || raw <= -(int64_t(1) << cfg.word_bits))
        throw RangeError(std::string(op) + ": fixed-point overflow beyond word_bits");
}
} // namespace detail

inline FxpValue encode(double a, const FxpConfig& cfg) {
    double limit = std::ldexp(1.0, int(cfg.int_bits) - 1);
    if (!(std::fabs(a) < limit))
        throw RangeError("encode: value outside representable range");
    return FxpValue{std::llround(std::ldexp(a, int(cfg.frac_bits())))};
}

inline double decode(const FxpValue& v, const FxpConfig& cfg) {
    return std::ldexp(double(v.raw), -int(cfg.frac_bits()));
}

inline FxpValue fxp_add(const FxpValue& a, const FxpValue& b, const FxpConfig& cfg) {
    int64_t r = a.raw + b.raw;
    detail::check_word(r, cfg, "fxp_add");
    return FxpValue{r};
}

inline FxpValue fxp_sub(const FxpValue& a, const FxpValue& b, const FxpConfig& cfg) {
    int64_t r = a.raw - b.raw;
    detail::check_word(r, cfg, "fxp_sub");
    return FxpValue{r};
}

inline FxpValue fxp_mul(const FxpValue& a, const FxpValue& b, const FxpConfig& cfg) {
    __int128 p = __int128(a.raw) * __int128(b.raw);
    __int128 q = p / (__int128(1) << cfg.frac_bits()); // integer quotient
    int64_t r = int64_t(q);
    if (__int128(r) != q) throw RangeError("fxp_mul: fixed-point overflow");
    detail::check_word(r, cfg, "fxp_mul");
    return FxpValue{r};
}

// Signed integer -> residue in [0, n): negatives map to n - |raw|.
inline mpz_class lift(const mpz_class& raw, const mpz_class& n) {
    mpz_class bound = n / 2;
    if (raw >= bound || -raw >= bound)
        throw RangeError("lift: magnitude >= n/2");
    return raw >= 0 ? raw : mpz_class(n + raw);
}

inline mpz_class lift(const FxpValue& v, const mpz_class& n) {
    return lift(mpz_class(static_cast<long>(v.raw)), n);
}

// Centered lift: residues above n/2 decode as negatives.
inline mpz_class lower(const mpz_class& r, const mpz_class& n) {
    return r > n / 2 ? mpz_class(r - n) : r;
}

inline int64_t to_int64(const mpz_class& v) {
    if (!v.fits_slong_p())
        throw RangeError("value does not fit a signed 64-bit integer");
    return static_cast<int64_t>(v.get_si());
}

} // namespace pic
