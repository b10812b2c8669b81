#include "pic/matrix.hpp"

#include "pic/errors.hpp"

namespace pic {

ModMatrix::ModMatrix(uint32_t d, const mpz_class& n) : d_(d), n_(n), e_(size_t(d) * d, mpz_class(0)) {
    if (d == 0) throw DimensionError("matrix dimension must be positive");
    if (n < 2) throw RangeError("modulus must be >= 2");
}

ModMatrix ModMatrix::identity(uint32_t d, const mpz_class& n) {
    ModMatrix m(d, n);
    for (uint32_t i = 0; i < d; i++) m.at(i, i) = 1;
    return m;
}

ModMatrix ModMatrix::random(uint32_t d, const mpz_class& n, Rng& rng) {
    ModMatrix m(d, n);
    for (auto& v : m.e_) v = rng.residue(n);
    return m;
}

ModMatrix ModMatrix::mul(const ModMatrix& rhs) const {
    if (d_ != rhs.d_) throw DimensionError("matrix dimension mismatch");
    ModMatrix out(d_, n_);
    mpz_class acc;
    for (uint32_t i = 0; i < d_; i++) {
        for (uint32_t j = 0; j < d_; j++) {
            acc = 0;
            for (uint32_t k = 0; k < d_; k++)
                mpz_addmul(acc.get_mpz_t(), at(i, k).get_mpz_t(), rhs.at(k, j).get_mpz_t());
            mpz_mod(out.at(i, j).get_mpz_t(), acc.get_mpz_t(), n_.get_mpz_t());
        }
    }
    return out;
}

ModMatrix ModMatrix::add(const ModMatrix& rhs) const {
    if (d_ != rhs.d_) throw DimensionError("matrix dimension mismatch");
    ModMatrix out(d_, n_);
    for (size_t i = 0; i < e_.size(); i++) {
        out.e_[i] = e_[i] + rhs.e_[i];
        if (out.e_[i] >= n_) out.e_[i] -= n_;
    }
    return out;
}

ModMatrix ModMatrix::sub(const ModMatrix& rhs) const {
    if (d_ != rhs.d_) throw DimensionError("matrix dimension mismatch");
    ModMatrix out(d_, n_);
    for (size_t i = 0; i < e_.size(); i++) {
        out.e_[i] = e_[i] - rhs.e_[i];
        if (out.e_[i] < 0) out.e_[i] += n_;
    }
    return out;
}

mpz_class ModMatrix::trace() const {
    mpz_class t = 0;
    for (uint32_t i = 0; i < d_; i++) t += at(i, i);
    return t % n_;
}

bool ModMatrix::is_identity() const {
    for (uint32_t i = 0; i < d_; i++)
        for (uint32_t j = 0; j < d_; j++)
            if (at(i, j) != (i == j ? 1 : 0)) return false;
    return true;
}

void ModMatrix::faddeev(mpz_class& det_out, ModMatrix* inv_numerator) const {
    // M_1 = I, c_1 = -tr(A); M_k = A M_{k-1} + c_{k-1} I, c_k = -tr(A M_k)/k.
    // det = (-1)^d c_d and A^{-1} = -M_d / c_d.
    ModMatrix M = identity(d_, n_);
    mpz_class c = (n_ - trace()) % n_;
    mpz_class kinv;
    for (uint32_t k = 2; k <= d_; k++) {
        ModMatrix AM = mul(M);
        for (uint32_t i = 0; i < d_; i++) {
            AM.at(i, i) += c;
            mpz_mod(AM.at(i, i).get_mpz_t(), AM.at(i, i).get_mpz_t(), n_.get_mpz_t());
        }
        M = std::move(AM);
        mpz_class t = mul(M).trace();
        mpz_class kz = k;
        if (mpz_invert(kinv.get_mpz_t(), kz.get_mpz_t(), n_.get_mpz_t()) == 0)
            throw RangeError("modulus has a prime factor <= matrix dimension");
        c = ((n_ - t) % n_) * kinv % n_;
    }
    det_out = (d_ % 2 == 0) ? c : (n_ - c) % n_;
    if (inv_numerator) *inv_numerator = std::move(M);
}

mpz_class ModMatrix::determinant() const {
    if (d_ == 1) return at(0, 0);
    mpz_class det;
    faddeev(det, nullptr);
    return det;
}

std::optional<ModMatrix> ModMatrix::inverse() const {
    mpz_class det, c_d, c_d_inv;
    ModMatrix M(d_, n_);
    if (d_ == 1) {
        mpz_class inv;
        if (mpz_invert(inv.get_mpz_t(), at(0, 0).get_mpz_t(), n_.get_mpz_t()) == 0)
            return std::nullopt;
        ModMatrix out(1, n_);
        out.at(0, 0) = inv;
        return out;
    }
    faddeev(det, &M);
    // c_d = (-1)^d det
    c_d = (d_ % 2 == 0) ? det : (n_ - det) % n_;
    if (mpz_invert(c_d_inv.get_mpz_t(), c_d.get_mpz_t(), n_.get_mpz_t()) == 0)
        return std::nullopt;
    mpz_class neg = (n_ - c_d_inv) % n_;
    ModMatrix out(d_, n_);
    for (uint32_t i = 0; i < d_; i++)
        for (uint32_t j = 0; j < d_; j++)
            out.at(i, j) = M.at(i, j) * neg % n_;
    return out;
}

} // namespace pic
