#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include <gmpxx.h>

#include "pic/errors.hpp"

namespace pic {

using Bytes = std::vector<uint8_t>;

// Append-only writer for the fixed binary formats (PICK/PICC/PICV/PICX/PIC1
// and message payloads). Multi-byte integers are big-endian unless a format
// explicitly says otherwise.
class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }

    void u16be(uint16_t v) {
        buf_.push_back(static_cast<uint8_t>(v >> 8));
        buf_.push_back(static_cast<uint8_t>(v));
    }

    void u32be(uint32_t v) {
        for (int s = 24; s >= 0; s -= 8) buf_.push_back(static_cast<uint8_t>(v >> s));
    }

    void u64be(uint64_t v) {
        for (int s = 56; s >= 0; s -= 8) buf_.push_back(static_cast<uint8_t>(v >> s));
    }

    void u64le(uint64_t v) {
        for (int s = 0; s < 64; s += 8) buf_.push_back(static_cast<uint8_t>(v >> s));
    }

    void i64be(int64_t v) { u64be(static_cast<uint64_t>(v)); }

    void f32le(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        for (int s = 0; s < 32; s += 8) buf_.push_back(static_cast<uint8_t>(bits >> s));
    }

    void raw(const uint8_t* p, size_t len) { buf_.insert(buf_.end(), p, p + len); }
    void raw(const Bytes& b) { raw(b.data(), b.size()); }

    void magic(const char tag[5]) { raw(reinterpret_cast<const uint8_t*>(tag), 4); }

    void str(const std::string& s) {
        u32be(static_cast<uint32_t>(s.size()));
        raw(reinterpret_cast<const uint8_t*>(s.data()), s.size());
    }

    void blob(const Bytes& b) {
        u32be(static_cast<uint32_t>(b.size()));
        raw(b);
    }

    // Fixed-width big-endian residue, left-padded with zeros.
    void mpz_fixed(const mpz_class& v, size_t width) {
        size_t need = (mpz_sizeinbase(v.get_mpz_t(), 2) + 7) / 8;
        if (v < 0 || need > width)
            throw RangeError("mpz_fixed: value does not fit the entry width");
        size_t old = buf_.size();
        buf_.resize(old + width, 0);
        if (v != 0) {
            size_t count = 0;
            mpz_export(buf_.data() + old + (width - need), &count, 1, 1, 1, 0, v.get_mpz_t());
        }
    }

    const Bytes& data() const { return buf_; }
    Bytes take() { return std::move(buf_); }
    size_t size() const { return buf_.size(); }

private:
    Bytes buf_;
};

class ByteReader {
public:
    ByteReader(const uint8_t* p, size_t len) : p_(p), len_(len) {}
    explicit ByteReader(const Bytes& b) : ByteReader(b.data(), b.size()) {}

    uint8_t u8() { return need(1)[0]; }

    uint16_t u16be() {
        const uint8_t* p = need(2);
        return static_cast<uint16_t>((p[0] << 8) | p[1]);
    }

    uint32_t u32be() {
        const uint8_t* p = need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; i++) v = (v << 8) | p[i];
        return v;
    }

    uint64_t u64be() {
        const uint8_t* p = need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v = (v << 8) | p[i];
        return v;
    }

    uint64_t u64le() {
        const uint8_t* p = need(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; i--) v = (v << 8) | p[i];
        return v;
    }

    int64_t i64be() { return static_cast<int64_t>(u64be()); }

    float f32le() {
        const uint8_t* p = need(4);
        uint32_t bits = 0;
        for (int i = 3; i >= 0; i--) bits = (bits << 8) | p[i];
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    void expect_magic(const char tag[5]) {
        const uint8_t* p = need(4);
        if (std::memcmp(p, tag, 4) != 0)
            throw ParseError(std::string("bad magic, expected ") + tag);
    }

    std::string str() {
        uint32_t n = u32be();
        const uint8_t* p = need(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    Bytes blob() {
        uint32_t n = u32be();
        const uint8_t* p = need(n);
        return Bytes(p, p + n);
    }

    mpz_class mpz_fixed(size_t width) {
        const uint8_t* p = need(width);
        mpz_class v;
        mpz_import(v.get_mpz_t(), width, 1, 1, 1, 0, p);
        return v;
    }

    Bytes rest() {
        Bytes out(p_ + pos_, p_ + len_);
        pos_ = len_;
        return out;
    }

    size_t remaining() const { return len_ - pos_; }
    bool done() const { return pos_ == len_; }

private:
    const uint8_t* need(size_t n) {
        if (len_ - pos_ < n) throw ParseError("truncated input");
        const uint8_t* p = p_ + pos_;
        pos_ += n;
        return p;
    }

    const uint8_t* p_;
    size_t len_;
    size_t pos_ = 0;
};

} // namespace pic
