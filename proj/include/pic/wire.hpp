#pragma once

#include <array>
#include <cstdint>

#include "pic/bytes.hpp"

namespace pic {

using QueryId = std::array<uint8_t, 16>;

// Wire envelope: magic "PIC1", 1-byte version, 1-byte message kind, 16-byte
// query id, 8-byte little-endian payload length, payload.
struct Frame {
    uint8_t version = 1;
    uint8_t kind = 0;
    QueryId query_id{};
    Bytes payload;
};

inline Bytes encode_frame(const Frame& f) {
    ByteWriter w;
    w.magic("PIC1");
    w.u8(f.version);
    w.u8(f.kind);
    w.raw(f.query_id.data(), f.query_id.size());
    w.u64le(f.payload.size());
    w.raw(f.payload);
    return w.take();
}

inline Frame decode_frame(ByteReader& r) {
    r.expect_magic("PIC1");
    Frame f;
    f.version = r.u8();
    if (f.version != 1) throw ParseError("unsupported wire version");
    f.kind = r.u8();
    for (auto& b : f.query_id) b = r.u8();
    uint64_t len = r.u64le();
    if (r.remaining() < len) throw ParseError("wire: truncated payload");
    f.payload.resize(len);
    for (uint64_t i = 0; i < len; i++) f.payload[i] = r.u8();
    return f;
}

inline Frame decode_frame(const Bytes& in) {
    ByteReader r(in);
    Frame f = decode_frame(r);
    if (!r.done()) throw ParseError("wire: trailing bytes");
    return f;
}

} // namespace pic
