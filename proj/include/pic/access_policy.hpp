#pragma once

#include <array>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "pic/bytes.hpp"

namespace pic {

using AttrHash = std::array<uint8_t, 32>;

// Trim + ASCII lowercase. Inputs are expected to already be NFC.
std::string canonicalize_attribute(const std::string& raw);

AttrHash hash_attribute(const std::string& raw); // SHA-256 of the canonical form

struct AttributeSet {
    std::set<AttrHash> hashes;

    bool contains(const AttrHash& h) const { return hashes.count(h) != 0; }
};

AttributeSet hash_attributes(const std::vector<std::string>& raw);

// Threshold-gate tree over hashed attribute leaves. AND = c-of-c, OR = 1-of-c.
// Parsed from s-expressions: (and "a" (or "b" "c")), (thresh 2 "a" "b" "c").
struct AccessTree {
    struct Node {
        bool is_leaf = false;
        AttrHash leaf{};
        uint32_t threshold = 0;
        std::vector<Node> children;
    };

    Node root;

    static AccessTree parse(const std::string& sexpr);

    bool evaluate(const AttributeSet& attrs) const;
    size_t leaf_count() const;

    Bytes to_bytes() const;
    static AccessTree from_bytes(const Bytes& in);
    static AccessTree from_bytes(ByteReader& r);
};

// Stand-in for attribute-based encryption: the payload sits under an
// authenticated symmetric box and the holder releases it only after the
// policy check. Wire form "PICE".
struct Envelope {
    AccessTree tree;
    std::array<uint8_t, 32> key{};
    std::array<uint8_t, 24> nonce{};
    Bytes box; // ciphertext + MAC

    Bytes to_bytes() const;
    static Envelope from_bytes(const Bytes& in);
};

Envelope seal_envelope(const Bytes& payload, const AccessTree& tree);

// AuthorizationError when attrs fail the tree; AuthenticationError when the
// box fails to open (tampered).
Bytes open_envelope(const Envelope& env, const AttributeSet& attrs);

// Policy-free decryption for holders of the raw envelope (simulation only).
Bytes open_envelope_unchecked(const Envelope& env);

} // namespace pic
