#include "pic/access_policy.hpp"

#include <cctype>

#include <sodium.h>

#include "pic/errors.hpp"

namespace pic {

namespace {

void ensure_sodium() {
    static const int rc = sodium_init();
    if (rc < 0) throw Error("libsodium initialization failed");
}

} // namespace

std::string canonicalize_attribute(const std::string& raw) {
    size_t b = 0, e = raw.size();
    while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) b++;
    while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) e--;
    std::string out = raw.substr(b, e - b);
    for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

AttrHash hash_attribute(const std::string& raw) {
    ensure_sodium();
    std::string canon = canonicalize_attribute(raw);
    AttrHash h;
    crypto_hash_sha256(h.data(), reinterpret_cast<const unsigned char*>(canon.data()),
                       canon.size());
    return h;
}

AttributeSet hash_attributes(const std::vector<std::string>& raw) {
    AttributeSet s;
    for (const auto& a : raw) s.hashes.insert(hash_attribute(a));
    return s;
}

// ---- s-expression parsing ----

namespace {

struct Token {
    enum Kind { LParen, RParen, Str, Symbol, End } kind;
    std::string text;
};

class Lexer {
public:
    explicit Lexer(const std::string& s) : s_(s) {}

    Token next() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) pos_++;
        if (pos_ >= s_.size()) return {Token::End, {}};
        char c = s_[pos_];
        if (c == '(') { pos_++; return {Token::LParen, "("}; }
        if (c == ')') { pos_++; return {Token::RParen, ")"}; }
        if (c == '"') {
            pos_++;
            std::string out;
            while (pos_ < s_.size() && s_[pos_] != '"') {
                if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) pos_++;
                out.push_back(s_[pos_++]);
            }
            if (pos_ >= s_.size()) throw ParseError("policy: unterminated string");
            pos_++;
            return {Token::Str, out};
        }
        std::string out;
        while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) &&
               s_[pos_] != '(' && s_[pos_] != ')')
            out.push_back(s_[pos_++]);
        return {Token::Symbol, out};
    }

private:
    const std::string& s_;
    size_t pos_ = 0;
};

AccessTree::Node parse_node(Lexer& lx, Token tok) {
    if (tok.kind == Token::Str) {
        AccessTree::Node n;
        n.is_leaf = true;
        n.leaf = hash_attribute(tok.text);
        return n;
    }
    if (tok.kind != Token::LParen) throw ParseError("policy: expected '(' or attribute string");
    Token op = lx.next();
    if (op.kind != Token::Symbol) throw ParseError("policy: expected gate name after '('");

    AccessTree::Node n;
    bool thresh = false;
    if (op.text == "and" || op.text == "or") {
        // threshold fixed after children are known
    } else if (op.text == "thresh") {
        thresh = true;
        Token t = lx.next();
        if (t.kind != Token::Symbol) throw ParseError("policy: thresh needs a count");
        try {
            n.threshold = static_cast<uint32_t>(std::stoul(t.text));
        } catch (const std::exception&) {
            throw ParseError("policy: bad threshold count");
        }
    } else {
        throw ParseError("policy: unknown gate '" + op.text + "'");
    }

    for (;;) {
        Token t = lx.next();
        if (t.kind == Token::RParen) break;
        if (t.kind == Token::End) throw ParseError("policy: missing ')'");
        n.children.push_back(parse_node(lx, t));
    }
    if (n.children.empty()) throw ParseError("policy: gate without children");
    if (op.text == "and") n.threshold = static_cast<uint32_t>(n.children.size());
    if (op.text == "or") n.threshold = 1;
    if (thresh && (n.threshold < 1 || n.threshold > n.children.size()))
        throw ParseError("policy: threshold out of range");
    return n;
}

bool eval_node(const AccessTree::Node& n, const AttributeSet& attrs) {
    if (n.is_leaf) return attrs.contains(n.leaf);
    uint32_t sat = 0;
    for (const auto& c : n.children)
        if (eval_node(c, attrs)) sat++;
    return sat >= n.threshold;
}

size_t count_leaves(const AccessTree::Node& n) {
    if (n.is_leaf) return 1;
    size_t total = 0;
    for (const auto& c : n.children) total += count_leaves(c);
    return total;
}

void write_node(ByteWriter& w, const AccessTree::Node& n) {
    w.u8(n.is_leaf ? 1 : 0);
    if (n.is_leaf) {
        w.raw(n.leaf.data(), n.leaf.size());
        return;
    }
    w.u32be(n.threshold);
    w.u32be(static_cast<uint32_t>(n.children.size()));
    for (const auto& c : n.children) write_node(w, c);
}

AccessTree::Node read_node(ByteReader& r, int depth) {
    if (depth > 64) throw ParseError("policy: tree too deep");
    AccessTree::Node n;
    n.is_leaf = r.u8() != 0;
    if (n.is_leaf) {
        for (auto& b : n.leaf) b = r.u8();
        return n;
    }
    n.threshold = r.u32be();
    uint32_t cnt = r.u32be();
    if (cnt == 0 || n.threshold < 1 || n.threshold > cnt)
        throw ParseError("policy: malformed gate");
    n.children.reserve(cnt);
    for (uint32_t i = 0; i < cnt; i++) n.children.push_back(read_node(r, depth + 1));
    return n;
}

} // namespace

AccessTree AccessTree::parse(const std::string& sexpr) {
    Lexer lx(sexpr);
    Token t = lx.next();
    if (t.kind == Token::End) throw ParseError("policy: empty expression");
    AccessTree tree;
    tree.root = parse_node(lx, t);
    if (lx.next().kind != Token::End) throw ParseError("policy: trailing tokens");
    return tree;
}

bool AccessTree::evaluate(const AttributeSet& attrs) const { return eval_node(root, attrs); }

size_t AccessTree::leaf_count() const { return count_leaves(root); }

Bytes AccessTree::to_bytes() const {
    ByteWriter w;
    write_node(w, root);
    return w.take();
}

AccessTree AccessTree::from_bytes(ByteReader& r) {
    AccessTree t;
    t.root = read_node(r, 0);
    return t;
}

AccessTree AccessTree::from_bytes(const Bytes& in) {
    ByteReader r(in);
    AccessTree t = from_bytes(r);
    if (!r.done()) throw ParseError("policy: trailing bytes");
    return t;
}

// ---- envelope ----

Envelope seal_envelope(const Bytes& payload, const AccessTree& tree) {
    ensure_sodium();
    Envelope env;
    env.tree = tree;
    randombytes_buf(env.key.data(), env.key.size());
    randombytes_buf(env.nonce.data(), env.nonce.size());
    env.box.resize(payload.size() + crypto_secretbox_MACBYTES);
    crypto_secretbox_easy(env.box.data(), payload.data(), payload.size(), env.nonce.data(),
                          env.key.data());
    return env;
}

Bytes open_envelope(const Envelope& env, const AttributeSet& attrs) {
    ensure_sodium();
    if (!env.tree.evaluate(attrs))
        throw AuthorizationError("attributes do not satisfy the access policy");
    return open_envelope_unchecked(env);
}

Bytes open_envelope_unchecked(const Envelope& env) {
    ensure_sodium();
    if (env.box.size() < crypto_secretbox_MACBYTES)
        throw AuthenticationError("envelope too short");
    Bytes out(env.box.size() - crypto_secretbox_MACBYTES);
    if (crypto_secretbox_open_easy(out.data(), env.box.data(), env.box.size(), env.nonce.data(),
                                   env.key.data()) != 0)
        throw AuthenticationError("envelope failed authentication");
    return out;
}

Bytes Envelope::to_bytes() const {
    ByteWriter w;
    w.magic("PICE");
    w.u8(1);
    w.blob(tree.to_bytes());
    w.raw(key.data(), key.size());
    w.raw(nonce.data(), nonce.size());
    w.blob(box);
    return w.take();
}

Envelope Envelope::from_bytes(const Bytes& in) {
    ByteReader r(in);
    r.expect_magic("PICE");
    if (r.u8() != 1) throw ParseError("unsupported envelope version");
    Envelope env;
    Bytes tb = r.blob();
    env.tree = AccessTree::from_bytes(tb);
    for (auto& b : env.key) b = r.u8();
    for (auto& b : env.nonce) b = r.u8();
    env.box = r.blob();
    if (!r.done()) throw ParseError("envelope: trailing bytes");
    return env;
}

} // namespace pic
