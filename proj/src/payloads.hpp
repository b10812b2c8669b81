#pragma once

// Internal payload codecs for the entity messages. Payload bytes are the
// same in-process and on the PIC1 wire.

#include <map>
#include <set>
#include <string>
#include <vector>

#include "pic/access_policy.hpp"
#include "pic/cluster_index.hpp"
#include "pic/descriptor.hpp"
#include "pic/protocol.hpp"

namespace pic::payload {

inline void write_ref(ByteWriter& w, const VectorRef& r) {
    w.str(r.owner_id);
    w.str(r.image_id);
    w.u32be(r.vector_ordinal);
}

inline VectorRef read_ref(ByteReader& r) {
    VectorRef v;
    v.owner_id = r.str();
    v.image_id = r.str();
    v.vector_ordinal = r.u32be();
    return v;
}

inline void write_attrs(ByteWriter& w, const AttributeSet& attrs) {
    w.u32be(static_cast<uint32_t>(attrs.hashes.size()));
    for (const auto& h : attrs.hashes) w.raw(h.data(), h.size());
}

inline AttributeSet read_attrs(ByteReader& r) {
    AttributeSet s;
    uint32_t n = r.u32be();
    for (uint32_t i = 0; i < n; i++) {
        AttrHash h;
        for (auto& b : h) b = r.u8();
        s.hashes.insert(h);
    }
    return s;
}

struct KeyShare {
    std::string atom;
    std::string scope; // user id, empty for entity shares
    Bytes pick;
    uint32_t lambda = 0;
    uint32_t m_lvl = 0;
    Bytes n_bytes;

    Bytes encode() const {
        ByteWriter w;
        w.str(atom);
        w.str(scope);
        w.blob(pick);
        w.u32be(lambda);
        w.u32be(m_lvl);
        w.blob(n_bytes);
        return w.take();
    }
    static KeyShare decode(const Bytes& b) {
        ByteReader r(b);
        KeyShare k;
        k.atom = r.str();
        k.scope = r.str();
        k.pick = r.blob();
        k.lambda = r.u32be();
        k.m_lvl = r.u32be();
        k.n_bytes = r.blob();
        return k;
    }

    HEParams params() const {
        HEParams p;
        p.lambda = lambda;
        p.m_lvl = m_lvl;
        mpz_import(p.n.get_mpz_t(), n_bytes.size(), 1, 1, 1, 0, n_bytes.data());
        return p;
    }
    static Bytes export_n(const mpz_class& n) {
        size_t width = (mpz_sizeinbase(n.get_mpz_t(), 2) + 7) / 8;
        ByteWriter w;
        w.mpz_fixed(n, width);
        return w.take();
    }
};

struct PolicySubmit {
    std::string user;
    std::string expr;

    Bytes encode() const {
        ByteWriter w;
        w.str(user);
        w.str(expr);
        return w.take();
    }
    static PolicySubmit decode(const Bytes& b) {
        ByteReader r(b);
        return PolicySubmit{r.str(), r.str()};
    }
};

struct UploadItem {
    VectorRef ref;
    Bytes picv;
};

struct Upload {
    std::string owner;
    bool replace = false;
    uint32_t dim = 0;
    std::vector<UploadItem> items;
    Bytes topology;

    Bytes encode() const {
        ByteWriter w;
        w.str(owner);
        w.u8(replace ? 1 : 0);
        w.u32be(dim);
        w.u32be(static_cast<uint32_t>(items.size()));
        for (const auto& it : items) {
            write_ref(w, it.ref);
            w.blob(it.picv);
        }
        w.blob(topology);
        return w.take();
    }
    static Upload decode(const Bytes& b) {
        ByteReader r(b);
        Upload u;
        u.owner = r.str();
        u.replace = r.u8() != 0;
        u.dim = r.u32be();
        uint32_t n = r.u32be();
        u.items.reserve(n);
        for (uint32_t i = 0; i < n; i++) {
            UploadItem it;
            it.ref = read_ref(r);
            it.picv = r.blob();
            u.items.push_back(std::move(it));
        }
        u.topology = r.blob();
        return u;
    }
};

struct BasicQuery {
    std::string querier;
    uint32_t k_nn = 5;
    uint32_t beta = 1;
    uint64_t limit = 0;
    AttributeSet attrs;
    std::vector<Bytes> qvecs;

    Bytes encode() const {
        ByteWriter w;
        w.str(querier);
        w.u32be(k_nn);
        w.u32be(beta);
        w.u64be(limit);
        write_attrs(w, attrs);
        w.u32be(static_cast<uint32_t>(qvecs.size()));
        for (const auto& q : qvecs) w.blob(q);
        return w.take();
    }
    static BasicQuery decode(const Bytes& b) {
        ByteReader r(b);
        BasicQuery q;
        q.querier = r.str();
        q.k_nn = r.u32be();
        q.beta = r.u32be();
        q.limit = r.u64be();
        q.attrs = read_attrs(r);
        uint32_t n = r.u32be();
        q.qvecs.reserve(n);
        for (uint32_t i = 0; i < n; i++) q.qvecs.push_back(r.blob());
        return q;
    }
};

struct Level1Batch {
    uint32_t permitted = 0;
    std::vector<std::pair<uint32_t, VectorRef>> leaders; // (cluster ordinal, leader ref)
    uint32_t n_qvecs = 0;
    std::vector<Bytes> cts; // qvec-major: n_qvecs * leaders.size()

    Bytes encode() const {
        ByteWriter w;
        w.u32be(permitted);
        w.u32be(static_cast<uint32_t>(leaders.size()));
        for (const auto& [ord, ref] : leaders) {
            w.u32be(ord);
            write_ref(w, ref);
        }
        w.u32be(n_qvecs);
        for (const auto& c : cts) w.blob(c);
        return w.take();
    }
    static Level1Batch decode(const Bytes& b) {
        ByteReader r(b);
        Level1Batch l;
        l.permitted = r.u32be();
        uint32_t nl = r.u32be();
        l.leaders.reserve(nl);
        for (uint32_t i = 0; i < nl; i++) {
            uint32_t ord = r.u32be();
            l.leaders.emplace_back(ord, read_ref(r));
        }
        l.n_qvecs = r.u32be();
        l.cts.reserve(size_t(l.n_qvecs) * nl);
        for (size_t i = 0; i < size_t(l.n_qvecs) * nl; i++) l.cts.push_back(r.blob());
        return l;
    }
};

struct ClusterRequest {
    bool done = false;
    std::map<uint32_t, std::vector<uint32_t>> per_qvec;

    Bytes encode() const {
        ByteWriter w;
        w.u8(done ? 1 : 0);
        w.u32be(static_cast<uint32_t>(per_qvec.size()));
        for (const auto& [qv, ords] : per_qvec) {
            w.u32be(qv);
            w.u32be(static_cast<uint32_t>(ords.size()));
            for (uint32_t o : ords) w.u32be(o);
        }
        return w.take();
    }
    static ClusterRequest decode(const Bytes& b) {
        ByteReader r(b);
        ClusterRequest c;
        c.done = r.u8() != 0;
        uint32_t n = r.u32be();
        for (uint32_t i = 0; i < n; i++) {
            uint32_t qv = r.u32be();
            uint32_t m = r.u32be();
            std::vector<uint32_t> ords(m);
            for (auto& o : ords) o = r.u32be();
            c.per_qvec.emplace(qv, std::move(ords));
        }
        return c;
    }
};

struct Level2Batch {
    struct Entry {
        uint32_t qvec = 0;
        VectorRef ref;
        Bytes ct;
    };
    std::vector<Entry> entries;

    Bytes encode() const {
        ByteWriter w;
        w.u32be(static_cast<uint32_t>(entries.size()));
        for (const auto& e : entries) {
            w.u32be(e.qvec);
            write_ref(w, e.ref);
            w.blob(e.ct);
        }
        return w.take();
    }
    static Level2Batch decode(const Bytes& b) {
        ByteReader r(b);
        Level2Batch l;
        uint32_t n = r.u32be();
        l.entries.reserve(n);
        for (uint32_t i = 0; i < n; i++) {
            Entry e;
            e.qvec = r.u32be();
            e.ref = read_ref(r);
            e.ct = r.blob();
            l.entries.push_back(std::move(e));
        }
        return l;
    }
};

struct AdvQuery {
    std::string querier;
    uint32_t k_nn = 5;
    uint32_t cluster_target = 1;
    int64_t theta = 0;
    int64_t theta_prime = 0;
    uint64_t limit = 0;
    AttributeSet attrs;
    std::vector<std::pair<std::string, Bytes>> per_owner; // owner -> picv

    Bytes encode() const {
        ByteWriter w;
        w.str(querier);
        w.u32be(k_nn);
        w.u32be(cluster_target);
        w.i64be(theta);
        w.i64be(theta_prime);
        w.u64be(limit);
        write_attrs(w, attrs);
        w.u32be(static_cast<uint32_t>(per_owner.size()));
        for (const auto& [o, v] : per_owner) {
            w.str(o);
            w.blob(v);
        }
        return w.take();
    }
    static AdvQuery decode(const Bytes& b) {
        ByteReader r(b);
        AdvQuery q;
        q.querier = r.str();
        q.k_nn = r.u32be();
        q.cluster_target = r.u32be();
        q.theta = r.i64be();
        q.theta_prime = r.i64be();
        q.limit = r.u64be();
        q.attrs = read_attrs(r);
        uint32_t n = r.u32be();
        for (uint32_t i = 0; i < n; i++) {
            std::string o = r.str();
            q.per_owner.emplace_back(std::move(o), r.blob());
        }
        return q;
    }
};

struct AdvLevel1Batch {
    uint32_t permitted = 0;
    struct Entry {
        uint32_t ordinal = 0;
        VectorRef ref;
        Bytes ct;
    };
    std::vector<Entry> entries;

    Bytes encode() const {
        ByteWriter w;
        w.u32be(permitted);
        w.u32be(static_cast<uint32_t>(entries.size()));
        for (const auto& e : entries) {
            w.u32be(e.ordinal);
            write_ref(w, e.ref);
            w.blob(e.ct);
        }
        return w.take();
    }
    static AdvLevel1Batch decode(const Bytes& b) {
        ByteReader r(b);
        AdvLevel1Batch l;
        l.permitted = r.u32be();
        uint32_t n = r.u32be();
        l.entries.reserve(n);
        for (uint32_t i = 0; i < n; i++) {
            Entry e;
            e.ordinal = r.u32be();
            e.ref = read_ref(r);
            e.ct = r.blob();
            l.entries.push_back(std::move(e));
        }
        return l;
    }
};

struct AdvClusterRequest {
    bool done = false;
    std::vector<uint32_t> ordinals;

    Bytes encode() const {
        ByteWriter w;
        w.u8(done ? 1 : 0);
        w.u32be(static_cast<uint32_t>(ordinals.size()));
        for (uint32_t o : ordinals) w.u32be(o);
        return w.take();
    }
    static AdvClusterRequest decode(const Bytes& b) {
        ByteReader r(b);
        AdvClusterRequest c;
        c.done = r.u8() != 0;
        uint32_t n = r.u32be();
        c.ordinals.resize(n);
        for (auto& o : c.ordinals) o = r.u32be();
        return c;
    }
};

struct AdvLevel2Batch {
    struct Entry {
        VectorRef ref;
        Bytes ct;
    };
    std::vector<Entry> entries;

    Bytes encode() const {
        ByteWriter w;
        w.u32be(static_cast<uint32_t>(entries.size()));
        for (const auto& e : entries) {
            write_ref(w, e.ref);
            w.blob(e.ct);
        }
        return w.take();
    }
    static AdvLevel2Batch decode(const Bytes& b) {
        ByteReader r(b);
        AdvLevel2Batch l;
        uint32_t n = r.u32be();
        l.entries.reserve(n);
        for (uint32_t i = 0; i < n; i++) {
            Entry e;
            e.ref = read_ref(r);
            e.ct = r.blob();
            l.entries.push_back(std::move(e));
        }
        return l;
    }
};

struct IndexUpdate {
    std::string owner;
    Bytes topology;

    Bytes encode() const {
        ByteWriter w;
        w.str(owner);
        w.blob(topology);
        return w.take();
    }
    static IndexUpdate decode(const Bytes& b) {
        ByteReader r(b);
        IndexUpdate u;
        u.owner = r.str();
        u.topology = r.blob();
        return u;
    }
};

struct EnvelopeStore {
    std::string owner;
    Bytes pice;

    Bytes encode() const {
        ByteWriter w;
        w.str(owner);
        w.blob(pice);
        return w.take();
    }
    static EnvelopeStore decode(const Bytes& b) {
        ByteReader r(b);
        EnvelopeStore e;
        e.owner = r.str();
        e.pice = r.blob();
        return e;
    }
};

struct EnvelopeFetch {
    std::string querier;
    AttributeSet attrs;

    Bytes encode() const {
        ByteWriter w;
        w.str(querier);
        write_attrs(w, attrs);
        return w.take();
    }
    static EnvelopeFetch decode(const Bytes& b) {
        ByteReader r(b);
        EnvelopeFetch e;
        e.querier = r.str();
        e.attrs = read_attrs(r);
        return e;
    }
};

struct EnvelopeReply {
    uint32_t permitted = 0; // policy-satisfying users, with or without data
    std::vector<std::pair<std::string, Bytes>> envelopes;

    Bytes encode() const {
        ByteWriter w;
        w.u32be(permitted);
        w.u32be(static_cast<uint32_t>(envelopes.size()));
        for (const auto& [o, e] : envelopes) {
            w.str(o);
            w.blob(e);
        }
        return w.take();
    }
    static EnvelopeReply decode(const Bytes& b) {
        ByteReader r(b);
        EnvelopeReply e;
        e.permitted = r.u32be();
        uint32_t n = r.u32be();
        for (uint32_t i = 0; i < n; i++) {
            std::string o = r.str();
            e.envelopes.emplace_back(std::move(o), r.blob());
        }
        return e;
    }
};

struct BlobPut {
    std::string owner;
    std::string image_id;
    Bytes blob;

    Bytes encode() const {
        ByteWriter w;
        w.str(owner);
        w.str(image_id);
        w.blob(blob);
        return w.take();
    }
    static BlobPut decode(const Bytes& b) {
        ByteReader r(b);
        BlobPut p;
        p.owner = r.str();
        p.image_id = r.str();
        p.blob = r.blob();
        return p;
    }
};

struct BlobGet {
    std::string querier;
    std::string owner;
    std::string image_id;
    AttributeSet attrs;

    Bytes encode() const {
        ByteWriter w;
        w.str(querier);
        w.str(owner);
        w.str(image_id);
        write_attrs(w, attrs);
        return w.take();
    }
    static BlobGet decode(const Bytes& b) {
        ByteReader r(b);
        BlobGet g;
        g.querier = r.str();
        g.owner = r.str();
        g.image_id = r.str();
        g.attrs = read_attrs(r);
        return g;
    }
};

struct ErrorReply {
    std::string code;
    std::string text;

    Bytes encode() const {
        ByteWriter w;
        w.str(code);
        w.str(text);
        return w.take();
    }
    static ErrorReply decode(const Bytes& b) {
        ByteReader r(b);
        ErrorReply e;
        e.code = r.str();
        e.text = r.str();
        return e;
    }
};

// Advanced-scheme envelope payload: the owner's dictionary plus every weight
// parameter ({f_{i,I}}, f_i, N).
struct OwnerParams {
    Vocabulary vocab;
    CorpusStats stats;
    std::vector<std::pair<std::string, std::vector<uint32_t>>> image_counts;

    Bytes encode() const {
        ByteWriter w;
        w.u32be(vocab.v);
        w.u32be(vocab.dim);
        for (const auto& word : vocab.words)
            for (float f : word) w.f32le(f);
        w.u32be(stats.num_images);
        for (uint32_t d : stats.doc_freq) w.u32be(d);
        w.u32be(static_cast<uint32_t>(image_counts.size()));
        for (const auto& [id, counts] : image_counts) {
            w.str(id);
            for (uint32_t c : counts) w.u32be(c);
        }
        return w.take();
    }
    static OwnerParams decode(const Bytes& b) {
        ByteReader r(b);
        OwnerParams p;
        p.vocab.v = r.u32be();
        p.vocab.dim = r.u32be();
        p.vocab.words.assign(p.vocab.v, std::vector<float>(p.vocab.dim));
        for (auto& word : p.vocab.words)
            for (auto& f : word) f = r.f32le();
        p.stats.num_images = r.u32be();
        p.stats.doc_freq.resize(p.vocab.v);
        for (auto& d : p.stats.doc_freq) d = r.u32be();
        uint32_t n = r.u32be();
        for (uint32_t i = 0; i < n; i++) {
            std::string id = r.str();
            std::vector<uint32_t> counts(p.vocab.v);
            for (auto& c : counts) c = r.u32be();
            p.image_counts.emplace_back(std::move(id), std::move(counts));
        }
        return p;
    }
};

} // namespace pic::payload
