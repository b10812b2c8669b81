#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "pic/wire.hpp"

namespace pic {

// Symbolic names for key-stage atoms. An ordered list of atoms names the key
// product a ciphertext currently sits under; the audit reasons about who can
// decrypt what purely from these labels.
namespace tags {
inline std::string ka() { return "k_KA"; }
inline std::string cs() { return "k_CS"; }
inline std::string user(const std::string& id) { return "k_u(" + id + ")"; }
inline std::string user_mid(const std::string& id) { return "k_u'(" + id + ")"; }
inline std::string user_last(const std::string& id) { return "k_u''(" + id + ")"; }
} // namespace tags

struct KeyTag {
    std::vector<std::string> atoms;

    static KeyTag of(std::initializer_list<std::string> a) { return KeyTag{a}; }
    static KeyTag master() { return KeyTag{{tags::ka(), tags::cs()}}; }

    // Right-append a factor; a completed user triple k_u k_u' k_u'' equals
    // the master key and is rewritten to its canonical form k_KA * k_CS.
    KeyTag appended(const std::string& atom) const;

    // Right-strip: the last atom must equal `atom`.
    KeyTag stripped(const std::string& atom) const;

    bool is_master() const { return atoms == master().atoms; }
    bool coverable_by(const std::set<std::string>& inventory) const;

    std::string str() const;

    friend bool operator==(const KeyTag& a, const KeyTag& b) { return a.atoms == b.atoms; }
};

enum class ContentClass : uint8_t {
    Other = 0,
    KeyMaterial,
    VectorCiphertexts,
    DistanceCiphertexts,
    IndexTopology,
    PolicyData,
    EnvelopeData,
    ResultData,
    BlobData,
};

const char* content_class_name(ContentClass c);

struct AuditRecord {
    enum class Type { Message, Compute, SpanBegin, SpanEnd } type = Type::Message;
    uint64_t seq = 0;
    QueryId qid{};
    // message
    std::string sender;
    std::string receiver;
    uint8_t msg_kind = 0;
    ContentClass content = ContentClass::Other;
    KeyTag key_tag;
    size_t bytes = 0;
    // compute / span
    std::string entity;
    std::string op;    // "phi", "convert", "decrypt_distance", ...
    size_t count = 0;
    std::string span;      // "search", "upload", ...
    std::string principal; // querier/owner the span belongs to
};

class AuditLog {
public:
    void message(const std::string& sender, const std::string& receiver, uint8_t kind,
                 const QueryId& qid, ContentClass content, const KeyTag& tag, size_t bytes);
    void compute(const std::string& entity, const std::string& op, size_t count,
                 const QueryId& qid);
    void span_begin(const std::string& span, const std::string& principal, const QueryId& qid);
    void span_end(const std::string& span, const std::string& principal, const QueryId& qid);

    std::vector<AuditRecord> snapshot() const;
    size_t size() const;
    void append_raw(const AuditRecord& r); // misrouting tests build fake logs

private:
    mutable std::mutex mu_;
    std::vector<AuditRecord> records_;
    uint64_t next_seq_ = 0;
};

using AuditPredicate = std::function<bool(const std::vector<AuditRecord>&)>;

bool audit_assert(const AuditLog& log, const AuditPredicate& pred);
bool audit_assert(const std::vector<AuditRecord>& records, const AuditPredicate& pred);

// Key inventory of an entity as recorded by KeyShare messages in the log.
std::set<std::string> inventory_from_log(const std::vector<AuditRecord>& records,
                                         const std::string& entity, uint8_t keyshare_kind);

// (a) No ciphertext object CS received, stored or relayed was decryptable
//     with the key atoms CS holds.
AuditPredicate pred_cs_never_decryptable(uint8_t keyshare_kind);
// (b) KA received distance/score ciphertexts only under k_KA, and never a
//     vector ciphertext it could decrypt (in particular none under k_KA).
AuditPredicate pred_ka_distance_only(uint8_t keyshare_kind);
// (c) During a search span, only KA, CS and the search's own querier ever
//     send or receive messages; data owners stay silent.
AuditPredicate pred_owners_silent_in_searches();
// (d) The given query triggered zero phi computations.
AuditPredicate pred_no_phi_for_query(const QueryId& qid);

} // namespace pic
