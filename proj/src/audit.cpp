#include "pic/audit.hpp"

#include <algorithm>
#include <map>

#include "pic/errors.hpp"

namespace pic {

KeyTag KeyTag::appended(const std::string& atom) const {
    KeyTag out = *this;
    out.atoms.push_back(atom);
    // k_u(x) * k_u'(x) * k_u''(x) == k == k_KA * k_CS
    size_t n = out.atoms.size();
    if (n >= 3) {
        const std::string& last = out.atoms[n - 1];
        if (last.rfind("k_u''(", 0) == 0) {
            std::string id = last.substr(6, last.size() - 7);
            if (out.atoms[n - 3] == tags::user(id) && out.atoms[n - 2] == tags::user_mid(id)) {
                out.atoms.resize(n - 3);
                out.atoms.push_back(tags::ka());
                out.atoms.push_back(tags::cs());
            }
        }
    }
    return out;
}

KeyTag KeyTag::stripped(const std::string& atom) const {
    if (atoms.empty() || atoms.back() != atom)
        throw ProtocolError("key tag strip mismatch: " + str() + " / " + atom);
    KeyTag out = *this;
    out.atoms.pop_back();
    return out;
}

bool KeyTag::coverable_by(const std::set<std::string>& inventory) const {
    if (atoms.empty()) return false;
    for (const auto& a : atoms)
        if (!inventory.count(a)) return false;
    return true;
}

std::string KeyTag::str() const {
    if (is_master()) return "k";
    if (atoms.empty()) return "-";
    std::string out;
    for (size_t i = 0; i < atoms.size(); i++) {
        if (i) out += "*";
        out += atoms[i];
    }
    return out;
}

const char* content_class_name(ContentClass c) {
    switch (c) {
        case ContentClass::Other: return "other";
        case ContentClass::KeyMaterial: return "key_material";
        case ContentClass::VectorCiphertexts: return "vector_cts";
        case ContentClass::DistanceCiphertexts: return "distance_cts";
        case ContentClass::IndexTopology: return "index_topology";
        case ContentClass::PolicyData: return "policy_data";
        case ContentClass::EnvelopeData: return "envelope_data";
        case ContentClass::ResultData: return "result_data";
        case ContentClass::BlobData: return "blob_data";
    }
    return "?";
}

void AuditLog::message(const std::string& sender, const std::string& receiver, uint8_t kind,
                       const QueryId& qid, ContentClass content, const KeyTag& tag, size_t bytes) {
    std::lock_guard<std::mutex> lk(mu_);
    AuditRecord r;
    r.type = AuditRecord::Type::Message;
    r.seq = next_seq_++;
    r.sender = sender;
    r.receiver = receiver;
    r.msg_kind = kind;
    r.qid = qid;
    r.content = content;
    r.key_tag = tag;
    r.bytes = bytes;
    records_.push_back(std::move(r));
}

void AuditLog::compute(const std::string& entity, const std::string& op, size_t count,
                       const QueryId& qid) {
    std::lock_guard<std::mutex> lk(mu_);
    AuditRecord r;
    r.type = AuditRecord::Type::Compute;
    r.seq = next_seq_++;
    r.entity = entity;
    r.op = op;
    r.count = count;
    r.qid = qid;
    records_.push_back(std::move(r));
}

void AuditLog::span_begin(const std::string& span, const std::string& principal,
                          const QueryId& qid) {
    std::lock_guard<std::mutex> lk(mu_);
    AuditRecord r;
    r.type = AuditRecord::Type::SpanBegin;
    r.seq = next_seq_++;
    r.span = span;
    r.principal = principal;
    r.qid = qid;
    records_.push_back(std::move(r));
}

void AuditLog::span_end(const std::string& span, const std::string& principal,
                        const QueryId& qid) {
    std::lock_guard<std::mutex> lk(mu_);
    AuditRecord r;
    r.type = AuditRecord::Type::SpanEnd;
    r.seq = next_seq_++;
    r.span = span;
    r.principal = principal;
    r.qid = qid;
    records_.push_back(std::move(r));
}

std::vector<AuditRecord> AuditLog::snapshot() const {
    std::lock_guard<std::mutex> lk(mu_);
    return records_;
}

size_t AuditLog::size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return records_.size();
}

void AuditLog::append_raw(const AuditRecord& r) {
    std::lock_guard<std::mutex> lk(mu_);
    records_.push_back(r);
}

bool audit_assert(const AuditLog& log, const AuditPredicate& pred) {
    return pred(log.snapshot());
}

bool audit_assert(const std::vector<AuditRecord>& records, const AuditPredicate& pred) {
    return pred(records);
}

std::set<std::string> inventory_from_log(const std::vector<AuditRecord>& records,
                                         const std::string& entity, uint8_t keyshare_kind) {
    std::set<std::string> inv;
    for (const auto& r : records) {
        if (r.type != AuditRecord::Type::Message) continue;
        if (r.msg_kind != keyshare_kind || r.receiver != entity) continue;
        // KeyShare records carry the delivered atom in the key tag.
        for (const auto& a : r.key_tag.atoms) inv.insert(a);
    }
    return inv;
}

AuditPredicate pred_cs_never_decryptable(uint8_t keyshare_kind) {
    return [keyshare_kind](const std::vector<AuditRecord>& rs) {
        auto inv = inventory_from_log(rs, "cs", keyshare_kind);
        for (const auto& r : rs) {
            if (r.type != AuditRecord::Type::Message) continue;
            if (r.content != ContentClass::VectorCiphertexts &&
                r.content != ContentClass::DistanceCiphertexts)
                continue;
            if (r.receiver != "cs" && r.sender != "cs") continue;
            if (r.key_tag.coverable_by(inv)) return false;
        }
        return true;
    };
}

AuditPredicate pred_ka_distance_only(uint8_t keyshare_kind) {
    return [keyshare_kind](const std::vector<AuditRecord>& rs) {
        auto inv = inventory_from_log(rs, "ka", keyshare_kind);
        for (const auto& r : rs) {
            if (r.type != AuditRecord::Type::Message || r.receiver != "ka") continue;
            if (r.content == ContentClass::DistanceCiphertexts) {
                if (!(r.key_tag == KeyTag::of({tags::ka()}))) return false;
            } else if (r.content == ContentClass::VectorCiphertexts) {
                if (r.key_tag == KeyTag::of({tags::ka()})) return false;
                if (r.key_tag.coverable_by(inv)) return false;
            }
        }
        return true;
    };
}

AuditPredicate pred_owners_silent_in_searches() {
    return [](const std::vector<AuditRecord>& rs) {
        std::map<QueryId, std::string> search_querier;
        for (const auto& r : rs)
            if (r.type == AuditRecord::Type::SpanBegin && r.span == "search")
                search_querier[r.qid] = r.principal;
        for (const auto& r : rs) {
            if (r.type != AuditRecord::Type::Message) continue;
            auto it = search_querier.find(r.qid);
            if (it == search_querier.end()) continue;
            const std::string& q = it->second;
            auto allowed = [&](const std::string& who) {
                return who == "ka" || who == "cs" || who == q;
            };
            if (!allowed(r.sender) || !allowed(r.receiver)) return false;
        }
        return true;
    };
}

AuditPredicate pred_no_phi_for_query(const QueryId& qid) {
    return [qid](const std::vector<AuditRecord>& rs) {
        for (const auto& r : rs)
            if (r.type == AuditRecord::Type::Compute && r.op == "phi" && r.qid == qid &&
                r.count > 0)
                return false;
        return true;
    };
}

} // namespace pic
