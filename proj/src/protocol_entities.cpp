#include <algorithm>

#include "pic/errors.hpp"
#include "pic/protocol.hpp"
#include "payloads.hpp"

namespace pic {

Frame message_to_frame(const Message& m) {
    Frame f;
    f.kind = static_cast<uint8_t>(m.kind);
    f.query_id = m.qid;
    ByteWriter w;
    w.str(m.sender);
    w.str(m.receiver);
    w.str(m.key_tag.str());
    w.u8(static_cast<uint8_t>(m.content));
    w.blob(m.payload);
    f.payload = w.take();
    return f;
}

Message message_from_frame(const Frame& f) {
    Message m;
    m.kind = static_cast<MsgKind>(f.kind);
    m.qid = f.query_id;
    ByteReader r(f.payload);
    m.sender = r.str();
    m.receiver = r.str();
    std::string tag = r.str();
    m.content = static_cast<ContentClass>(r.u8());
    m.payload = r.blob();
    if (tag != "-") {
        if (tag == "k") {
            m.key_tag = KeyTag::master();
        } else {
            size_t pos = 0;
            while (pos <= tag.size()) {
                size_t next = tag.find('*', pos);
                if (next == std::string::npos) next = tag.size();
                if (next > pos) m.key_tag.atoms.push_back(tag.substr(pos, next - pos));
                pos = next + 1;
            }
        }
    }
    return m;
}

Message LocalChannel::request(const Message& m) {
    log_.message(m.sender, m.receiver, static_cast<uint8_t>(m.kind), m.qid, m.content, m.key_tag,
                 m.payload.size());
    Message reply = target_.handle(m);
    log_.message(reply.sender, reply.receiver, static_cast<uint8_t>(reply.kind), reply.qid,
                 reply.content, reply.key_tag, reply.payload.size());
    return reply;
}

namespace {

Message make_reply(const Message& req, const std::string& sender, MsgKind kind, Bytes body,
                   ContentClass content = ContentClass::Other, KeyTag tag = {}) {
    Message m;
    m.sender = sender;
    m.receiver = req.sender;
    m.kind = kind;
    m.qid = req.qid;
    m.payload = std::move(body);
    m.content = content;
    m.key_tag = std::move(tag);
    return m;
}

Message error_reply(const Message& req, const std::string& sender, const std::string& code,
                    const std::string& text) {
    return make_reply(req, sender, MsgKind::ErrorReply, payload::ErrorReply{code, text}.encode());
}

void throw_if_error(const Message& m) {
    if (m.kind == MsgKind::ErrorReply) {
        auto e = payload::ErrorReply::decode(m.payload);
        throw ProtocolError(e.code + ": " + e.text);
    }
}

} // namespace

Bytes encode_search_result(const SearchOutcome& o) {
    ByteWriter w;
    w.u32be(static_cast<uint32_t>(o.permitted_owners));
    w.u32be(static_cast<uint32_t>(o.ranked.size()));
    for (const auto& r : o.ranked) {
        w.str(r.owner_id);
        w.str(r.image_id);
        w.i64be(r.value);
    }
    return w.take();
}

SearchOutcome decode_search_result(const Bytes& b) {
    ByteReader r(b);
    SearchOutcome o;
    o.permitted_owners = r.u32be();
    uint32_t n = r.u32be();
    o.ranked.reserve(n);
    for (uint32_t i = 0; i < n; i++) {
        RankedImage img;
        img.owner_id = r.str();
        img.image_id = r.str();
        img.value = r.i64be();
        o.ranked.push_back(std::move(img));
    }
    return o;
}

// ---------------------------------------------------------------- KeyAgent

void KeyAgentEntity::restore(const HEParams& p, std::optional<HEKey> ka,
                             std::map<std::string, HEKey> mids) {
    params_ = p;
    k_ka_ = std::move(ka);
    user_mid_ = std::move(mids);
}

std::set<std::string> KeyAgentEntity::key_inventory() const {
    std::set<std::string> inv;
    if (k_ka_) inv.insert(tags::ka());
    for (const auto& [u, k] : user_mid_) inv.insert(tags::user_mid(u));
    return inv;
}

Message KeyAgentEntity::handle(const Message& m) {
    std::lock_guard<std::mutex> lk(mu_);
    try {
        switch (m.kind) {
            case MsgKind::KeyShare: return on_key_share(m);
            case MsgKind::Upload: return on_upload(m);
            case MsgKind::BasicQuery: return on_basic_query(m);
            case MsgKind::AdvQuery: return on_adv_query(m);
            default: return error_reply(m, name_, "bad_kind", "message not understood by KA");
        }
    } catch (const std::exception& e) {
        return error_reply(m, name_, "ka_error", e.what());
    }
}

Message KeyAgentEntity::on_key_share(const Message& m) {
    auto ks = payload::KeyShare::decode(m.payload);
    params_ = ks.params();
    HEKey key = parse_key(ks.pick, params_);
    if (ks.scope.empty()) {
        if (k_ka_) throw ProtocolError("KA share already installed");
        k_ka_ = std::move(key);
    } else {
        if (user_mid_.count(ks.scope)) throw ProtocolError("user already registered at KA");
        user_mid_.emplace(ks.scope, std::move(key));
    }
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message KeyAgentEntity::on_upload(const Message& m) {
    auto up = payload::Upload::decode(m.payload);
    auto it = user_mid_.find(up.owner);
    if (it == user_mid_.end()) throw ProtocolError("unregistered owner: " + up.owner);

    payload::Upload fwd = up;
    KeyTag tag = m.key_tag;
    for (auto& item : fwd.items) {
        EncVector v = parse_enc_vector(item.picv, params_);
        EncVector conv = convert_vector(v, it->second, ConvertMode::append);
        item.picv = serialize_enc_vector(conv, params_);
    }
    log_.compute(name_, "convert", fwd.items.size(), m.qid);
    tag = tag.appended(tags::user_mid(up.owner));

    Message f;
    f.sender = name_;
    f.receiver = "cs";
    f.kind = MsgKind::UploadConverted;
    f.qid = m.qid;
    f.payload = fwd.encode();
    f.content = ContentClass::VectorCiphertexts;
    f.key_tag = tag;
    Message ack = cs_->request(f);
    throw_if_error(ack);
    return make_reply(m, name_, MsgKind::UploadAck, ack.payload);
}

Message KeyAgentEntity::on_basic_query(const Message& m) {
    auto q = payload::BasicQuery::decode(m.payload);
    auto it = user_mid_.find(q.querier);
    if (it == user_mid_.end()) throw ProtocolError("unregistered querier: " + q.querier);

    payload::BasicQuery fwd = q;
    for (auto& qv : fwd.qvecs) {
        EncVector v = parse_enc_vector(qv, params_);
        qv = serialize_enc_vector(convert_vector(v, it->second, ConvertMode::append), params_);
    }
    log_.compute(name_, "convert", fwd.qvecs.size(), m.qid);

    Message f;
    f.sender = name_;
    f.receiver = "cs";
    f.kind = MsgKind::BasicQueryConverted;
    f.qid = m.qid;
    f.payload = fwd.encode();
    f.content = ContentClass::VectorCiphertexts;
    f.key_tag = m.key_tag.appended(tags::user_mid(q.querier));
    Message rep = cs_->request(f);
    throw_if_error(rep);
    auto l1 = payload::Level1Batch::decode(rep.payload);

    SearchOutcome outcome;
    outcome.permitted_owners = l1.permitted;

    auto finish = [&](bool notify_cs) {
        if (notify_cs) {
            payload::ClusterRequest done;
            done.done = true;
            Message dm;
            dm.sender = name_;
            dm.receiver = "cs";
            dm.kind = MsgKind::ClusterRequest;
            dm.qid = m.qid;
            dm.payload = done.encode();
            throw_if_error(cs_->request(dm));
        }
        return make_reply(m, name_, MsgKind::SearchResult, encode_search_result(outcome),
                          ContentClass::ResultData);
    };

    if (l1.permitted == 0 || l1.leaders.empty() || q.qvecs.empty()) return finish(true);

    // Decrypt all (query vector, leader) distances and rank leaders per qvec.
    const size_t nl = l1.leaders.size();
    BasicPlanner planner(q.qvecs.size(), q.k_nn, q.beta);
    {
        std::vector<Ciphertext> cts(l1.cts.size());
        for (size_t i = 0; i < l1.cts.size(); i++) cts[i] = parse_ciphertext(l1.cts[i], params_);
        std::vector<int64_t> dists = decrypt_batch(cts, *k_ka_, params_, cfg_.workers);
        log_.compute(name_, "decrypt_distance", cts.size(), m.qid);
        std::map<uint32_t, VectorRef> ref_of;
        for (const auto& [ord, ref] : l1.leaders) ref_of[ord] = ref;
        for (size_t qi = 0; qi < q.qvecs.size(); qi++) {
            std::vector<std::pair<int64_t, uint32_t>> ranked_pairs;
            ranked_pairs.reserve(nl);
            for (size_t li = 0; li < nl; li++)
                ranked_pairs.emplace_back(dists[qi * nl + li], l1.leaders[li].first);
            std::sort(ranked_pairs.begin(), ranked_pairs.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return ref_of[a.second] < ref_of[b.second];
            });
            std::vector<uint32_t> ranked;
            ranked.reserve(nl);
            for (const auto& [d, ord] : ranked_pairs) ranked.push_back(ord);
            planner.set_leader_ranking(qi, std::move(ranked));
        }
    }

    for (;;) {
        auto plan = planner.next_fetch();
        if (plan.empty()) break;
        payload::ClusterRequest creq;
        creq.per_qvec = plan;
        Message cm;
        cm.sender = name_;
        cm.receiver = "cs";
        cm.kind = MsgKind::ClusterRequest;
        cm.qid = m.qid;
        cm.payload = creq.encode();
        Message crep = cs_->request(cm);
        throw_if_error(crep);
        auto l2 = payload::Level2Batch::decode(crep.payload);
        std::map<uint32_t, std::vector<PlainDistRecord>> per_qvec;
        for (const auto& e : l2.entries) {
            mpz_class v = decrypt_scaled(parse_ciphertext(e.ct, params_), *k_ka_, params_);
            per_qvec[e.qvec].push_back(PlainDistRecord{e.ref, to_int64(v)});
        }
        log_.compute(name_, "decrypt_distance", l2.entries.size(), m.qid);
        for (const auto& [qv, recs] : per_qvec) planner.feed(qv, recs);
    }

    outcome.ranked = planner.finalize(q.limit);
    return finish(true);
}

Message KeyAgentEntity::on_adv_query(const Message& m) {
    auto q = payload::AdvQuery::decode(m.payload);
    auto it = user_mid_.find(q.querier);
    if (it == user_mid_.end()) throw ProtocolError("unregistered querier: " + q.querier);

    payload::AdvQuery fwd = q;
    for (auto& [owner, picv] : fwd.per_owner) {
        EncVector v = parse_enc_vector(picv, params_);
        picv = serialize_enc_vector(convert_vector(v, it->second, ConvertMode::append), params_);
    }
    log_.compute(name_, "convert", fwd.per_owner.size(), m.qid);

    Message f;
    f.sender = name_;
    f.receiver = "cs";
    f.kind = MsgKind::AdvQueryConverted;
    f.qid = m.qid;
    f.payload = fwd.encode();
    f.content = ContentClass::VectorCiphertexts;
    f.key_tag = m.key_tag.appended(tags::user_mid(q.querier));
    Message rep = cs_->request(f);
    throw_if_error(rep);
    auto l1 = payload::AdvLevel1Batch::decode(rep.payload);

    SearchOutcome outcome;
    outcome.permitted_owners = l1.permitted;
    const int64_t sign = cfg_.kernel == Kernel::dot ? -1 : 1;

    auto finish = [&](bool notify_cs) {
        if (notify_cs) {
            payload::AdvClusterRequest done;
            done.done = true;
            Message dm;
            dm.sender = name_;
            dm.receiver = "cs";
            dm.kind = MsgKind::AdvClusterRequest;
            dm.qid = m.qid;
            dm.payload = done.encode();
            throw_if_error(cs_->request(dm));
        }
        return make_reply(m, name_, MsgKind::SearchResult, encode_search_result(outcome),
                          ContentClass::ResultData);
    };

    if (l1.permitted == 0 || l1.entries.empty()) return finish(true);

    AdvancedPlanner planner(q.k_nn, q.cluster_target, q.theta, q.theta_prime);
    {
        std::vector<std::pair<int64_t, uint32_t>> dists;
        dists.reserve(l1.entries.size());
        for (const auto& e : l1.entries) {
            mpz_class v = decrypt_scaled(parse_ciphertext(e.ct, params_), *k_ka_, params_);
            dists.emplace_back(sign * to_int64(v), e.ordinal);
        }
        log_.compute(name_, "decrypt_distance", l1.entries.size(), m.qid);
        planner.set_leader_distances(std::move(dists));
    }

    while (!planner.done()) {
        auto ords = planner.next_fetch();
        if (ords.empty()) continue;
        payload::AdvClusterRequest creq;
        creq.ordinals = ords;
        Message cm;
        cm.sender = name_;
        cm.receiver = "cs";
        cm.kind = MsgKind::AdvClusterRequest;
        cm.qid = m.qid;
        cm.payload = creq.encode();
        Message crep = cs_->request(cm);
        throw_if_error(crep);
        auto l2 = payload::AdvLevel2Batch::decode(crep.payload);
        std::vector<PlainDistRecord> recs;
        recs.reserve(l2.entries.size());
        for (const auto& e : l2.entries) {
            mpz_class v = decrypt_scaled(parse_ciphertext(e.ct, params_), *k_ka_, params_);
            recs.push_back(PlainDistRecord{e.ref, sign * to_int64(v)});
        }
        log_.compute(name_, "decrypt_distance", l2.entries.size(), m.qid);
        planner.feed(recs);
    }

    outcome.ranked = planner.finalize(q.limit);
    if (sign < 0)
        for (auto& r : outcome.ranked) r.value = -r.value; // report true similarities
    return finish(true);
}

// ---------------------------------------------------------------- Cloud

void CloudServerEntity::restore(const HEParams& p, std::optional<HEKey> cs,
                                std::map<std::string, HEKey> lasts,
                                std::map<std::string, EncVector> db, ClusterIndex idx,
                                std::map<std::string, std::string> policy_exprs,
                                std::map<std::string, Envelope> envelopes,
                                std::map<std::string, Bytes> blobs) {
    params_ = p;
    k_cs_ = std::move(cs);
    user_last_ = std::move(lasts);
    db_ = std::move(db);
    index_ = std::move(idx);
    policy_exprs_ = std::move(policy_exprs);
    policies_.clear();
    for (const auto& [u, expr] : policy_exprs_) policies_.emplace(u, AccessTree::parse(expr));
    envelopes_ = std::move(envelopes);
    blobs_ = std::move(blobs);
}

std::set<std::string> CloudServerEntity::key_inventory() const {
    std::set<std::string> inv;
    if (k_cs_) inv.insert(tags::cs());
    for (const auto& [u, k] : user_last_) inv.insert(tags::user_last(u));
    return inv;
}

std::set<std::string> CloudServerEntity::permitted_owners(const AttributeSet& attrs) const {
    std::set<std::string> out;
    for (const auto& [owner, tree] : policies_)
        if (tree.evaluate(attrs)) out.insert(owner);
    return out;
}

Message CloudServerEntity::handle(const Message& m) {
    std::lock_guard<std::mutex> lk(mu_);
    try {
        switch (m.kind) {
            case MsgKind::KeyShare: return on_key_share(m);
            case MsgKind::PolicySubmit: return on_policy_submit(m);
            case MsgKind::UploadConverted: return on_upload_converted(m);
            case MsgKind::BasicQueryConverted: return on_basic_query_converted(m);
            case MsgKind::ClusterRequest: return on_cluster_request(m);
            case MsgKind::AdvQueryConverted: return on_adv_query_converted(m);
            case MsgKind::AdvClusterRequest: return on_adv_cluster_request(m);
            case MsgKind::IndexUpdate: return on_index_update(m);
            case MsgKind::EnvelopeStore: return on_envelope_store(m);
            case MsgKind::EnvelopeFetch: return on_envelope_fetch(m);
            case MsgKind::BlobPut: return on_blob_put(m);
            case MsgKind::BlobGet: return on_blob_get(m);
            default: return error_reply(m, name_, "bad_kind", "message not understood by CS");
        }
    } catch (const std::exception& e) {
        return error_reply(m, name_, "cs_error", e.what());
    }
}

Message CloudServerEntity::on_key_share(const Message& m) {
    auto ks = payload::KeyShare::decode(m.payload);
    params_ = ks.params();
    HEKey key = parse_key(ks.pick, params_);
    if (ks.scope.empty()) {
        if (k_cs_) throw ProtocolError("CS share already installed");
        k_cs_ = std::move(key);
    } else {
        if (user_last_.count(ks.scope)) throw ProtocolError("user already registered at CS");
        user_last_.emplace(ks.scope, std::move(key));
    }
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_policy_submit(const Message& m) {
    auto ps = payload::PolicySubmit::decode(m.payload);
    AccessTree tree = AccessTree::parse(ps.expr);
    policies_.insert_or_assign(ps.user, std::move(tree));
    policy_exprs_.insert_or_assign(ps.user, ps.expr);
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_upload_converted(const Message& m) {
    auto up = payload::Upload::decode(m.payload);
    auto it = user_last_.find(up.owner);
    if (it == user_last_.end()) throw ProtocolError("unregistered owner: " + up.owner);

    ClusterIndex incoming = parse_index(up.topology);
    KeyTag final_tag = m.key_tag.appended(tags::user_last(up.owner));
    if (!final_tag.is_master())
        throw ProtocolError("upload conversion did not land on the master key");

    if (up.replace) {
        remove_owner(index_, up.owner);
        for (auto dbit = db_.begin(); dbit != db_.end();)
            dbit = dbit->first.rfind(up.owner + "/", 0) == 0 ? db_.erase(dbit) : std::next(dbit);
    }

    std::map<std::string, EncVector> staged;
    for (const auto& item : up.items) {
        if (item.ref.owner_id != up.owner)
            throw ProtocolError("upload item labeled with a foreign owner");
        EncVector v = parse_enc_vector(item.picv, params_);
        if (v.dim() != up.dim) throw DimensionError("upload item dimension mismatch");
        EncVector fin = convert_vector(v, it->second, ConvertMode::append, "k");
        std::string loc = item.ref.locator();
        if (db_.count(loc) || staged.count(loc))
            throw ProtocolError("duplicate ciphertext locator: " + loc);
        staged.emplace(std::move(loc), std::move(fin));
    }
    log_.compute(name_, "convert", up.items.size(), m.qid);

    // Every topology reference must resolve to a stored ciphertext.
    for (const auto& cl : incoming.clusters)
        for (const auto& ref : cl.members)
            if (!staged.count(ref.locator()) && !db_.count(ref.locator()))
                throw ProtocolError("topology reference without ciphertext: " + ref.locator());

    ClusterIndex merged = up.replace || !index_owners(index_).count(up.owner)
                              ? merge(index_, incoming, up.owner)
                              : [&] {
                                    ClusterIndex g = index_;
                                    remove_owner(g, up.owner);
                                    return merge(g, incoming, up.owner);
                                }();
    index_ = std::move(merged);
    for (auto& [loc, v] : staged) db_.insert_or_assign(loc, std::move(v));
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_basic_query_converted(const Message& m) {
    auto q = payload::BasicQuery::decode(m.payload);
    auto it = user_last_.find(q.querier);
    if (it == user_last_.end()) throw ProtocolError("unregistered querier: " + q.querier);
    if (!k_cs_) throw ProtocolError("CS has no master share");

    BasicQueryState st;
    KeyTag qtag = m.key_tag.appended(tags::user_last(q.querier));
    if (!qtag.is_master()) throw ProtocolError("query conversion did not land on the master key");
    for (const auto& qv : q.qvecs) {
        EncVector v = parse_enc_vector(qv, params_);
        EncVector under_k = convert_vector(v, it->second, ConvertMode::append);
        st.qvecs.push_back(convert_vector(under_k, *k_cs_, ConvertMode::strip, "k_KA"));
    }
    log_.compute(name_, "convert", 2 * q.qvecs.size(), m.qid);
    qtag = qtag.stripped(tags::cs()); // now k_KA

    st.permitted = permitted_owners(q.attrs);
    payload::Level1Batch reply;
    reply.permitted = static_cast<uint32_t>(st.permitted.size());
    reply.n_qvecs = static_cast<uint32_t>(st.qvecs.size());

    auto leader_list = leaders(index_, st.permitted);
    std::sort(leader_list.begin(), leader_list.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    reply.leaders = leader_list;

    if (!leader_list.empty() && !st.qvecs.empty()) {
        // Convert the permitted leaders once, then phi against every qvec.
        std::vector<EncVector> conv;
        conv.reserve(leader_list.size());
        std::vector<std::pair<VectorRef, const EncVector*>> cands;
        for (const auto& [ord, ref] : leader_list) {
            const EncVector& stored = db_.at(ref.locator());
            conv.push_back(convert_vector(stored, *k_cs_, ConvertMode::strip, "k_KA"));
        }
        log_.compute(name_, "convert", conv.size(), m.qid);
        for (size_t i = 0; i < conv.size(); i++)
            cands.emplace_back(leader_list[i].second, &conv[i]);
        for (const auto& qv : st.qvecs) {
            auto recs = map_distances(qv, cands, cfg_.workers, Kernel::distance);
            // map_distances sorts by ref; cands are already ref-sorted.
            for (auto& rec : recs)
                reply.cts.push_back(serialize_ciphertext(rec.ct, params_));
        }
        log_.compute(name_, "phi", st.qvecs.size() * cands.size(), m.qid);
    }

    basic_state_[m.qid] = std::move(st);
    return make_reply(m, name_, MsgKind::Level1Batch, reply.encode(),
                      ContentClass::DistanceCiphertexts, KeyTag::of({tags::ka()}));
}

Message CloudServerEntity::on_cluster_request(const Message& m) {
    auto req = payload::ClusterRequest::decode(m.payload);
    auto stit = basic_state_.find(m.qid);
    if (req.done) {
        if (stit != basic_state_.end()) basic_state_.erase(stit);
        return make_reply(m, name_, MsgKind::Level2Batch, payload::Level2Batch{}.encode());
    }
    if (stit == basic_state_.end()) throw ProtocolError("no query state for cluster request");
    BasicQueryState& st = stit->second;

    payload::Level2Batch reply;
    size_t phi_count = 0;
    for (const auto& [qv, ords] : req.per_qvec) {
        if (qv >= st.qvecs.size()) throw ProtocolError("cluster request for unknown query vector");
        for (uint32_t ord : ords)
            if (ord >= index_.clusters.size() ||
                !st.permitted.count(index_.clusters[ord].leader.owner_id))
                throw ProtocolError("cluster request outside the permitted owners");
        auto refs = collect_members(index_, ords, st.already[qv]);
        if (refs.empty()) continue;
        std::vector<EncVector> conv;
        conv.reserve(refs.size());
        std::vector<std::pair<VectorRef, const EncVector*>> cands;
        for (const auto& ref : refs)
            conv.push_back(convert_vector(db_.at(ref.locator()), *k_cs_, ConvertMode::strip, "k_KA"));
        log_.compute(name_, "convert", conv.size(), m.qid);
        for (size_t i = 0; i < refs.size(); i++) cands.emplace_back(refs[i], &conv[i]);
        auto recs = map_distances(st.qvecs[qv], cands, cfg_.workers, Kernel::distance);
        phi_count += recs.size();
        for (auto& rec : recs) {
            payload::Level2Batch::Entry e;
            e.qvec = qv;
            e.ref = rec.ref;
            e.ct = serialize_ciphertext(rec.ct, params_);
            reply.entries.push_back(std::move(e));
        }
    }
    if (phi_count) log_.compute(name_, "phi", phi_count, m.qid);
    return make_reply(m, name_, MsgKind::Level2Batch, reply.encode(),
                      ContentClass::DistanceCiphertexts, KeyTag::of({tags::ka()}));
}

Message CloudServerEntity::on_adv_query_converted(const Message& m) {
    auto q = payload::AdvQuery::decode(m.payload);
    auto it = user_last_.find(q.querier);
    if (it == user_last_.end()) throw ProtocolError("unregistered querier: " + q.querier);
    if (!k_cs_) throw ProtocolError("CS has no master share");

    AdvQueryState st;
    st.permitted = permitted_owners(q.attrs);

    payload::AdvLevel1Batch reply;
    reply.permitted = static_cast<uint32_t>(st.permitted.size());

    for (const auto& [owner, picv] : q.per_owner) {
        if (!st.permitted.count(owner)) continue;
        EncVector v = parse_enc_vector(picv, params_);
        EncVector under_k = convert_vector(v, it->second, ConvertMode::append);
        st.queries.emplace(owner, convert_vector(under_k, *k_cs_, ConvertMode::strip, "k_KA"));
    }
    log_.compute(name_, "convert", 2 * st.queries.size(), m.qid);

    size_t phi_count = 0;
    for (const auto& [owner, qvec] : st.queries) {
        auto leader_list = leaders(index_, {owner});
        if (leader_list.empty()) continue;
        std::sort(leader_list.begin(), leader_list.end(),
                  [](const auto& a, const auto& b) { return a.second < b.second; });
        std::vector<EncVector> conv;
        conv.reserve(leader_list.size());
        std::vector<std::pair<VectorRef, const EncVector*>> cands;
        for (const auto& [ord, ref] : leader_list)
            conv.push_back(convert_vector(db_.at(ref.locator()), *k_cs_, ConvertMode::strip, "k_KA"));
        log_.compute(name_, "convert", conv.size(), m.qid);
        for (size_t i = 0; i < leader_list.size(); i++)
            cands.emplace_back(leader_list[i].second, &conv[i]);
        auto recs = map_distances(qvec, cands, cfg_.workers, cfg_.kernel);
        phi_count += recs.size();
        for (size_t i = 0; i < recs.size(); i++) {
            payload::AdvLevel1Batch::Entry e;
            e.ordinal = leader_list[i].first;
            e.ref = recs[i].ref;
            e.ct = serialize_ciphertext(recs[i].ct, params_);
            reply.entries.push_back(std::move(e));
        }
    }
    if (phi_count) log_.compute(name_, "phi", phi_count, m.qid);

    adv_state_[m.qid] = std::move(st);
    return make_reply(m, name_, MsgKind::AdvLevel1Batch, reply.encode(),
                      ContentClass::DistanceCiphertexts, KeyTag::of({tags::ka()}));
}

Message CloudServerEntity::on_adv_cluster_request(const Message& m) {
    auto req = payload::AdvClusterRequest::decode(m.payload);
    auto stit = adv_state_.find(m.qid);
    if (req.done) {
        if (stit != adv_state_.end()) adv_state_.erase(stit);
        return make_reply(m, name_, MsgKind::AdvLevel2Batch, payload::AdvLevel2Batch{}.encode());
    }
    if (stit == adv_state_.end()) throw ProtocolError("no query state for cluster request");
    AdvQueryState& st = stit->second;

    for (uint32_t ord : req.ordinals)
        if (ord >= index_.clusters.size() ||
            !st.permitted.count(index_.clusters[ord].leader.owner_id))
            throw ProtocolError("cluster request outside the permitted owners");

    auto refs = collect_members(index_, req.ordinals, st.already);
    payload::AdvLevel2Batch reply;
    size_t phi_count = 0;
    // phi uses the query frequency vector built for the member's owner.
    for (const auto& ref : refs) {
        auto qit = st.queries.find(ref.owner_id);
        if (qit == st.queries.end()) continue;
        EncVector conv = convert_vector(db_.at(ref.locator()), *k_cs_, ConvertMode::strip, "k_KA");
        Ciphertext ct = cfg_.kernel == Kernel::distance ? phi_distance(qit->second, conv)
                                                        : phi_dot(qit->second, conv);
        phi_count++;
        payload::AdvLevel2Batch::Entry e;
        e.ref = ref;
        e.ct = serialize_ciphertext(ct, params_);
        reply.entries.push_back(std::move(e));
    }
    log_.compute(name_, "convert", refs.size(), m.qid);
    if (phi_count) log_.compute(name_, "phi", phi_count, m.qid);
    return make_reply(m, name_, MsgKind::AdvLevel2Batch, reply.encode(),
                      ContentClass::DistanceCiphertexts, KeyTag::of({tags::ka()}));
}

Message CloudServerEntity::on_index_update(const Message& m) {
    auto iu = payload::IndexUpdate::decode(m.payload);
    ClusterIndex incoming = parse_index(iu.topology);
    // topology references must resolve to ciphertexts already stored
    for (const auto& cl : incoming.clusters)
        for (const auto& ref : cl.members)
            if (!db_.count(ref.locator()))
                throw ProtocolError("topology reference without ciphertext: " + ref.locator());
    ClusterIndex g = index_;
    remove_owner(g, iu.owner);
    index_ = merge(g, incoming, iu.owner);
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_envelope_store(const Message& m) {
    auto es = payload::EnvelopeStore::decode(m.payload);
    envelopes_.insert_or_assign(es.owner, Envelope::from_bytes(es.pice));
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_envelope_fetch(const Message& m) {
    auto ef = payload::EnvelopeFetch::decode(m.payload);
    payload::EnvelopeReply reply;
    reply.permitted = static_cast<uint32_t>(permitted_owners(ef.attrs).size());
    for (const auto& [owner, env] : envelopes_) {
        auto pit = policies_.find(owner);
        if (pit == policies_.end() || !pit->second.evaluate(ef.attrs)) continue;
        reply.envelopes.emplace_back(owner, env.to_bytes());
    }
    return make_reply(m, name_, MsgKind::EnvelopeReply, reply.encode(),
                      ContentClass::EnvelopeData);
}

Message CloudServerEntity::on_blob_put(const Message& m) {
    auto bp = payload::BlobPut::decode(m.payload);
    blobs_.insert_or_assign(bp.owner + "/" + bp.image_id, bp.blob);
    return make_reply(m, name_, MsgKind::UploadAck, {});
}

Message CloudServerEntity::on_blob_get(const Message& m) {
    auto bg = payload::BlobGet::decode(m.payload);
    auto pit = policies_.find(bg.owner);
    if (pit == policies_.end() || !pit->second.evaluate(bg.attrs))
        throw AuthorizationError("attributes do not satisfy the owner's policy");
    auto it = blobs_.find(bg.owner + "/" + bg.image_id);
    ByteWriter w;
    w.u8(it != blobs_.end() ? 1 : 0);
    w.blob(it != blobs_.end() ? it->second : Bytes{});
    return make_reply(m, name_, MsgKind::BlobReply, w.take(), ContentClass::BlobData);
}

// ---------------------------------------------------------------- Client

void ClientEntity::restore_key(const HEParams& p, HEKey k) {
    params_ = p;
    k_u_ = std::move(k);
}

Message ClientEntity::handle(const Message& m) {
    try {
        if (m.kind != MsgKind::KeyShare)
            return error_reply(m, name_, "bad_kind", "client only accepts key shares");
        auto ks = payload::KeyShare::decode(m.payload);
        params_ = ks.params();
        if (k_u_) throw ProtocolError("client key already installed");
        k_u_ = parse_key(ks.pick, params_);
        return make_reply(m, name_, MsgKind::UploadAck, {});
    } catch (const std::exception& e) {
        return error_reply(m, name_, "client_error", e.what());
    }
}

} // namespace pic
