#include <algorithm>

#include "pic/errors.hpp"
#include "pic/protocol.hpp"
#include "payloads.hpp"

namespace pic {

namespace {

Message make_msg(std::string sender, std::string receiver, MsgKind kind, const QueryId& qid,
                 Bytes body, ContentClass content = ContentClass::Other, KeyTag tag = {}) {
    Message m;
    m.sender = std::move(sender);
    m.receiver = std::move(receiver);
    m.kind = kind;
    m.qid = qid;
    m.payload = std::move(body);
    m.content = content;
    m.key_tag = std::move(tag);
    return m;
}

} // namespace

System::System(SystemConfig cfg)
    : cfg_(cfg), rng_(cfg.seed) {
    cfg_.fxp.validate();
    ka_ = std::make_unique<KeyAgentEntity>(cfg_, audit_);
    cs_ = std::make_unique<CloudServerEntity>(cfg_, audit_);
    ka_channel_ = std::make_unique<LocalChannel>(*ka_, audit_);
    cs_channel_for_ka_ = std::make_unique<LocalChannel>(*cs_, audit_);
    cs_client_channel_ = std::make_unique<LocalChannel>(*cs_, audit_);
    ka_->set_cs_channel(cs_channel_for_ka_.get());
}

QueryId System::fresh_qid() {
    std::lock_guard<std::mutex> lk(rng_mu_);
    QueryId q{};
    for (auto& b : q) b = static_cast<uint8_t>(rng_.u64());
    last_qid_ = q;
    return q;
}

Message System::client_request(Channel& ch, Message m) {
    Message reply = ch.request(m);
    if (reply.kind == MsgKind::ErrorReply) {
        auto e = payload::ErrorReply::decode(reply.payload);
        throw ProtocolError(e.code + ": " + e.text);
    }
    return reply;
}

void System::deliver_key_share(const std::string& receiver, Entity& target,
                               const std::string& atom, const std::string& scope,
                               const HEKey& key) {
    payload::KeyShare ks;
    ks.atom = atom;
    ks.scope = scope;
    ks.pick = serialize_key(key, params_);
    ks.lambda = params_.lambda;
    ks.m_lvl = params_.m_lvl;
    ks.n_bytes = payload::KeyShare::export_n(params_.n);
    Message m = make_msg("tp", receiver, MsgKind::KeyShare, QueryId{}, ks.encode(),
                         ContentClass::KeyMaterial, KeyTag::of({atom}));
    LocalChannel ch(target, audit_);
    client_request(ch, std::move(m));
}

void System::init() {
    if (initialized_) throw ProtocolError("system already initialized");
    Rng tp_rng = rng_.derive("tp");
    params_ = gen_params(cfg_.lambda, cfg_.m_lvl, tp_rng);
    master_ = gen_key(params_, tp_rng);
    auto halves = split_key(*master_, 2, params_, tp_rng); // k = k_KA * k_CS
    deliver_key_share("ka", *ka_, tags::ka(), "", halves[0]);
    deliver_key_share("cs", *cs_, tags::cs(), "", halves[1]);
    initialized_ = true;
}

void System::register_user(const std::string& user_id, const std::string& policy_expr) {
    if (!initialized_) throw ProtocolError("system not initialized");
    if (user_id.empty() || user_id == "tp" || user_id == "ka" || user_id == "cs")
        throw ProtocolError("reserved entity name");
    if (user_id.find('/') != std::string::npos || user_id.find('#') != std::string::npos)
        throw ProtocolError("user id must not contain '/' or '#'");
    if (clients_.count(user_id)) throw ProtocolError("user already registered: " + user_id);

    Rng reg_rng = rng_.derive("register:" + user_id);
    auto thirds = split_key(*master_, 3, params_, reg_rng); // k = k_u * k_u' * k_u''
    auto client = std::make_unique<ClientEntity>(user_id, cfg_, audit_);
    deliver_key_share(user_id, *client, tags::user(user_id), "", thirds[0]);
    deliver_key_share("ka", *ka_, tags::user_mid(user_id), user_id, thirds[1]);
    deliver_key_share("cs", *cs_, tags::user_last(user_id), user_id, thirds[2]);
    client->policy_expr = policy_expr;
    clients_.emplace(user_id, std::move(client));

    payload::PolicySubmit ps{user_id, policy_expr};
    Message m = make_msg(user_id, "cs", MsgKind::PolicySubmit, QueryId{}, ps.encode(),
                         ContentClass::PolicyData);
    client_request(*cs_client_channel_, std::move(m));
}

ClientEntity& System::client(const std::string& id) {
    auto it = clients_.find(id);
    if (it == clients_.end()) throw ProtocolError("unknown user: " + id);
    return *it->second;
}

const ClientEntity& System::client(const std::string& id) const {
    auto it = clients_.find(id);
    if (it == clients_.end()) throw ProtocolError("unknown user: " + id);
    return *it->second;
}

std::vector<std::string> System::client_ids() const {
    std::vector<std::string> out;
    for (const auto& [id, c] : clients_) out.push_back(id);
    return out;
}

const HEKey& System::master_key_for_oracle() const {
    if (!master_) throw ProtocolError("system not initialized");
    return *master_;
}

std::vector<IndexedVector> System::fxp_encode_images(const std::string& owner,
                                                     const std::vector<ImageDescriptor>& descriptors,
                                                     size_t) const {
    std::vector<IndexedVector> out;
    for (const auto& d : descriptors) {
        if (d.vectors.empty()) throw ProtocolError("descriptor without vectors: " + d.image_id);
        if (d.image_id.find('/') != std::string::npos || d.image_id.find('#') != std::string::npos)
            throw ProtocolError("image id must not contain '/' or '#'");
        for (uint32_t i = 0; i < d.vectors.size(); i++) {
            IndexedVector iv;
            iv.ref = VectorRef{owner, d.image_id, i};
            iv.raws.reserve(d.vectors[i].size());
            for (float f : d.vectors[i]) iv.raws.push_back(encode(double(f), cfg_.fxp).raw);
            out.push_back(std::move(iv));
        }
    }
    return out;
}

void System::upload_basic(const std::string& owner, const std::vector<ImageDescriptor>& descriptors) {
    ClientEntity& c = client(owner);
    if (!c.registered()) throw ProtocolError("owner not registered");
    if (descriptors.empty()) return; // no-op
    size_t dim = descriptors.front().vectors.front().size();
    for (const auto& d : descriptors)
        for (const auto& v : d.vectors)
            if (v.size() != dim) throw DimensionError("upload dimension mismatch");
    check_capacity(dim, cfg_.fxp, params_);
    for (const auto& d : descriptors)
        for (const auto& prev : c.images)
            if (prev.image_id == d.image_id)
                throw ProtocolError("image already uploaded: " + d.image_id);

    QueryId qid = fresh_qid();
    audit_.span_begin("upload", owner, qid);

    auto new_vectors = fxp_encode_images(owner, descriptors, 0);
    if (c.own_index.empty()) {
        std::vector<IndexedVector> all = c.fxp_vectors;
        all.insert(all.end(), new_vectors.begin(), new_vectors.end());
        uint32_t ccount = cfg_.cluster_count(all.size());
        c.own_index = build_index(all, ccount, cfg_.levels, cfg_.alpha,
                                  Rng(cfg_.seed).derive("index:" + owner).u64());
    } else {
        std::map<std::string, const std::vector<int64_t>*> by_loc;
        for (const auto& v : c.fxp_vectors) by_loc[v.ref.locator()] = &v.raws;
        extend_index(c.own_index, owner, new_vectors,
                     [&](const VectorRef& r) { return *by_loc.at(r.locator()); });
    }
    for (const auto& d : descriptors) c.images.push_back(OwnedImage{d.image_id, d.vectors});
    c.fxp_vectors.insert(c.fxp_vectors.end(), new_vectors.begin(), new_vectors.end());

    payload::Upload up;
    up.owner = owner;
    up.replace = false;
    up.dim = static_cast<uint32_t>(dim);
    up.topology = serialize_index(c.own_index);
    Rng enc_rng = rng_.derive("upload:" + owner + ":" + std::to_string(c.images.size()));
    for (const auto& v : new_vectors) {
        PlainVector pv;
        pv.coords.reserve(v.raws.size());
        for (int64_t r : v.raws) pv.coords.push_back(FxpValue{r});
        EncVector enc = encrypt_vector(pv, *c.user_key(), params_, enc_rng, tags::user(owner));
        up.items.push_back(payload::UploadItem{v.ref, serialize_enc_vector(enc, params_)});
    }

    Message m = make_msg(owner, "ka", MsgKind::Upload, qid, up.encode(),
                         ContentClass::VectorCiphertexts, KeyTag::of({tags::user(owner)}));
    client_request(*ka_channel_, std::move(m));
    audit_.span_end("upload", owner, qid);
}

void System::upload_advanced(const std::string& owner,
                             const std::vector<ImageDescriptor>& descriptors) {
    ClientEntity& c = client(owner);
    if (!c.registered()) throw ProtocolError("owner not registered");
    if (descriptors.empty()) return;
    check_capacity(cfg_.vocab_size, cfg_.fxp, params_);

    QueryId qid = fresh_qid();
    audit_.span_begin("upload", owner, qid);

    // Advanced re-upload replaces the owner's slice: the vocabulary and all
    // weights depend on the full image set.
    c.images.clear();
    for (const auto& d : descriptors) {
        if (d.vectors.empty()) throw ProtocolError("descriptor without vectors: " + d.image_id);
        c.images.push_back(OwnedImage{d.image_id, d.vectors});
    }

    std::vector<std::vector<float>> all_vecs;
    for (const auto& img : c.images)
        all_vecs.insert(all_vecs.end(), img.vectors.begin(), img.vectors.end());
    c.vocab = build_vocabulary(all_vecs, cfg_.vocab_size, cfg_.vocab_iters,
                               Rng(cfg_.seed).derive("vocab:" + owner).u64());

    std::vector<std::vector<uint32_t>> counts;
    counts.reserve(c.images.size());
    for (const auto& img : c.images)
        counts.push_back(quantize(ImageDescriptor{img.image_id, img.vectors}, c.vocab));
    c.stats = build_corpus_stats(counts);

    payload::OwnerParams op;
    op.vocab = c.vocab;
    op.stats = c.stats;
    std::vector<IndexedVector> freq_vectors;
    c.freq_raws.clear();
    for (size_t i = 0; i < c.images.size(); i++) {
        op.image_counts.emplace_back(c.images[i].image_id, counts[i]);
        FrequencyVector f = weight_tfidf(c.images[i].image_id, counts[i], c.stats);
        IndexedVector iv;
        iv.ref = VectorRef{owner, c.images[i].image_id, 0};
        iv.raws.reserve(f.weights.size());
        for (double w : f.weights) iv.raws.push_back(encode(w, cfg_.fxp).raw);
        c.freq_raws[c.images[i].image_id] = iv.raws;
        freq_vectors.push_back(std::move(iv));
    }

    uint32_t ccount = cfg_.cluster_count(freq_vectors.size());
    c.own_index = build_index(freq_vectors, ccount, cfg_.levels, cfg_.alpha,
                              Rng(cfg_.seed).derive("index:" + owner).u64());

    // Dictionary and weight parameters travel under the owner's policy.
    Envelope env = seal_envelope(op.encode(), AccessTree::parse(c.policy_expr));
    payload::EnvelopeStore es{owner, env.to_bytes()};
    client_request(*cs_client_channel_,
                   make_msg(owner, "cs", MsgKind::EnvelopeStore, qid, es.encode(),
                            ContentClass::EnvelopeData));

    payload::Upload up;
    up.owner = owner;
    up.replace = true;
    up.dim = cfg_.vocab_size;
    up.topology = serialize_index(c.own_index);
    Rng enc_rng = rng_.derive("upload_adv:" + owner);
    for (const auto& v : freq_vectors) {
        PlainVector pv;
        pv.coords.reserve(v.raws.size());
        for (int64_t r : v.raws) pv.coords.push_back(FxpValue{r});
        EncVector enc = encrypt_vector(pv, *c.user_key(), params_, enc_rng, tags::user(owner));
        up.items.push_back(payload::UploadItem{v.ref, serialize_enc_vector(enc, params_)});
    }
    Message m = make_msg(owner, "ka", MsgKind::Upload, qid, up.encode(),
                         ContentClass::VectorCiphertexts, KeyTag::of({tags::user(owner)}));
    client_request(*ka_channel_, std::move(m));
    audit_.span_end("upload", owner, qid);
}

void System::rebuild_index(const std::string& owner) {
    ClientEntity& c = client(owner);
    if (!c.registered()) throw ProtocolError("owner not registered");
    if (c.images.empty()) throw ProtocolError("owner has no uploaded images");
    QueryId qid = fresh_qid();
    audit_.span_begin("upload", owner, qid);
    if (cfg_.scheme == SystemConfig::Scheme::basic) {
        uint32_t ccount = cfg_.cluster_count(c.fxp_vectors.size());
        c.own_index = build_index(c.fxp_vectors, ccount, cfg_.levels, cfg_.alpha,
                                  Rng(cfg_.seed).derive("index:" + owner).u64() ^
                                      c.fxp_vectors.size());
    } else {
        std::vector<IndexedVector> freq_vectors;
        for (const auto& [image_id, raws] : c.freq_raws)
            freq_vectors.push_back(IndexedVector{VectorRef{owner, image_id, 0}, raws});
        uint32_t ccount = cfg_.cluster_count(freq_vectors.size());
        c.own_index = build_index(freq_vectors, ccount, cfg_.levels, cfg_.alpha,
                                  Rng(cfg_.seed).derive("index:" + owner).u64() ^
                                      freq_vectors.size());
    }
    payload::IndexUpdate iu{owner, serialize_index(c.own_index)};
    Message m = make_msg(owner, "cs", MsgKind::IndexUpdate, qid, iu.encode(),
                         ContentClass::IndexTopology);
    client_request(*cs_client_channel_, std::move(m));
    audit_.span_end("upload", owner, qid);
}

SearchOutcome System::search_basic(const SearchRequest& req) {
    ClientEntity& c = client(req.querier);
    if (!c.registered()) throw ProtocolError("querier not registered");
    if (req.query_vectors.empty()) throw ProtocolError("empty query");
    size_t dim = req.query_vectors.front().size();
    check_capacity(dim, cfg_.fxp, params_);

    QueryId qid = fresh_qid();
    audit_.span_begin("search", req.querier, qid);

    payload::BasicQuery q;
    q.querier = req.querier;
    q.k_nn = req.k_nn > 0 ? req.k_nn : cfg_.k_nn;
    q.beta = cfg_.beta;
    q.limit = cfg_.result_limit;
    q.attrs = hash_attributes(req.attributes);
    Rng enc_rng = rng_.derive("query:" + req.querier + ":" + std::to_string(audit_.size()));
    for (const auto& vec : req.query_vectors) {
        if (vec.size() != dim) throw DimensionError("query dimension mismatch");
        std::vector<double> d(vec.begin(), vec.end());
        PlainVector pv = PlainVector::encode_reals(d, cfg_.fxp);
        EncVector enc = encrypt_vector(pv, *c.user_key(), params_, enc_rng, tags::user(req.querier));
        q.qvecs.push_back(serialize_enc_vector(enc, params_));
    }

    Message m = make_msg(req.querier, "ka", MsgKind::BasicQuery, qid, q.encode(),
                         ContentClass::VectorCiphertexts, KeyTag::of({tags::user(req.querier)}));
    Message rep = client_request(*ka_channel_, std::move(m));
    SearchOutcome out = decode_search_result(rep.payload);
    audit_.span_end("search", req.querier, qid);
    return out;
}

SearchOutcome System::search_advanced(const SearchRequest& req) {
    ClientEntity& c = client(req.querier);
    if (!c.registered()) throw ProtocolError("querier not registered");
    if (req.query_vectors.empty()) throw ProtocolError("empty query");

    QueryId qid = fresh_qid();
    audit_.span_begin("search", req.querier, qid);

    AttributeSet attrs = hash_attributes(req.attributes);
    payload::EnvelopeFetch ef{req.querier, attrs};
    Message em = make_msg(req.querier, "cs", MsgKind::EnvelopeFetch, qid, ef.encode(),
                          ContentClass::Other);
    Message erep = client_request(*cs_client_channel_, std::move(em));
    auto envs = payload::EnvelopeReply::decode(erep.payload);

    if (envs.envelopes.empty()) {
        audit_.span_end("search", req.querier, qid);
        return SearchOutcome{envs.permitted, {}};
    }

    const int64_t sign = cfg_.kernel == Kernel::dot ? -1 : 1;
    payload::AdvQuery q;
    q.querier = req.querier;
    q.k_nn = req.k_nn > 0 ? req.k_nn : cfg_.k_nn;
    q.cluster_target = cfg_.beta;
    q.theta = req.theta == kAutoThreshold ? kAutoThreshold : sign * req.theta;
    q.theta_prime = req.theta_prime == kAutoThreshold ? kAutoThreshold : sign * req.theta_prime;
    q.limit = cfg_.result_limit;
    q.attrs = attrs;

    Rng enc_rng = rng_.derive("query_adv:" + req.querier + ":" + std::to_string(audit_.size()));
    for (const auto& [owner, pice] : envs.envelopes) {
        Envelope env = Envelope::from_bytes(pice);
        Bytes body = open_envelope(env, attrs);
        auto op = payload::OwnerParams::decode(body);
        ImageDescriptor qd{"query", req.query_vectors};
        std::vector<uint32_t> counts = quantize(qd, op.vocab);
        std::vector<double> w = weight_query_tfidf(counts, op.stats);
        PlainVector pv = PlainVector::encode_reals(w, cfg_.fxp);
        EncVector enc = encrypt_vector(pv, *c.user_key(), params_, enc_rng, tags::user(req.querier));
        q.per_owner.emplace_back(owner, serialize_enc_vector(enc, params_));
    }

    Message m = make_msg(req.querier, "ka", MsgKind::AdvQuery, qid, q.encode(),
                         ContentClass::VectorCiphertexts, KeyTag::of({tags::user(req.querier)}));
    Message rep = client_request(*ka_channel_, std::move(m));
    SearchOutcome out = decode_search_result(rep.payload);
    audit_.span_end("search", req.querier, qid);
    return out;
}

void System::put_blob(const std::string& owner, const std::string& image_id, const Bytes& blob) {
    client(owner);
    payload::BlobPut bp{owner, image_id, blob};
    client_request(*cs_client_channel_, make_msg(owner, "cs", MsgKind::BlobPut, fresh_qid(),
                                                 bp.encode(), ContentClass::BlobData));
}

Bytes System::fetch_blob(const std::string& querier, const std::string& owner,
                         const std::string& image_id, const std::vector<std::string>& attrs) {
    client(querier);
    payload::BlobGet bg{querier, owner, image_id, hash_attributes(attrs)};
    Message rep = client_request(*cs_client_channel_,
                                 make_msg(querier, "cs", MsgKind::BlobGet, fresh_qid(), bg.encode(),
                                          ContentClass::BlobData));
    ByteReader r(rep.payload);
    bool found = r.u8() != 0;
    Bytes blob = r.blob();
    if (!found) throw ProtocolError("no such blob: " + owner + "/" + image_id);
    return blob;
}

// ------------------------------------------------------------- oracle side

SearchOutcome System::oracle_search_basic(const SearchRequest& req) const {
    const ClusterIndex& idx = cs_->index();
    AttributeSet attrs = hash_attributes(req.attributes);
    std::set<std::string> permitted;
    for (const auto& [owner, tree] : cs_->policies())
        if (tree.evaluate(attrs)) permitted.insert(owner);

    SearchOutcome out;
    out.permitted_owners = permitted.size();
    if (permitted.empty()) return out;

    std::map<std::string, const std::vector<int64_t>*> raws;
    for (const auto& [id, cptr] : clients_)
        for (const auto& v : cptr->fxp_vectors) raws[v.ref.locator()] = &v.raws;

    auto leader_list = leaders(idx, permitted);
    std::sort(leader_list.begin(), leader_list.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    if (leader_list.empty()) return out;

    std::vector<std::vector<int64_t>> queries;
    for (const auto& vec : req.query_vectors) {
        std::vector<int64_t> raw;
        raw.reserve(vec.size());
        for (float f : vec) raw.push_back(encode(double(f), cfg_.fxp).raw);
        queries.push_back(std::move(raw));
    }

    BasicPlanner planner(queries.size(), req.k_nn > 0 ? req.k_nn : cfg_.k_nn, cfg_.beta);
    for (size_t qi = 0; qi < queries.size(); qi++) {
        std::vector<std::pair<int64_t, uint32_t>> dists;
        dists.reserve(leader_list.size());
        for (const auto& [ord, ref] : leader_list)
            dists.emplace_back(sqdist_i64(queries[qi], *raws.at(ref.locator())), ord);
        planner.set_leader_ranking(qi, rank_leaders(dists, idx));
    }

    std::map<uint32_t, std::set<VectorRef>> already;
    for (;;) {
        auto plan = planner.next_fetch();
        if (plan.empty()) break;
        for (const auto& [qv, ords] : plan) {
            auto refs = collect_members(idx, ords, already[qv]);
            std::vector<PlainDistRecord> recs;
            recs.reserve(refs.size());
            for (const auto& ref : refs)
                recs.push_back(PlainDistRecord{ref, sqdist_i64(queries[qv], *raws.at(ref.locator()))});
            planner.feed(qv, recs);
        }
    }
    out.ranked = planner.finalize(cfg_.result_limit);
    return out;
}

SearchOutcome System::oracle_search_advanced(const SearchRequest& req) const {
    const ClusterIndex& idx = cs_->index();
    AttributeSet attrs = hash_attributes(req.attributes);
    std::set<std::string> satisfying; // every policy-satisfying user
    for (const auto& [owner, tree] : cs_->policies())
        if (tree.evaluate(attrs)) satisfying.insert(owner);
    std::set<std::string> permitted; // searchable: satisfying owners with data
    for (const auto& owner : satisfying)
        if (cs_->envelopes().count(owner)) permitted.insert(owner);

    SearchOutcome out;
    out.permitted_owners = satisfying.size();
    if (permitted.empty()) return out;

    const int64_t sign = cfg_.kernel == Kernel::dot ? -1 : 1;

    // Per-owner query weights from the owner's dictionary, idf terms included.
    std::map<std::string, std::vector<int64_t>> queries;
    for (const auto& owner : permitted) {
        const ClientEntity& oc = client(owner);
        ImageDescriptor qd{"query", req.query_vectors};
        std::vector<uint32_t> counts = quantize(qd, oc.vocab);
        std::vector<double> w = weight_query_tfidf(counts, oc.stats);
        std::vector<int64_t> raw;
        raw.reserve(w.size());
        for (double x : w) raw.push_back(encode(x, cfg_.fxp).raw);
        queries[owner] = std::move(raw);
    }

    auto value_of = [&](const std::string& owner, const VectorRef& ref) {
        const ClientEntity& oc = client(owner);
        const std::vector<int64_t>& img = oc.freq_raws.at(ref.image_id);
        if (cfg_.kernel == Kernel::distance) return sqdist_i64(queries.at(owner), img);
        return -dot_i64(queries.at(owner), img);
    };

    std::vector<std::pair<int64_t, uint32_t>> leader_dists;
    for (const auto& owner : permitted) {
        auto leader_list = leaders(idx, {owner});
        for (const auto& [ord, ref] : leader_list)
            leader_dists.emplace_back(value_of(owner, ref), ord);
    }

    AdvancedPlanner planner(req.k_nn > 0 ? req.k_nn : cfg_.k_nn, cfg_.beta,
                            req.theta == kAutoThreshold ? kAutoThreshold : sign * req.theta,
                            req.theta_prime == kAutoThreshold ? kAutoThreshold
                                                              : sign * req.theta_prime);
    planner.set_leader_distances(std::move(leader_dists));

    std::set<VectorRef> already;
    while (!planner.done()) {
        auto ords = planner.next_fetch();
        if (ords.empty()) continue;
        auto refs = collect_members(idx, ords, already);
        std::vector<PlainDistRecord> recs;
        recs.reserve(refs.size());
        for (const auto& ref : refs)
            recs.push_back(PlainDistRecord{ref, value_of(ref.owner_id, ref)});
        planner.feed(recs);
    }
    out.ranked = planner.finalize(cfg_.result_limit);
    if (sign < 0)
        for (auto& r : out.ranked) r.value = -r.value;
    return out;
}

} // namespace pic
