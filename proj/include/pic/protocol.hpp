#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pic/access_policy.hpp"
#include "pic/audit.hpp"
#include "pic/cluster_index.hpp"
#include "pic/descriptor.hpp"
#include "pic/enc_vector.hpp"
#include "pic/parallel_search.hpp"
#include "pic/search_plan.hpp"
#include "pic/wire.hpp"

namespace pic {

enum class MsgKind : uint8_t {
    KeyShare = 1,
    PolicySubmit,
    Upload,
    UploadConverted,
    UploadAck,
    BasicQuery,
    BasicQueryConverted,
    Level1Batch,
    ClusterRequest,
    Level2Batch,
    AdvQuery,
    AdvQueryConverted,
    AdvLevel1Batch,
    AdvClusterRequest,
    AdvLevel2Batch,
    IndexUpdate,
    EnvelopeStore,
    EnvelopeFetch,
    EnvelopeReply,
    BlobPut,
    BlobGet,
    BlobReply,
    SearchResult,
    ErrorReply,
};

struct Message {
    std::string sender;
    std::string receiver;
    MsgKind kind = MsgKind::ErrorReply;
    QueryId qid{};
    Bytes payload;
    // Audit annotations; they describe the payload and never carry keys.
    ContentClass content = ContentClass::Other;
    KeyTag key_tag;
};

// Sender/receiver travel inside the frame payload so the in-process and TCP
// transports carry identical bytes.
Frame message_to_frame(const Message& m);
Message message_from_frame(const Frame& f);

class Channel {
public:
    virtual ~Channel() = default;
    virtual Message request(const Message& m) = 0;
};

class Entity {
public:
    virtual ~Entity() = default;
    virtual Message handle(const Message& m) = 0;
    virtual const std::string& name() const = 0;
};

// Direct delivery with audit logging of both directions.
class LocalChannel : public Channel {
public:
    LocalChannel(Entity& target, AuditLog& log) : target_(target), log_(log) {}
    Message request(const Message& m) override;

private:
    Entity& target_;
    AuditLog& log_;
};

struct SystemConfig {
    unsigned lambda = 128;
    unsigned m_lvl = 2;
    FxpConfig fxp{40, 24};
    enum class Scheme { basic, advanced } scheme = Scheme::basic;
    enum class CPolicy { sqrt_n, explicit_c } c_policy = CPolicy::sqrt_n;
    uint32_t c_explicit = 0;
    uint32_t levels = 1;
    uint32_t alpha = 1;
    uint32_t beta = 1;
    uint32_t k_nn = 5;
    uint32_t vocab_size = 1000;
    uint32_t vocab_iters = 50;
    Kernel kernel = Kernel::distance;
    unsigned workers = 1;
    uint64_t seed = 1;
    size_t result_limit = 0; // 0 = unlimited

    uint32_t cluster_count(size_t n) const {
        return c_policy == CPolicy::sqrt_n ? default_cluster_count(n)
                                           : std::min<uint32_t>(c_explicit, uint32_t(n));
    }
};

// ---- Key Agent ----

class KeyAgentEntity : public Entity {
public:
    KeyAgentEntity(SystemConfig cfg, AuditLog& log) : cfg_(cfg), log_(log), name_("ka") {}

    void set_cs_channel(Channel* cs) { cs_ = cs; }
    void set_workers(unsigned w) { cfg_.workers = w; }

    Message handle(const Message& m) override;
    const std::string& name() const override { return name_; }

    bool has_master_share() const { return k_ka_.has_value(); }
    std::set<std::string> key_inventory() const;

private:
    Message on_key_share(const Message& m);
    Message on_upload(const Message& m);
    Message on_basic_query(const Message& m);
    Message on_adv_query(const Message& m);

    SystemConfig cfg_;
    AuditLog& log_;
    std::string name_;
    Channel* cs_ = nullptr;
    std::mutex mu_;

    HEParams params_;
    std::optional<HEKey> k_ka_;
    std::map<std::string, HEKey> user_mid_; // k_u' per user

public:
    // State access for persistence and invariant tests (simulation only).
    const HEParams& params() const { return params_; }
    const std::optional<HEKey>& master_share() const { return k_ka_; }
    const std::map<std::string, HEKey>& user_mid_shares() const { return user_mid_; }
    void restore(const HEParams& p, std::optional<HEKey> ka, std::map<std::string, HEKey> mids);
};

// ---- Cloud Server ----

class CloudServerEntity : public Entity {
public:
    CloudServerEntity(SystemConfig cfg, AuditLog& log) : cfg_(cfg), log_(log), name_("cs") {}

    void set_workers(unsigned w) { cfg_.workers = w; }

    Message handle(const Message& m) override;
    const std::string& name() const override { return name_; }

    std::set<std::string> key_inventory() const;
    size_t pending_query_states() const { return basic_state_.size() + adv_state_.size(); }

    const ClusterIndex& index() const { return index_; }
    const std::map<std::string, EncVector>& db() const { return db_; }
    const std::map<std::string, AccessTree>& policies() const { return policies_; }
    const std::map<std::string, Envelope>& envelopes() const { return envelopes_; }
    const HEParams& params() const { return params_; }
    const std::optional<HEKey>& master_share() const { return k_cs_; }
    const std::map<std::string, HEKey>& user_last_shares() const { return user_last_; }
    void restore(const HEParams& p, std::optional<HEKey> cs, std::map<std::string, HEKey> lasts,
                 std::map<std::string, EncVector> db, ClusterIndex idx,
                 std::map<std::string, std::string> policy_exprs,
                 std::map<std::string, Envelope> envelopes,
                 std::map<std::string, Bytes> blobs);
    const std::map<std::string, std::string>& policy_exprs() const { return policy_exprs_; }
    const std::map<std::string, Bytes>& blobs() const { return blobs_; }

private:
    Message on_key_share(const Message& m);
    Message on_policy_submit(const Message& m);
    Message on_upload_converted(const Message& m);
    Message on_basic_query_converted(const Message& m);
    Message on_cluster_request(const Message& m);
    Message on_adv_query_converted(const Message& m);
    Message on_adv_cluster_request(const Message& m);
    Message on_index_update(const Message& m);
    Message on_envelope_store(const Message& m);
    Message on_envelope_fetch(const Message& m);
    Message on_blob_put(const Message& m);
    Message on_blob_get(const Message& m);

    std::set<std::string> permitted_owners(const AttributeSet& attrs) const;

    SystemConfig cfg_;
    AuditLog& log_;
    std::string name_;
    std::mutex mu_;

    HEParams params_;
    std::optional<HEKey> k_cs_;
    std::map<std::string, HEKey> user_last_; // k_u'' per user
    std::map<std::string, EncVector> db_;    // locator -> ciphertexts under k
    ClusterIndex index_;
    std::map<std::string, AccessTree> policies_;
    std::map<std::string, std::string> policy_exprs_;
    std::map<std::string, Envelope> envelopes_;
    std::map<std::string, Bytes> blobs_;

    struct BasicQueryState {
        std::vector<EncVector> qvecs; // under k_KA
        std::set<std::string> permitted;
        std::map<uint32_t, std::set<VectorRef>> already; // per qvec
    };
    struct AdvQueryState {
        std::map<std::string, EncVector> queries; // per owner, under k_KA
        std::set<std::string> permitted;
        std::set<VectorRef> already;
    };
    std::map<QueryId, BasicQueryState> basic_state_;
    std::map<QueryId, AdvQueryState> adv_state_;
};

// ---- Client ----

struct OwnedImage {
    std::string image_id;
    std::vector<std::vector<float>> vectors;
};

class ClientEntity : public Entity {
public:
    ClientEntity(std::string id, SystemConfig cfg, AuditLog& log)
        : cfg_(cfg), log_(log), name_(std::move(id)) {}

    Message handle(const Message& m) override; // KeyShare delivery only
    const std::string& name() const override { return name_; }

    bool registered() const { return k_u_.has_value(); }
    const HEParams& params() const { return params_; }
    const std::optional<HEKey>& user_key() const { return k_u_; }

    // Owner-side plaintext world.
    std::vector<OwnedImage> images;
    std::vector<IndexedVector> fxp_vectors; // basic scheme refs + raws
    ClusterIndex own_index;
    std::string policy_expr;
    Vocabulary vocab;                    // advanced
    CorpusStats stats;                   // advanced
    std::map<std::string, std::vector<int64_t>> freq_raws; // advanced: image -> raws

    void restore_key(const HEParams& p, HEKey k);

private:
    SystemConfig cfg_;
    AuditLog& log_;
    std::string name_;
    HEParams params_;
    std::optional<HEKey> k_u_;
};

// ---- whole-system simulator ----

struct SearchRequest {
    std::string querier;
    std::vector<std::vector<float>> query_vectors;
    std::vector<std::string> attributes;
    uint32_t k_nn = 0;                    // 0: use the configured default
    int64_t theta = kAutoThreshold;       // advanced only, scaled units
    int64_t theta_prime = kAutoThreshold; // advanced only, scaled units
};

class System {
public:
    explicit System(SystemConfig cfg);

    // TP picks parameters, generates the master key and hands the ordered
    // halves to KA and CS. Second call rejected.
    void init();

    // TP splits k three ways for the user; the user's policy goes to CS.
    void register_user(const std::string& user_id, const std::string& policy_expr);

    void upload_basic(const std::string& owner, const std::vector<ImageDescriptor>& descriptors);
    void upload_advanced(const std::string& owner, const std::vector<ImageDescriptor>& descriptors);

    // Rebuilds the owner's cluster topology from his plaintext mirror with
    // C = cluster_count(N) and swaps it into the merged index at CS. The
    // stored ciphertexts are untouched; only references move.
    void rebuild_index(const std::string& owner);

    SearchOutcome search_basic(const SearchRequest& req);
    SearchOutcome search_advanced(const SearchRequest& req);

    // Plaintext mirror of the search pipelines; distances come from direct
    // fixed-point arithmetic instead of decrypted ciphertexts.
    SearchOutcome oracle_search_basic(const SearchRequest& req) const;
    SearchOutcome oracle_search_advanced(const SearchRequest& req) const;

    void put_blob(const std::string& owner, const std::string& image_id, const Bytes& blob);
    Bytes fetch_blob(const std::string& querier, const std::string& owner,
                     const std::string& image_id, const std::vector<std::string>& attrs);

    const AuditLog& audit() const { return audit_; }
    AuditLog& audit() { return audit_; }
    const HEParams& params() const { return params_; }
    const SystemConfig& config() const { return cfg_; }
    bool initialized() const { return initialized_; }

    KeyAgentEntity& ka() { return *ka_; }
    CloudServerEntity& cs() { return *cs_; }
    ClientEntity& client(const std::string& id);
    const ClientEntity& client(const std::string& id) const;
    std::vector<std::string> client_ids() const;

    // TP-held master key, exposed for correctness oracles in tests/tools.
    const HEKey& master_key_for_oracle() const;

    QueryId last_query_id() const { return last_qid_; }

    void set_workers(unsigned w) {
        cfg_.workers = w;
        ka_->set_workers(w);
        cs_->set_workers(w);
    }

    // Entity channels may be swapped for remote (TCP) transports.
    void set_ka_channel(std::unique_ptr<Channel> ch) { ka_channel_ = std::move(ch); }
    void set_cs_client_channel(std::unique_ptr<Channel> ch) { cs_client_channel_ = std::move(ch); }

    Rng& rng() { return rng_; }

private:
    friend class SystemStore;

    QueryId fresh_qid();
    void deliver_key_share(const std::string& receiver, Entity& target, const std::string& atom,
                           const std::string& scope, const HEKey& key);
    Message client_request(Channel& ch, Message m);
    std::vector<IndexedVector> fxp_encode_images(const std::string& owner,
                                                 const std::vector<ImageDescriptor>& descriptors,
                                                 size_t ordinal_base) const;

    SystemConfig cfg_;
    AuditLog audit_;
    std::mutex rng_mu_;
    Rng rng_;
    HEParams params_;
    bool initialized_ = false;
    std::optional<HEKey> master_; // TP state; prime factors were never kept

    std::unique_ptr<KeyAgentEntity> ka_;
    std::unique_ptr<CloudServerEntity> cs_;
    std::map<std::string, std::unique_ptr<ClientEntity>> clients_;

    std::unique_ptr<Channel> ka_channel_;        // client -> KA
    std::unique_ptr<Channel> cs_channel_for_ka_; // KA -> CS
    std::unique_ptr<Channel> cs_client_channel_; // client -> CS (envelopes, blobs)

    QueryId last_qid_{};
};

// Payload helpers shared with the CLI's remote mode.
Bytes encode_search_result(const SearchOutcome& o);
SearchOutcome decode_search_result(const Bytes& b);

} // namespace pic
