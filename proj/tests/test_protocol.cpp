#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "pic/errors.hpp"
#include "pic/protocol.hpp"
#include "pic/remote.hpp"
#include "pic/store.hpp"

using namespace pic;

namespace {

SystemConfig small_cfg(SystemConfig::Scheme scheme = SystemConfig::Scheme::basic) {
    SystemConfig cfg;
    cfg.lambda = 64;
    cfg.m_lvl = 1;
    cfg.scheme = scheme;
    cfg.k_nn = 3;
    cfg.beta = 1;
    cfg.seed = 1234;
    cfg.vocab_size = 6;
    cfg.vocab_iters = 30;
    return cfg;
}

// Synthetic corpus: each image is a tight cloud around its own center, so
// nearest-neighbor structure is unambiguous.
std::vector<ImageDescriptor> synth_images(std::mt19937_64& mt, size_t n_images,
                                          size_t vecs_per_image, size_t dim,
                                          double spread = 1.0) {
    std::uniform_real_distribution<double> center(0.0, 200.0);
    std::uniform_real_distribution<double> jitter(-spread, spread);
    std::vector<ImageDescriptor> out;
    for (size_t i = 0; i < n_images; i++) {
        ImageDescriptor d;
        d.image_id = "img" + std::to_string(100 + i);
        std::vector<double> c(dim);
        for (auto& x : c) x = center(mt);
        for (size_t v = 0; v < vecs_per_image; v++) {
            std::vector<float> vec(dim);
            for (size_t k = 0; k < dim; k++) vec[k] = float(c[k] + jitter(mt));
            d.vectors.push_back(std::move(vec));
        }
        out.push_back(std::move(d));
    }
    return out;
}

bool same_outcome(const SearchOutcome& a, const SearchOutcome& b) {
    return a.permitted_owners == b.permitted_owners && a.ranked == b.ranked;
}

} // namespace

TEST_CASE("init: key split discipline and idempotence") {
    System sys(small_cfg());
    sys.init();
    CHECK(sys.initialized());
    CHECK_THROWS_AS(sys.init(), ProtocolError);

    // k = k_KA * k_CS, in that order
    const HEKey& k = sys.master_key_for_oracle();
    const HEKey& ka = *sys.ka().master_share();
    const HEKey& cs = *sys.cs().master_share();
    CHECK(ka.mat.mul(cs.mat) == k.mat);
    CHECK_FALSE(cs.mat.mul(ka.mat) == k.mat); // matrices do not commute

    // decryption works under k at TP; the KA share alone fails
    Rng rng(5);
    mpz_class m = rng.residue(sys.params().n);
    Ciphertext c = encrypt(m, k, sys.params(), rng);
    CHECK(decrypt(c, k, sys.params()) == m);
    CHECK(decrypt(c, ka, sys.params()) != m);
}

TEST_CASE("register: three-way split, duplicates, reserved names") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"student\"");
    CHECK_THROWS_AS(sys.register_user("alice", "\"x\""), ProtocolError);
    CHECK_THROWS_AS(sys.register_user("cs", "\"x\""), ProtocolError);
    CHECK_THROWS_AS(sys.register_user("bad/name", "\"x\""), ProtocolError);

    const HEKey& k = sys.master_key_for_oracle();
    const HEKey& ku = *sys.client("alice").user_key();
    const HEKey& kup = sys.ka().user_mid_shares().at("alice");
    const HEKey& kupp = sys.cs().user_last_shares().at("alice");
    CHECK(ku.mat.mul(kup.mat).mul(kupp.mat) == k.mat);

    // chain conversion of a test ciphertext through the three shares
    Rng rng(6);
    mpz_class m = rng.residue(sys.params().n);
    Ciphertext c = encrypt(m, ku, sys.params(), rng);
    c = convert_append(c, kup);
    c = convert_append(c, kupp);
    CHECK(decrypt(c, k, sys.params()) == m);
}

TEST_CASE("key discipline: no entity but TP can assemble k") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"student\"");
    sys.register_user("bob", "\"staff\"");

    auto ka_inv = sys.ka().key_inventory();
    auto cs_inv = sys.cs().key_inventory();
    CHECK(ka_inv.count(tags::ka()));
    CHECK_FALSE(ka_inv.count(tags::cs()));
    CHECK(ka_inv.count(tags::user_mid("alice")));
    CHECK_FALSE(ka_inv.count(tags::user("alice")));
    CHECK_FALSE(ka_inv.count(tags::user_last("alice")));
    CHECK(cs_inv.count(tags::cs()));
    CHECK_FALSE(cs_inv.count(tags::ka()));
    CHECK(cs_inv.count(tags::user_last("bob")));
    CHECK_FALSE(cs_inv.count(tags::user_mid("bob")));
    CHECK_FALSE(KeyTag::master().coverable_by(ka_inv));
    CHECK_FALSE(KeyTag::master().coverable_by(cs_inv));
}

TEST_CASE("upload_basic: stored ciphertexts decrypt under k to the fixed-point coords") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"student\"");

    sys.upload_basic("alice", {}); // no-op
    CHECK(sys.cs().db().empty());

    std::mt19937_64 mt(7);
    auto images = synth_images(mt, 4, 3, 6);
    sys.upload_basic("alice", images);

    CHECK(sys.cs().db().size() == 12);
    CHECK(sys.cs().index().leader_count() == default_cluster_count(12));

    const auto& client = sys.client("alice");
    for (const auto& iv : client.fxp_vectors) {
        const EncVector& stored = sys.cs().db().at(iv.ref.locator());
        PlainVector dec = decrypt_vector(stored, sys.master_key_for_oracle(), sys.params());
        REQUIRE(dec.dim() == iv.raws.size());
        for (size_t j = 0; j < iv.raws.size(); j++) CHECK(dec.coords[j].raw == iv.raws[j]);
    }

    CHECK_THROWS_AS(sys.upload_basic("alice", {images[0]}), ProtocolError); // duplicate image
    CHECK_THROWS_AS(sys.upload_basic("nobody", {images[0]}), ProtocolError);

    // incremental second upload extends the same leader set
    auto more = synth_images(mt, 2, 3, 6);
    more[0].image_id = "extra1";
    more[1].image_id = "extra2";
    sys.upload_basic("alice", more);
    CHECK(sys.cs().db().size() == 18);
    CHECK(sys.cs().index().leader_count() == default_cluster_count(12));
}

TEST_CASE("search_basic: exact stored descriptor ranks first at full probe") {
    SystemConfig cfg = small_cfg();
    cfg.beta = 1000; // larger than any leader count: exhaustive probing
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");

    std::mt19937_64 mt(8);
    auto images = synth_images(mt, 10, 4, 6, 0.5);
    sys.upload_basic("alice", images);

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = images[3].vectors; // exact stored descriptor
    req.attributes = {"staff"};
    SearchOutcome out = sys.search_basic(req);
    // "staff" satisfies both alice's and bob's policies (bob holds no data)
    CHECK(out.permitted_owners == 2);
    REQUIRE_FALSE(out.ranked.empty());
    CHECK(out.ranked[0].image_id == images[3].image_id);
    CHECK(out.ranked[0].owner_id == "alice");
    // every query vector finds its own zero-distance copy among its k-NN
    CHECK(out.ranked[0].value >= int64_t(images[3].vectors.size()));

    // score semantics: total votes = #qvecs * k_nn when the DB is large enough
    int64_t total = 0;
    for (const auto& r : out.ranked) total += r.value;
    CHECK(total == int64_t(req.query_vectors.size() * cfg.k_nn));
}

TEST_CASE("search_basic equals the plaintext oracle across betas and owners") {
    for (uint32_t beta : {1u, 2u, 1000u}) {
        SystemConfig cfg = small_cfg();
        cfg.beta = beta;
        cfg.alpha = 2;
        System sys(cfg);
        sys.init();
        sys.register_user("alice", "(or \"student\" \"staff\")");
        sys.register_user("bob", "\"staff\"");
        sys.register_user("carol", "\"nobody\"");

        std::mt19937_64 mt(9 + beta);
        sys.upload_basic("alice", synth_images(mt, 8, 3, 6));
        auto bob_images = synth_images(mt, 6, 3, 6);
        for (auto& d : bob_images) d.image_id += "b";
        sys.upload_basic("bob", bob_images);

        std::uniform_real_distribution<double> qd(0.0, 200.0);
        for (int q = 0; q < 6; q++) {
            SearchRequest req;
            req.querier = "bob";
            req.query_vectors.assign(2, std::vector<float>(6));
            for (auto& v : req.query_vectors)
                for (auto& x : v) x = float(qd(mt));
            req.attributes = {"staff"};
            SearchOutcome enc = sys.search_basic(req);
            SearchOutcome plain = sys.oracle_search_basic(req);
            CHECK(enc.permitted_owners == 2);
            CHECK(same_outcome(enc, plain));
        }
        CHECK(sys.cs().pending_query_states() == 0);
    }
}

TEST_CASE("search_basic: denied attrs yield empty result and zero phi work") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"student\"");
    sys.register_user("bob", "\"staff\"");
    std::mt19937_64 mt(10);
    sys.upload_basic("alice", synth_images(mt, 4, 2, 4));

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = {{1, 2, 3, 4}};
    req.attributes = {"intruder"};
    SearchOutcome out = sys.search_basic(req);
    CHECK(out.permitted_owners == 0);
    CHECK(out.ranked.empty());
    CHECK(audit_assert(sys.audit(), pred_no_phi_for_query(sys.last_query_id())));

    SearchOutcome oracle = sys.oracle_search_basic(req);
    CHECK(same_outcome(out, oracle));
    CHECK(sys.cs().pending_query_states() == 0); // denied search leaves no state behind
}

TEST_CASE("upload_advanced: stored weights decrypt correctly, envelope is gated") {
    SystemConfig cfg = small_cfg(SystemConfig::Scheme::advanced);
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");

    std::mt19937_64 mt(11);
    auto images = synth_images(mt, 5, 4, 4);
    sys.upload_advanced("alice", images);

    // one EncVector per image, each decrypting to the tf-idf weights
    CHECK(sys.cs().db().size() == 5);
    const auto& client = sys.client("alice");
    for (const auto& [image_id, raws] : client.freq_raws) {
        VectorRef ref{"alice", image_id, 0};
        PlainVector dec =
            decrypt_vector(sys.cs().db().at(ref.locator()), sys.master_key_for_oracle(),
                           sys.params());
        REQUIRE(dec.dim() == raws.size());
        for (size_t j = 0; j < raws.size(); j++) CHECK(dec.coords[j].raw == raws[j]);
    }

    const Envelope& env = sys.cs().envelopes().at("alice");
    CHECK_NOTHROW(open_envelope(env, hash_attributes({"student"})));
    CHECK_THROWS_AS(open_envelope(env, hash_attributes({"intruder"})), AuthorizationError);

    SUBCASE("single-image upload builds a single-leader index") {
        SystemConfig tiny_cfg = cfg;
        tiny_cfg.vocab_size = 3; // one image has only 4 vectors
        System tiny(tiny_cfg);
        tiny.init();
        tiny.register_user("solo", "\"x\"");
        tiny.upload_advanced("solo", {images[0]});
        CHECK(tiny.cs().index().leader_count() == 1);
    }
}

TEST_CASE("search_advanced: exact stored image comes back at distance zero") {
    SystemConfig cfg = small_cfg(SystemConfig::Scheme::advanced);
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");

    std::mt19937_64 mt(12);
    auto images = synth_images(mt, 6, 5, 4);
    sys.upload_advanced("alice", images);

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = images[2].vectors;
    req.attributes = {"staff"};
    SearchOutcome out = sys.search_advanced(req);
    // both alice's and bob's policies pass; only alice holds data
    CHECK(out.permitted_owners == 2);
    REQUIRE_FALSE(out.ranked.empty());
    CHECK(out.ranked[0].image_id == images[2].image_id);
    CHECK(out.ranked[0].value == 0); // same counts, same stats: identical weights

    SearchOutcome oracle = sys.oracle_search_advanced(req);
    CHECK(same_outcome(out, oracle));
}

TEST_CASE("search_advanced equals the oracle; denied owners are excluded") {
    SystemConfig cfg = small_cfg(SystemConfig::Scheme::advanced);
    cfg.vocab_size = 5;
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");
    sys.register_user("carol", "\"staff\"");

    std::mt19937_64 mt(13);
    sys.upload_advanced("alice", synth_images(mt, 6, 4, 4));
    auto carol_images = synth_images(mt, 5, 4, 4);
    for (auto& d : carol_images) d.image_id += "c";
    sys.upload_advanced("carol", carol_images);

    std::uniform_real_distribution<double> qd(0.0, 200.0);
    for (int q = 0; q < 4; q++) {
        SearchRequest req;
        req.querier = "bob";
        req.query_vectors.assign(3, std::vector<float>(4));
        for (auto& v : req.query_vectors)
            for (auto& x : v) x = float(qd(mt));
        req.attributes = {"staff"};
        SearchOutcome enc = sys.search_advanced(req);
        SearchOutcome plain = sys.oracle_search_advanced(req);
        CHECK(enc.permitted_owners == 3);
        CHECK(same_outcome(enc, plain));
        CHECK(enc.ranked.size() >= cfg.k_nn); // level-2 sufficiency

        // with student-only attrs carol's envelope stays closed
        req.attributes = {"student"};
        SearchOutcome restricted = sys.search_advanced(req);
        CHECK(restricted.permitted_owners == 1);
        for (const auto& r : restricted.ranked) CHECK(r.owner_id == "alice");
        CHECK(same_outcome(restricted, sys.oracle_search_advanced(req)));
    }
}

TEST_CASE("search_advanced with the dot-product kernel matches the oracle") {
    SystemConfig cfg = small_cfg(SystemConfig::Scheme::advanced);
    cfg.kernel = Kernel::dot;
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "\"staff\"");
    sys.register_user("bob", "\"staff\"");

    std::mt19937_64 mt(19);
    auto images = synth_images(mt, 6, 5, 4);
    sys.upload_advanced("alice", images);

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = images[1].vectors;
    req.attributes = {"staff"};
    SearchOutcome enc = sys.search_advanced(req);
    SearchOutcome plain = sys.oracle_search_advanced(req);
    CHECK(same_outcome(enc, plain));
    REQUIRE_FALSE(enc.ranked.empty());
    // similarity kernel: larger is better, and the self-match leads
    CHECK(enc.ranked[0].image_id == images[1].image_id);
    for (size_t i = 1; i < enc.ranked.size(); i++)
        CHECK(enc.ranked[i - 1].value >= enc.ranked[i].value);
}

TEST_CASE("rebuild_index re-clusters in place; search results stay oracle-equal") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"staff\"");
    sys.register_user("bob", "\"staff\"");
    std::mt19937_64 mt(20);
    sys.upload_basic("alice", synth_images(mt, 5, 3, 4));
    auto more = synth_images(mt, 7, 3, 4);
    for (auto& d : more) d.image_id += "x";
    sys.upload_basic("alice", more); // incremental: leader count frozen at first build
    CHECK(sys.cs().index().leader_count() == default_cluster_count(15));

    sys.rebuild_index("alice"); // now C reflects all 36 vectors
    CHECK(sys.cs().index().leader_count() == default_cluster_count(36));

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = {{40, 40, 40, 40}};
    req.attributes = {"staff"};
    req.k_nn = 2;
    SearchOutcome enc = sys.search_basic(req);
    SearchOutcome plain = sys.oracle_search_basic(req);
    CHECK(same_outcome(enc, plain));
}

TEST_CASE("audit: information-flow predicates over a full trace") {
    System sys(small_cfg());
    CHECK(audit_assert(sys.audit(), pred_cs_never_decryptable(uint8_t(MsgKind::KeyShare))));

    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");
    sys.register_user("carol", "\"nobody\"");

    std::mt19937_64 mt(14);
    sys.upload_basic("alice", synth_images(mt, 6, 3, 4));
    auto bob_images = synth_images(mt, 4, 3, 4);
    for (auto& d : bob_images) d.image_id += "b";
    sys.upload_basic("bob", bob_images);

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = {{5, 5, 5, 5}, {100, 100, 100, 100}};
    req.attributes = {"staff"};
    for (int i = 0; i < 3; i++) (void)sys.search_basic(req);

    req.querier = "carol";
    req.attributes = {"nothing-matches"};
    SearchOutcome denied = sys.search_basic(req);
    CHECK(denied.permitted_owners == 0);
    QueryId denied_qid = sys.last_query_id();

    const uint8_t ks = uint8_t(MsgKind::KeyShare);
    CHECK(audit_assert(sys.audit(), pred_cs_never_decryptable(ks)));
    CHECK(audit_assert(sys.audit(), pred_ka_distance_only(ks)));
    CHECK(audit_assert(sys.audit(), pred_owners_silent_in_searches()));
    CHECK(audit_assert(sys.audit(), pred_no_phi_for_query(denied_qid)));

    SUBCASE("negative control: a misrouted message breaks the predicates") {
        // forged: CS relays a vector ciphertext under a key CS holds
        AuditRecord bad;
        bad.type = AuditRecord::Type::Message;
        bad.sender = "cs";
        bad.receiver = "ka";
        bad.msg_kind = uint8_t(MsgKind::Level1Batch);
        bad.content = ContentClass::VectorCiphertexts;
        bad.key_tag = KeyTag::of({tags::cs()});
        sys.audit().append_raw(bad);
        CHECK_FALSE(audit_assert(sys.audit(), pred_cs_never_decryptable(ks)));

        // forged: a data owner receives a message inside a search span
        AuditRecord owner_msg;
        owner_msg.type = AuditRecord::Type::Message;
        owner_msg.sender = "cs";
        owner_msg.receiver = "alice";
        owner_msg.qid = denied_qid;
        sys.audit().append_raw(owner_msg);
        CHECK_FALSE(audit_assert(sys.audit(), pred_owners_silent_in_searches()));
    }
}

TEST_CASE("concurrent searches from distinct queriers match serial results") {
    SystemConfig cfg = small_cfg();
    cfg.workers = 2;
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");
    sys.register_user("carol", "\"staff\"");

    std::mt19937_64 mt(15);
    sys.upload_basic("alice", synth_images(mt, 8, 3, 4));

    SearchRequest r1;
    r1.querier = "bob";
    r1.query_vectors = {{10, 10, 10, 10}, {150, 40, 90, 10}};
    r1.attributes = {"staff"};
    SearchRequest r2;
    r2.querier = "carol";
    r2.query_vectors = {{180, 180, 20, 20}};
    r2.attributes = {"staff"};

    SearchOutcome serial1 = sys.search_basic(r1);
    SearchOutcome serial2 = sys.search_basic(r2);

    SearchOutcome par1, par2;
    std::thread t1([&] { par1 = sys.search_basic(r1); });
    std::thread t2([&] { par2 = sys.search_basic(r2); });
    t1.join();
    t2.join();
    CHECK(same_outcome(par1, serial1));
    CHECK(same_outcome(par2, serial2));
}

TEST_CASE("blob store: policy-gated fetch") {
    System sys(small_cfg());
    sys.init();
    sys.register_user("alice", "\"student\"");
    sys.register_user("bob", "\"student\"");
    Bytes blob = {1, 2, 3, 4, 5};
    sys.put_blob("alice", "img100", blob);
    CHECK(sys.fetch_blob("bob", "alice", "img100", {"student"}) == blob);
    CHECK_THROWS(sys.fetch_blob("bob", "alice", "img100", {"intruder"}));
    CHECK_THROWS(sys.fetch_blob("bob", "alice", "missing", {"student"}));
}

TEST_CASE("persistence: save/load preserves search behavior") {
    namespace fs = std::filesystem;
    std::string dir = (fs::temp_directory_path() / "pic_test_state").string();
    fs::remove_all(dir);

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = {{50, 60, 70, 80}};
    req.attributes = {"staff"};

    SearchOutcome before;
    {
        System sys(small_cfg());
        sys.init();
        sys.register_user("alice", "(or \"student\" \"staff\")");
        sys.register_user("bob", "\"staff\"");
        std::mt19937_64 mt(16);
        sys.upload_basic("alice", synth_images(mt, 6, 3, 4));
        before = sys.search_basic(req);
        SystemStore::save(sys, dir);
    }
    auto sys2 = SystemStore::load(dir);
    SearchOutcome after = sys2->search_basic(req);
    CHECK(same_outcome(before, after));
    SearchOutcome oracle = sys2->oracle_search_basic(req);
    CHECK(same_outcome(before, oracle));

    // a further upload on the loaded system still works
    std::mt19937_64 mt2(17);
    auto more = synth_images(mt2, 2, 3, 4);
    for (auto& d : more) d.image_id += "x";
    sys2->upload_basic("alice", more);
    CHECK(sys2->cs().db().size() == 24);
    fs::remove_all(dir);
}

TEST_CASE("remote transport: search over PIC1 sockets equals in-process") {
    SystemConfig cfg = small_cfg();
    System sys(cfg);
    sys.init();
    sys.register_user("alice", "(or \"student\" \"staff\")");
    sys.register_user("bob", "\"staff\"");
    std::mt19937_64 mt(18);
    sys.upload_basic("alice", synth_images(mt, 5, 3, 4));

    SearchRequest req;
    req.querier = "bob";
    req.query_vectors = {{25, 25, 25, 25}};
    req.attributes = {"staff"};
    SearchOutcome local = sys.search_basic(req);

    // host CS then KA on ephemeral ports; rewire KA->CS and client->KA
    EntityServer cs_server(sys.cs(), 0);
    cs_server.start();
    static TcpChannel ka_to_cs("127.0.0.1", cs_server.port());
    sys.ka().set_cs_channel(&ka_to_cs);
    EntityServer ka_server(sys.ka(), 0);
    ka_server.start();
    sys.set_ka_channel(std::make_unique<TcpChannel>("127.0.0.1", ka_server.port(), &sys.audit()));

    SearchOutcome remote = sys.search_basic(req);
    CHECK(same_outcome(remote, local));

    ka_server.stop();
    cs_server.stop();
}
