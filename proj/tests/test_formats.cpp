#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pic/errors.hpp"
#include "pic/protocol.hpp"
#include "pic/store.hpp"
#include "pic/wire.hpp"

using namespace pic;

TEST_CASE("PIC1 frame: golden layout and round trip") {
    Frame f;
    f.kind = 7;
    for (size_t i = 0; i < f.query_id.size(); i++) f.query_id[i] = uint8_t(i);
    f.payload = {0xDE, 0xAD, 0xBE, 0xEF};

    Bytes b = encode_frame(f);
    REQUIRE(b.size() == 4 + 1 + 1 + 16 + 8 + 4);
    CHECK(b[0] == 'P');
    CHECK(b[1] == 'I');
    CHECK(b[2] == 'C');
    CHECK(b[3] == '1');
    CHECK(b[4] == 1); // version
    CHECK(b[5] == 7); // kind
    CHECK(b[6] == 0); // query id starts
    CHECK(b[21] == 15);
    // 8-byte LITTLE-endian payload length
    CHECK(b[22] == 4);
    for (int i = 23; i < 30; i++) CHECK(b[i] == 0);
    CHECK(b[30] == 0xDE);

    Frame back = decode_frame(b);
    CHECK(back.kind == 7);
    CHECK(back.query_id == f.query_id);
    CHECK(back.payload == f.payload);

    Bytes bad = b;
    bad[3] = '2';
    CHECK_THROWS_AS(decode_frame(bad), ParseError);
    Bytes short_len(b.begin(), b.begin() + 31);
    CHECK_THROWS_AS(decode_frame(short_len), ParseError);
}

TEST_CASE("message <-> frame: tags and content survive the wire") {
    Message m;
    m.sender = "alice";
    m.receiver = "ka";
    m.kind = MsgKind::BasicQuery;
    m.qid.fill(9);
    m.payload = {1, 2, 3};
    m.content = ContentClass::VectorCiphertexts;
    m.key_tag = KeyTag::of({tags::user("alice")});

    Message back = message_from_frame(message_to_frame(m));
    CHECK(back.sender == "alice");
    CHECK(back.receiver == "ka");
    CHECK(back.kind == MsgKind::BasicQuery);
    CHECK(back.qid == m.qid);
    CHECK(back.payload == m.payload);
    CHECK(back.content == ContentClass::VectorCiphertexts);
    CHECK(back.key_tag == m.key_tag);

    // master tag collapses to "k" and parses back to the canonical pair
    m.key_tag = KeyTag::master();
    back = message_from_frame(message_to_frame(m));
    CHECK(back.key_tag.is_master());

    m.key_tag = {};
    back = message_from_frame(message_to_frame(m));
    CHECK(back.key_tag.atoms.empty());
}

TEST_CASE("key tag algebra: append, triple rewrite, strip") {
    KeyTag t = KeyTag::of({tags::user("u")});
    t = t.appended(tags::user_mid("u"));
    CHECK(t.str() == "k_u(u)*k_u'(u)");
    t = t.appended(tags::user_last("u"));
    CHECK(t.is_master()); // k_u k_u' k_u'' == k == k_KA k_CS
    CHECK(t.str() == "k");

    KeyTag ka_only = t.stripped(tags::cs());
    CHECK(ka_only == KeyTag::of({tags::ka()}));
    CHECK_THROWS_AS(ka_only.stripped(tags::cs()), ProtocolError);

    CHECK(KeyTag::of({tags::ka()}).coverable_by({tags::ka()}));
    CHECK_FALSE(KeyTag::master().coverable_by({tags::cs()}));
    CHECK_FALSE(KeyTag{}.coverable_by({tags::ka()}));
}

TEST_CASE("config file: parse, serialize, errors") {
    SystemConfig cfg = parse_config_text(
        "lambda=64\nm_lvl=1\n# comment\nscheme=advanced\nk_nn = 3\nv=50\nkernel=dot\nseed=9\n");
    CHECK(cfg.lambda == 64);
    CHECK(cfg.m_lvl == 1);
    CHECK(cfg.scheme == SystemConfig::Scheme::advanced);
    CHECK(cfg.k_nn == 3);
    CHECK(cfg.vocab_size == 50);
    CHECK(cfg.kernel == Kernel::dot);
    CHECK(cfg.seed == 9);

    SystemConfig back = parse_config_text(config_to_text(cfg));
    CHECK(back.lambda == cfg.lambda);
    CHECK(back.kernel == cfg.kernel);
    CHECK(back.seed == cfg.seed);

    CHECK_THROWS_AS(parse_config_text("nonsense\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("unknown_key=1\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("lambda=abc\n"), ParseError);
    CHECK_THROWS_AS(parse_config_text("word_bits=70\nint_bits=80\n"), ConfigError);
}
