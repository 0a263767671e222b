#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cfs;

TEST_CASE("sha256 empty-string vector") {
    CHECK(sha256({}).hex() ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    // abc, the other standard vector
    Bytes abc = to_bytes("abc");
    CHECK(sha256(abc).hex() ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256(abc) == sha256(abc));
}

TEST_CASE("sign/verify round trip and tamper detection") {
    KeyPair kp = KeyPair::generate();
    Bytes msg = to_bytes("the capsule contents");
    auto sig = sign_payload(kp, msg);
    REQUIRE(sig.ok());
    CHECK(verify_payload(kp.public_key, msg, sig.value()));

    Bytes flipped = msg;
    flipped[3] ^= 0x01;
    CHECK(!verify_payload(kp.public_key, flipped, sig.value()));

    Signature bad = sig.value();
    bad.bytes[10] ^= 0x80;
    CHECK(!verify_payload(kp.public_key, msg, bad));
}

TEST_CASE("no cross-verification between independent keypairs") {
    std::mt19937_64 rng(11);
    int cross_accepts = 0;
    for (int i = 0; i < 100; i++) {
        KeyPair a = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
        KeyPair b = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
        Bytes msg = cfs::test::random_bytes(rng, 1 + rng() % 256);
        auto sig = sign_payload(a, msg);
        REQUIRE(sig.ok());
        if (verify_payload(b.public_key, msg, sig.value())) cross_accepts++;
    }
    CHECK(cross_accepts == 0);
}

TEST_CASE("signature soundness under single-byte mutation, 1000 trials") {
    std::mt19937_64 rng(12);
    int false_accepts = 0;
    for (int i = 0; i < 1000; i++) {
        KeyPair kp = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
        Bytes msg = cfs::test::random_bytes(rng, 1 + rng() % 512);
        auto sig = sign_payload(kp, msg);
        REQUIRE(sig.ok());
        Bytes mutated = msg;
        size_t pos = rng() % mutated.size();
        uint8_t delta = 1 + rng() % 255;
        mutated[pos] ^= delta;
        if (verify_payload(kp.public_key, mutated, sig.value())) false_accepts++;
    }
    CHECK(false_accepts == 0);
}

TEST_CASE("authenticated encryption round trip and tamper rejection") {
    cfs::test::TestCapsule cap;
    Bytes msg = to_bytes("sealed block bytes");
    Bytes ct = aead_encrypt(cap.wk.sym_key, msg, cap.wk.capsule_id.span());
    auto pt = aead_decrypt(cap.rk.sym_key, ct, cap.rk.capsule_id.span());
    REQUIRE(pt.has_value());
    CHECK(*pt == msg);

    for (size_t pos : {size_t{0}, ct.size() / 2, ct.size() - 1}) {
        Bytes bad = ct;
        bad[pos] ^= 0x01;
        CHECK(!aead_decrypt(cap.rk.sym_key, bad, cap.rk.capsule_id.span()).has_value());
    }
}

TEST_CASE("cross-capsule decryption fails pairwise over three capsules") {
    cfs::test::TestCapsule caps[3] = {cfs::test::TestCapsule{"a"}, cfs::test::TestCapsule{"b"},
                                      cfs::test::TestCapsule{"c"}};
    Bytes msg = to_bytes("bound to one capsule only");
    for (int i = 0; i < 3; i++) {
        Bytes ct = aead_encrypt(caps[i].wk.sym_key, msg, caps[i].wk.capsule_id.span());
        for (int j = 0; j < 3; j++) {
            auto pt = aead_decrypt(caps[j].rk.sym_key, ct, caps[j].rk.capsule_id.span());
            if (i == j)
                CHECK(pt.has_value());
            else
                CHECK(!pt.has_value());
        }
    }
}

TEST_CASE("key id is the digest of the canonically encoded public key") {
    KeyPair kp = KeyPair::generate();
    Encoder e;
    e.bytes(kp.public_key);
    CHECK(kp.key_id == sha256(e.view()));
}

TEST_CASE("key files round trip and reject foreign content") {
    cfs::test::TempDir dir;
    KeyPair kp = KeyPair::generate();
    REQUIRE(save_keypair(dir / "c.key", kp).ok());
    auto back = load_keypair(dir / "c.key");
    REQUIRE(back.ok());
    CHECK(back.value().public_key == kp.public_key);
    CHECK(back.value().private_key == kp.private_key);
    CHECK(back.value().key_id == kp.key_id);

    cfs::test::TestCapsule cap;
    REQUIRE(save_write_key(dir / "w.key", cap.wk).ok());
    REQUIRE(save_read_key(dir / "r.key", cap.rk).ok());
    auto wk = load_write_key(dir / "w.key");
    REQUIRE(wk.ok());
    CHECK(wk.value().sym_key == cap.wk.sym_key);
    CHECK(wk.value().signer.private_key == cap.wk.signer.private_key);
    auto rk = load_read_key(dir / "r.key");
    REQUIRE(rk.ok());
    CHECK(rk.value().verify_key == cap.rk.verify_key);
    CHECK(rk.value().capsule_id == cap.rk.capsule_id);

    // Kind mismatch and bad magic both refuse.
    CHECK(!load_read_key(dir / "w.key").ok());
    Bytes junk = to_bytes("XXXXnot a key file");
    REQUIRE(detail::write_file_atomic(dir / "junk.key", junk).ok());
    CHECK(!load_keypair(dir / "junk.key").ok());
}

TEST_CASE("deterministic keypairs from seed") {
    Bytes seed(32, 0x5c);
    KeyPair a = KeyPair::from_seed(seed);
    KeyPair b = KeyPair::from_seed(seed);
    CHECK(a.public_key == b.public_key);
    CHECK(a.private_key == b.private_key);
}
