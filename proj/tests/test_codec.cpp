#include "support.hpp"

#include "cfs/corpus.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cfs;

namespace {

// Test-local byte assembly, written against docs/encoding.md independently
// of the Encoder. Little-endian fixed-width integers, u32 length prefixes.
struct RawWriter {
    Bytes out;

    void u8(uint8_t v) { out.push_back(v); }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; i++) out.push_back(uint8_t(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; i++) out.push_back(uint8_t(v >> (8 * i)));
    }
    void raw(ByteSpan b) { out.insert(out.end(), b.begin(), b.end()); }
    void lp(ByteSpan b) {
        u32(uint32_t(b.size()));
        raw(b);
    }
    void str(std::string_view s) {
        u32(uint32_t(s.size()));
        out.insert(out.end(), s.begin(), s.end());
    }
};

InodeBlock sample_inode(std::mt19937_64& rng) {
    KeyPair owner = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
    InodeBlock ib;
    ib.inode_number = rng();
    ib.parent_inode = rng();
    ib.name = "file-" + std::to_string(rng() % 1000);
    ib.size = 600;
    ib.kind = NodeKind::file;
    ib.data_hashes = {cfs::test::random_digest(rng), cfs::test::random_digest(rng)};
    ib.acl = {AclEntry{owner.public_key, 1000}};
    ib.updated_by = Identity{owner.public_key, 1000};
    ib.version_of = cfs::test::random_digest(rng);
    return ib;
}

} // namespace

TEST_CASE("encoding is deterministic") {
    std::mt19937_64 rng(1);
    InodeBlock ib = sample_inode(rng);
    Encoder a, b;
    ib.encode(a);
    ib.encode(b);
    CHECK(a.view() == b.view());
}

TEST_CASE("changing one field changes the bytes") {
    std::mt19937_64 rng(2);
    KeyPair kp = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
    CfsBlock inner = cfs::test::make_data_cfs(kp, 7, to_bytes("payload"));

    CapsuleWriteKey wk;
    wk.signer = kp;
    wk.sym_key.assign(kSymKeyBytes, 3);
    wk.capsule_id = cfs::test::random_digest(rng);
    auto w1 = wrap_outer_block(wk, kGenesisHash, 100, inner, true);
    auto w2 = wrap_outer_block(wk, kGenesisHash, 101, inner, true);
    REQUIRE(w1.ok());
    REQUIRE(w2.ok());
    CHECK(w1.value().plaintext != w2.value().plaintext);
}

TEST_CASE("inode block layout matches the hand-assembled grammar") {
    // Expected bytes computed field-by-field first; the encoder must
    // reproduce them exactly.
    KeyPair owner = KeyPair::from_seed(Bytes(32, 0x11));
    Digest h1 = Digest::from_raw(Bytes(32, 0xaa));
    Digest h2 = Digest::from_raw(Bytes(32, 0xbb));
    Digest prior = Digest::from_raw(Bytes(32, 0xcc));

    InodeBlock ib;
    ib.inode_number = 0x0102030405060708ull;
    ib.parent_inode = 1;
    ib.name = "notes.txt";
    ib.size = 700;
    ib.kind = NodeKind::file;
    ib.deleted = false;
    ib.data_hashes = {h1, h2};
    ib.acl = {AclEntry{owner.public_key, 1000}};
    ib.updated_by = Identity{owner.public_key, 1000};
    ib.version_of = prior;

    RawWriter w;
    w.u64(0x0102030405060708ull);  // inode number
    w.u64(1);                      // parent inode
    w.str("notes.txt");            // name
    w.u64(700);                    // size
    w.u8(0);                       // kind: file
    w.u8(0);                       // deleted flag
    w.u32(2);                      // data hash count
    w.raw(h1.span());
    w.raw(h2.span());
    w.u32(1);                      // acl entries
    w.lp(owner.public_key);        //   public key
    w.u32(1000);                   //   uid
    w.lp(owner.public_key);        // updated_by key
    w.u32(1000);                   // updated_by uid
    w.u8(1);                       // version_of present
    w.raw(prior.span());

    Encoder e;
    ib.encode(e);
    CHECK(e.view() == w.out);
}

TEST_CASE("decode of encode is identity over randomized blocks") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 50; i++) {
        InodeBlock ib = sample_inode(rng);
        Encoder e;
        ib.encode(e);
        Decoder d(e.view());
        InodeBlock back = InodeBlock::decode(d);
        REQUIRE(d.at_end());
        CHECK(back == ib);
    }
    auto corpus = generate_corpus(7, 100);
    for (const auto& item : corpus) {
        auto block = CfsBlock::decode_canonical(item.canonical);
        REQUIRE(block.has_value());
        CHECK(block->canonical_bytes() == item.canonical);
    }
}

TEST_CASE("outer block round-trips through its canonical form") {
    std::mt19937_64 rng(3);
    cfs::test::TestCapsule cap;
    CfsBlock inner = cfs::test::make_data_cfs(cap.wk.signer, 42, to_bytes("xyz"));
    auto w = wrap_outer_block(cap.wk, cfs::test::random_digest(rng), 55, inner, true);
    REQUIRE(w.ok());
    auto back = OuterBlock::decode_canonical(w.value().plaintext);
    REQUIRE(back.has_value());
    CHECK(back->prev_hash == w.value().outer.prev_hash);
    CHECK(back->timestamp == 55);
    CHECK(back->inner == w.value().outer.inner);
    CHECK(back->digest() == w.value().outer.digest());
}

TEST_CASE("ACL encoding is independent of insertion order") {
    std::mt19937_64 rng(4);
    KeyPair k1 = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
    KeyPair k2 = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));
    KeyPair k3 = KeyPair::from_seed(cfs::test::random_bytes(rng, 32));

    Acl a = {AclEntry{k1.public_key, 1}, AclEntry{k2.public_key, 2},
             AclEntry{k3.public_key, 3}};
    Acl b = {AclEntry{k3.public_key, 3}, AclEntry{k1.public_key, 1},
             AclEntry{k2.public_key, 2}};
    canonicalize_acl(a);
    canonicalize_acl(b);
    Encoder ea, eb;
    encode_acl(ea, a);
    encode_acl(eb, b);
    CHECK(ea.view() == eb.view());
}

TEST_CASE("decoder rejects truncated and trailing input") {
    std::mt19937_64 rng(5);
    InodeBlock ib = sample_inode(rng);
    Encoder e;
    ib.encode(e);

    Bytes truncated(e.view().begin(), e.view().end() - 5);
    Decoder d1(truncated);
    InodeBlock::decode(d1);
    CHECK(!d1.at_end());

    Bytes padded = e.view();
    padded.push_back(0);
    Decoder d2(padded);
    InodeBlock::decode(d2);
    CHECK(d2.valid());
    CHECK(!d2.at_end());
}
