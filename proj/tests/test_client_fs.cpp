#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <thread>

using namespace cfs;
using cfs::test::TestStack;

namespace {

std::unique_ptr<Client> mount_client(TestStack& ts, ClientSpec spec = {}) {
    auto c = ts->make_client(spec);
    REQUIRE(c.ok());
    return c.take();
}

// Waits until a predicate holds or a timeout elapses (subscription settling).
bool eventually(const std::function<bool()>& pred, int timeout_ms = 5000) {
    uint64_t deadline = mono_nanos() + uint64_t(timeout_ms) * 1000000ull;
    while (mono_nanos() < deadline) {
        if (pred()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    return pred();
}

} // namespace

TEST_CASE("fresh mount exposes an empty root") {
    TestStack ts;
    auto c = mount_client(ts);
    auto root = c->lookup("/");
    REQUIRE(root.ok());
    CHECK(root.value() == kRootInode);
    auto entries = c->readdir(kRootInode);
    REQUIRE(entries.ok());
    CHECK(entries.value().empty());
    auto attr = c->getattr(kRootInode);
    REQUIRE(attr.ok());
    CHECK(attr.value().kind == NodeKind::directory);
}

TEST_CASE("create, readdir, write and read back") {
    TestStack ts;
    auto c = mount_client(ts);

    auto dir = c->create(kRootInode, "d", NodeKind::directory);
    REQUIRE(dir.ok());
    auto file = c->create(dir.value(), "f", NodeKind::file);
    REQUIRE(file.ok());

    auto listed = c->readdir(dir.value());
    REQUIRE(listed.ok());
    REQUIRE(listed.value().size() == 1);
    CHECK(listed.value()[0].name == "f");
    CHECK(listed.value()[0].inode == file.value());
    CHECK(listed.value()[0].kind == NodeKind::file);

    auto wrote = c->write(file.value(), 0, to_bytes("hello"));
    REQUIRE(wrote.ok());
    CHECK(wrote.value() == 5);
    auto got = c->read(file.value(), 0, 5);
    REQUIRE(got.ok());
    CHECK(got.value() == to_bytes("hello"));

    SECTION("path lookup resolves nested names") {
        auto ino = c->lookup("/d/f");
        REQUIRE(ino.ok());
        CHECK(ino.value() == file.value());
        CHECK(c->lookup("/d/missing").code() == Errc::not_found);
        CHECK(c->lookup("/d/f/deeper").code() == Errc::not_a_directory);
    }
    SECTION("reads past EOF are empty and zero-length writes are no-ops") {
        auto beyond = c->read(file.value(), 100, 10);
        REQUIRE(beyond.ok());
        CHECK(beyond.value().empty());
        auto zero = c->write(file.value(), 0, {});
        REQUIRE(zero.ok());
        CHECK(zero.value() == 0);
    }
    SECTION("flush commits and a fresh client sees the same content") {
        REQUIRE(c->flush().clean);
        auto c2 = mount_client(ts, {.instance = "second"});
        auto ino = c2->lookup("/d/f");
        REQUIRE(ino.ok());
        auto got2 = c2->read(ino.value(), 0, 5);
        REQUIRE(got2.ok());
        CHECK(got2.value() == to_bytes("hello"));
    }
}

TEST_CASE("cross-block reads and writes match a reference model") {
    TestStack ts;
    auto c = mount_client(ts);
    auto file = c->create(kRootInode, "f", NodeKind::file).take();

    // The spec's worked example: offset 500, length 24 spans two 512B blocks.
    Bytes first(1024);
    for (size_t i = 0; i < first.size(); i++) first[i] = uint8_t(i);
    REQUIRE(c->write(file, 0, first).ok());
    auto got = c->read(file, 500, 24);
    REQUIRE(got.ok());
    REQUIRE(got.value().size() == 24);
    for (int i = 0; i < 24; i++) CHECK(got.value()[i] == uint8_t(500 + i));

    // Randomized lockstep against an in-memory byte model.
    std::mt19937_64 rng(2024);
    Bytes model = first;
    for (int op = 0; op < 200; op++) {
        if (rng() % 2 == 0) {
            uint64_t off = rng() % 2100;
            size_t len = 1 + rng() % 900;
            Bytes data = cfs::test::random_bytes(rng, len);
            REQUIRE(c->write(file, off, data).ok());
            if (model.size() < off + len) model.resize(off + len, 0);
            std::copy(data.begin(), data.end(), model.begin() + off);
        } else {
            uint64_t off = rng() % 2600;
            size_t len = rng() % 900;
            auto r = c->read(file, off, len);
            REQUIRE(r.ok());
            Bytes expect;
            if (off < model.size()) {
                size_t end = std::min(model.size(), off + len);
                expect.assign(model.begin() + off, model.begin() + end);
            }
            REQUIRE(r.value() == expect);
        }
        if (op % 37 == 0) REQUIRE(!c->flush().transient_failure);
    }
    REQUIRE(c->flush().clean);
    auto final_read = c->read(file, 0, model.size() + 100);
    REQUIRE(final_read.ok());
    CHECK(final_read.value() == model);
}

TEST_CASE("hole-punching writes zero-fill the gap") {
    TestStack ts;
    auto c = mount_client(ts);
    auto file = c->create(kRootInode, "sparse", NodeKind::file).take();
    REQUIRE(c->write(file, 0, to_bytes("head")).ok());
    REQUIRE(c->write(file, 1500, to_bytes("tail")).ok());
    auto got = c->read(file, 0, 2000);
    REQUIRE(got.ok());
    REQUIRE(got.value().size() == 1504);
    CHECK(Bytes(got.value().begin(), got.value().begin() + 4) == to_bytes("head"));
    for (size_t i = 4; i < 1500; i++) REQUIRE(got.value()[i] == 0);
    CHECK(Bytes(got.value().begin() + 1500, got.value().end()) == to_bytes("tail"));
    REQUIRE(c->flush().clean);
}

TEST_CASE("unlink tombstones and names can be reused") {
    TestStack ts;
    auto c = mount_client(ts);
    auto file = c->create(kRootInode, "f", NodeKind::file).take();
    REQUIRE(c->write(file, 0, to_bytes("v1")).ok());
    REQUIRE(c->flush().clean);

    REQUIRE(c->unlink(kRootInode, "f").ok());
    CHECK(c->lookup("/f").code() == Errc::not_found);
    CHECK(c->getattr(file).code() == Errc::not_found);
    REQUIRE(c->flush().clean);

    auto again = c->create(kRootInode, "f", NodeKind::file);
    REQUIRE(again.ok());
    CHECK(again.value() != file);
    REQUIRE(c->flush().clean);

    SECTION("a fresh mount agrees the old inode is gone") {
        auto c2 = mount_client(ts, {.instance = "fresh"});
        CHECK(c2->lookup("/f").value() == again.value());
        CHECK(c2->getattr(file).code() == Errc::not_found);
    }
    SECTION("non-empty directories refuse unlink") {
        auto d = c->create(kRootInode, "dir", NodeKind::directory).take();
        REQUIRE(c->create(d, "child", NodeKind::file).ok());
        CHECK(c->unlink(kRootInode, "dir").code() == Errc::conflict);
    }
}

TEST_CASE("ownership is self-authored uid or nobody") {
    TestStack ts;
    auto a = mount_client(ts);
    KeyPair b_key = ts.add_client("B", 2222);

    // Let B write under root, then have B create its own file.
    auto root_acl = a->acl_of(kRootInode).take();
    root_acl.push_back(AclEntry{b_key.public_key, 2222});
    REQUIRE(a->set_acl(kRootInode, root_acl).ok());
    REQUIRE(a->flush().clean);

    auto b = mount_client(ts, {.name = "B"});
    auto theirs = b->create(kRootInode, "theirs", NodeKind::file);
    REQUIRE(theirs.ok());
    REQUIRE(b->write(theirs.value(), 0, to_bytes("owned by B")).ok());
    REQUIRE(b->flush().clean);

    auto mine = a->create(kRootInode, "mine", NodeKind::file);
    REQUIRE(mine.ok());
    REQUIRE(a->write(mine.value(), 0, to_bytes("owned by A")).ok());
    REQUIRE(a->flush().clean);

    REQUIRE(eventually([&] { return a->lookup("/theirs").ok(); }));

    // A sees its own file under its uid and B's file as nobody.
    CHECK(a->getattr(mine.value()).value().owner_uid == 1000);
    auto theirs_at_a = a->lookup("/theirs").take();
    CHECK(a->getattr(theirs_at_a).value().owner_uid == a->options().nobody_uid);

    // B sees the reverse.
    REQUIRE(eventually([&] { return b->lookup("/mine").ok(); }));
    CHECK(b->getattr(theirs.value()).value().owner_uid == 2222);
    CHECK(b->getattr(b->lookup("/mine").take()).value().owner_uid ==
          b->options().nobody_uid);

    SECTION("uid 0 passes through for self-authored blocks") {
        // ACL entries are (key, uid) pairs, so uid 0 needs its own entry.
        auto acl = a->acl_of(kRootInode).take();
        acl.push_back(AclEntry{a->key().public_key, 0});
        REQUIRE(a->set_acl(kRootInode, acl).ok());
        REQUIRE(a->flush().clean);
        auto zero = a->create(kRootInode, "rooty", NodeKind::file, 0u);
        REQUIRE(zero.ok());
        CHECK(a->getattr(zero.value()).value().owner_uid == 0);
    }
}

TEST_CASE("rename moves nodes between directories") {
    TestStack ts;
    auto c = mount_client(ts);
    auto d1 = c->create(kRootInode, "d1", NodeKind::directory).take();
    auto d2 = c->create(kRootInode, "d2", NodeKind::directory).take();
    auto f = c->create(d1, "f", NodeKind::file).take();
    REQUIRE(c->write(f, 0, to_bytes("content")).ok());
    REQUIRE(c->flush().clean);

    REQUIRE(c->rename(f, d2, "g").ok());
    CHECK(c->lookup("/d1/f").code() == Errc::not_found);
    auto moved = c->lookup("/d2/g");
    REQUIRE(moved.ok());
    CHECK(moved.value() == f);
    REQUIRE(c->flush().clean);
    CHECK(c->read(f, 0, 7).value() == to_bytes("content"));

    SECTION("rename refuses an occupied name") {
        auto other = c->create(d2, "h", NodeKind::file).take();
        CHECK(c->rename(other, d2, "g").code() == Errc::exists);
    }
}

TEST_CASE("ACLs inherit from parents through nested directories") {
    TestStack ts;
    auto c = mount_client(ts);
    auto root_acl = c->acl_of(kRootInode).take();

    uint64_t cur = kRootInode;
    for (const char* name : {"a", "b", "c"}) {
        cur = c->create(cur, name, NodeKind::directory).take();
    }
    REQUIRE(c->flush().clean);
    // Walk the tree; every inode carries root's ACL, byte for byte.
    for (const char* path : {"/a", "/a/b", "/a/b/c"}) {
        auto ino = c->lookup(path).take();
        CHECK(c->acl_of(ino).take() == root_acl);
    }
}

TEST_CASE("acl changes gate writes end to end") {
    TestStack ts;
    auto a = mount_client(ts);
    KeyPair b_key = ts.add_client("B", 3000);

    auto f = a->create(kRootInode, "shared", NodeKind::file).take();
    REQUIRE(a->write(f, 0, to_bytes("original")).ok());
    REQUIRE(a->flush().clean);

    // B cannot write before being added.
    auto b = mount_client(ts, {.name = "B", .advisory_checks = false});
    REQUIRE(eventually([&] { return b->lookup("/shared").ok(); }));
    REQUIRE(b->write(f, 0, to_bytes("intruder")).ok()); // enqueues locally
    auto fr = b->flush();
    REQUIRE(fr.parked.contains(f));
    CHECK(fr.parked.at(f) == PutStatus::forbidden);
    b->drop_parked(f);

    // After a chown adding B, the write goes through.
    auto acl = a->acl_of(f).take();
    acl.push_back(AclEntry{b_key.public_key, 3000});
    REQUIRE(a->set_acl(f, acl).ok());
    REQUIRE(a->flush().clean);
    REQUIRE(eventually([&] {
        auto got = b->acl_of(f);
        return got.ok() && acl_permits(got.value(), b->identity(3000));
    }));
    REQUIRE(b->write(f, 0, to_bytes("welcome!")).ok());
    REQUIRE(b->flush().clean);
    REQUIRE(eventually([&] {
        auto r = a->read(f, 0, 8);
        return r.ok() && r.value() == to_bytes("welcome!");
    }));

    SECTION("removing yourself locks you out at the middleware") {
        Acl self_out;
        for (const auto& e : a->acl_of(f).take())
            if (e.public_key != a->key().public_key) self_out.push_back(e);
        REQUIRE(a->set_acl(f, self_out).ok());
        REQUIRE(a->flush().clean);
        REQUIRE(a->write(f, 0, to_bytes("too late"), 1000u).code() ==
                Errc::permission_denied);
        // And bypassing the advisory check still dies at the middleware.
        auto a2 = mount_client(ts, {.instance = "a2", .advisory_checks = false});
        REQUIRE(a2->write(f, 0, to_bytes("still no")).ok());
        auto fr2 = a2->flush();
        REQUIRE(fr2.parked.contains(f));
        CHECK(fr2.parked.at(f) == PutStatus::forbidden);
    }
}

TEST_CASE("snapshot mounts reproduce exact prefixes") {
    TestStack ts;
    std::vector<uint64_t> stamps;
    std::vector<Bytes> contents;
    uint64_t file;
    {
        auto c = mount_client(ts);
        file = c->create(kRootInode, "f", NodeKind::file).take();
        for (int v = 0; v < 3; v++) {
            Bytes content = to_bytes("version " + std::to_string(v));
            REQUIRE(c->write(file, 0, content).ok());
            REQUIRE(c->flush().clean);
            contents.push_back(content);
            stamps.push_back(c->getattr(file).value().mtime_us);
        }
    }
    for (int v = 0; v < 3; v++) {
        auto snap = mount_client(ts, {.instance = "snap" + std::to_string(v),
                                      .snapshot_ts = stamps[v]});
        auto ino = snap->lookup("/f");
        REQUIRE(ino.ok());
        auto got = snap->read(ino.value(), 0, 64);
        REQUIRE(got.ok());
        CHECK(got.value() == contents[v]);
        CHECK(snap->read_only());
        CHECK(snap->write(ino.value(), 0, to_bytes("nope")).code() == Errc::read_only);
        CHECK(snap->create(kRootInode, "x", NodeKind::file).code() == Errc::read_only);
        CHECK(snap->unlink(kRootInode, "f").code() == Errc::read_only);
    }
    // ts=0: only the genesis root exists.
    auto zero = mount_client(ts, {.instance = "snap-zero", .snapshot_ts = uint64_t{0}});
    CHECK(zero->lookup("/").ok());
    CHECK(zero->readdir(kRootInode).value().empty());
    CHECK(zero->lookup("/f").code() == Errc::not_found);
}

TEST_CASE("unverifiable blocks are excluded and the mount survives") {
    TestStack ts;
    uint64_t good_file, bad_file;
    {
        auto c = mount_client(ts);
        good_file = c->create(kRootInode, "good", NodeKind::file).take();
        REQUIRE(c->write(good_file, 0, to_bytes("good content")).ok());
        REQUIRE(c->flush().clean);
        bad_file = c->create(kRootInode, "bad", NodeKind::file).take();
        REQUIRE(c->write(bad_file, 0, to_bytes("bad content")).ok());
        REQUIRE(c->flush().clean);
    }
    // The server substitutes bytes for every version of the bad file's inode.
    auto victims = std::make_shared<std::unordered_set<Digest, DigestHash>>();
    for (uint64_t seq = 0; seq < ts->inode_store()->length(); seq++) {
        auto rec = ts->inode_store()->record(seq);
        REQUIRE(rec.ok());
        auto v = unwrap_outer_block(ts->inode_store()->read_key(), rec.value().encrypted,
                                    true);
        REQUIRE(v.ok());
        if (v.value().outer.inner.body_kind == BodyKind::inode &&
            v.value().outer.inner.inode.inode_number == bad_file)
            victims->insert(v.value().digest);
    }
    REQUIRE(!victims->empty());
    ts->inode_store()->set_get_tamper([victims](const Digest& d, Bytes& bytes) {
        if (victims->contains(d)) bytes[bytes.size() / 2] ^= 1;
    });
    auto c = mount_client(ts, {.instance = "tainted"});
    CHECK(c->rejected_block_count() >= victims->size());
    auto good = c->lookup("/good");
    REQUIRE(good.ok());
    CHECK(c->read(good.value(), 0, 12).value() == to_bytes("good content"));
    CHECK(c->lookup("/bad").code() == Errc::not_found); // every version was poisoned
    ts->inode_store()->set_get_tamper(nullptr);
}

TEST_CASE("100 concurrent creates yield distinct resolvable inodes") {
    TestStack ts;
    auto c = mount_client(ts);
    std::vector<std::thread> threads;
    std::array<std::vector<uint64_t>, 4> results;
    for (int t = 0; t < 4; t++) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 25; i++) {
                auto ino = c->create(kRootInode,
                                     "t" + std::to_string(t) + "-" + std::to_string(i),
                                     NodeKind::file);
                REQUIRE(ino.ok());
                results[t].push_back(ino.value());
            }
        });
    }
    for (auto& t : threads) t.join();
    REQUIRE(c->flush().clean);

    std::set<uint64_t> all;
    for (const auto& r : results) all.insert(r.begin(), r.end());
    CHECK(all.size() == 100);
    auto listed = c->readdir(kRootInode);
    REQUIRE(listed.ok());
    CHECK(listed.value().size() == 100);
    for (uint64_t ino : all) CHECK(c->getattr(ino).ok());
}

TEST_CASE("writes are readable before any flush") {
    TestStack ts;
    auto c = mount_client(ts, {.start_flush_worker = false});
    auto f = c->create(kRootInode, "f", NodeKind::file).take();
    REQUIRE(c->write(f, 0, to_bytes("unflushed")).ok());
    CHECK(ts->data_store()->length() == 0); // nothing has reached the server
    auto got = c->read(f, 0, 9);
    REQUIRE(got.ok());
    CHECK(got.value() == to_bytes("unflushed"));
    CHECK(c->lookup("/f").value() == f);
    REQUIRE(c->flush().clean);
    CHECK(ts->data_store()->length() == 1);
}
