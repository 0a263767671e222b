#include "support.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace cfs;
using cfs::test::TempDir;

namespace {

struct JournalFixture {
    TempDir dir;
    KeyPair key = KeyPair::generate();

    Journal::NewEntry data_entry(uint64_t inode, uint64_t idx, const std::string& content) {
        return Journal::NewEntry{inode, idx, OpKind::data,
                                 cfs::test::make_data_cfs(key, 1, to_bytes(content))};
    }

    Journal::NewEntry inode_entry(uint64_t inode, const std::string& name,
                                  std::vector<Digest> hashes, OpKind op = OpKind::write) {
        InodeBlock ib = cfs::test::make_file_inode(inode, 1, name, key, 1);
        ib.data_hashes = std::move(hashes);
        ib.size = ib.data_hashes.empty() ? 0 : (ib.data_hashes.size() - 1) * 512 + 1;
        auto block = build_cfs_block(std::move(ib), Identity{key.public_key, 1}, key);
        return Journal::NewEntry{inode, kInodeEntry, op, block.take()};
    }
};

} // namespace

TEST_CASE_METHOD(JournalFixture, "entries survive reopen") {
    {
        Journal j(dir.path);
        auto seqs = j.enqueue_batch({data_entry(5, 0, "hello")});
        REQUIRE(seqs.ok());
        CHECK(j.pending_count() == 1);
    }
    Journal j(dir.path);
    CHECK(j.pending_count() == 1);
    auto entries = j.pending_data_entries(5);
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].body.data.payload == to_bytes("hello"));
    CHECK(entries[0].placeholder == entries[0].body.inner_digest());
}

TEST_CASE_METHOD(JournalFixture, "batch order is preserved and sequences ascend") {
    Journal j(dir.path);
    auto seqs = j.enqueue_batch(
        {data_entry(5, 0, "a"), data_entry(5, 1, "b"), data_entry(5, 2, "c")});
    REQUIRE(seqs.ok());
    REQUIRE(seqs.value().size() == 3);
    CHECK(seqs.value()[0] < seqs.value()[1]);
    CHECK(seqs.value()[1] < seqs.value()[2]);
    auto entries = j.pending_data_entries(5);
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].body.data.payload == to_bytes("a"));
    CHECK(entries[2].body.data.payload == to_bytes("c"));
}

TEST_CASE_METHOD(JournalFixture, "duplicate sequences are rejected") {
    Journal j(dir.path);
    uint64_t seq = j.next_sequence();
    REQUIRE(j.enqueue_with_sequence(seq, data_entry(1, 0, "x")).ok());
    CHECK(!j.enqueue_with_sequence(seq, data_entry(1, 1, "y")).ok());
    CHECK(j.enqueue_with_sequence(seq + 7, data_entry(1, 1, "y")).ok());
    CHECK(j.pending_count() == 2);
}

TEST_CASE_METHOD(JournalFixture, "coalescing keeps only the newest entry per block") {
    Journal j(dir.path);
    // Five rewrites of the same 512-byte region: five data entries and five
    // inode entries, each inode entry referencing its own data placeholder.
    std::vector<Digest> placeholders;
    for (int i = 0; i < 5; i++) {
        auto de = data_entry(9, 0, "content-" + std::to_string(i));
        Digest ph = de.body.inner_digest();
        placeholders.push_back(ph);
        auto ie = inode_entry(9, "f", {ph});
        REQUIRE(j.enqueue_batch({std::move(de)}).ok());
        REQUIRE(j.enqueue_batch({std::move(ie)}).ok());
    }
    CHECK(j.pending_count() == 10);
    size_t dropped = j.coalesce();
    CHECK(dropped == 8);
    CHECK(j.pending_count() == 2);

    auto survivors = j.pending_data_entries(9);
    REQUIRE(survivors.size() == 1);
    CHECK(survivors[0].body.data.payload == to_bytes("content-4"));
    auto ie = j.latest_inode_entry(9);
    REQUIRE(ie.has_value());
    CHECK(ie->body.inode.data_hashes == std::vector<Digest>{placeholders[4]});
}

TEST_CASE_METHOD(JournalFixture, "distinct blocks do not coalesce") {
    Journal j(dir.path);
    REQUIRE(j.enqueue_batch({data_entry(9, 0, "a"), data_entry(9, 1, "b"),
                             data_entry(10, 0, "c")})
                .ok());
    CHECK(j.coalesce() == 0);
    CHECK(j.pending_count() == 3);
}

TEST_CASE_METHOD(JournalFixture, "interleaved rewrites keep the last contents") {
    Journal j(dir.path);
    REQUIRE(j.enqueue_batch({data_entry(9, 0, "first-A")}).ok());
    REQUIRE(j.enqueue_batch({data_entry(9, 1, "B")}).ok());
    REQUIRE(j.enqueue_batch({data_entry(9, 0, "final-A")}).ok());
    j.coalesce();
    auto entries = j.pending_data_entries(9);
    REQUIRE(entries.size() == 2);
    // Reference outcome: the block-0 survivor carries the last write.
    for (const auto& e : entries) {
        if (e.block_index == 0) CHECK(e.body.data.payload == to_bytes("final-A"));
        if (e.block_index == 1) CHECK(e.body.data.payload == to_bytes("B"));
    }
}

TEST_CASE_METHOD(JournalFixture, "a stale placeholder in the inode entry is renamed") {
    Journal j(dir.path);
    auto d1 = data_entry(9, 0, "old");
    Digest old_ph = d1.body.inner_digest();
    REQUIRE(j.enqueue_batch({std::move(d1)}).ok());
    // Inode entry still naming the old placeholder, then a newer data entry.
    REQUIRE(j.enqueue_batch({inode_entry(9, "f", {old_ph})}).ok());
    auto d2 = data_entry(9, 0, "new");
    Digest new_ph = d2.body.inner_digest();
    REQUIRE(j.enqueue_batch({std::move(d2)}).ok());

    j.coalesce();
    auto ie = j.latest_inode_entry(9);
    REQUIRE(ie.has_value());
    CHECK(ie->body.inode.data_hashes == std::vector<Digest>{new_ph});
    // The superseded payload stays findable until purge.
    CHECK(j.find_payload(old_ph).has_value());
    CHECK(j.find_payload(new_ph).has_value());
}

TEST_CASE_METHOD(JournalFixture, "commit, purge bounds, and lookup by final digest") {
    Journal j(dir.path);
    auto d = data_entry(9, 0, "payload");
    Digest ph = d.body.inner_digest();
    auto seqs = j.enqueue_batch({std::move(d), inode_entry(9, "f", {ph})});
    REQUIRE(seqs.ok());
    uint64_t data_seq = seqs.value()[0];
    uint64_t inode_seq = seqs.value()[1];

    Digest final_digest = sha256(to_bytes("fake-outer"));
    j.mark_committed(data_seq, final_digest);
    CHECK(j.find_payload(final_digest).has_value());
    CHECK(j.find_payload(ph).has_value());
    auto renames = j.committed_renames(9);
    REQUIRE(renames.size() == 1);
    CHECK(renames[ph] == final_digest);

    // A later batch must survive a purge bounded at the inode entry.
    auto seqs2 = j.enqueue_batch({data_entry(9, 1, "later")});
    REQUIRE(seqs2.ok());
    j.mark_committed(inode_seq, sha256(to_bytes("inode-outer")));
    j.purge(9, inode_seq);
    CHECK(!j.find_payload(ph).has_value());
    REQUIRE(j.pending_data_entries(9).size() == 1);
    CHECK(j.pending_data_entries(9)[0].body.data.payload == to_bytes("later"));
}

TEST_CASE_METHOD(JournalFixture, "recovery replays states and purges") {
    uint64_t committed_seq, parked_seq;
    Digest final_digest = sha256(to_bytes("f"));
    {
        Journal j(dir.path);
        auto seqs = j.enqueue_batch({data_entry(3, 0, "a"), data_entry(3, 1, "b"),
                                     data_entry(4, 0, "c"), inode_entry(4, "g", {})});
        REQUIRE(seqs.ok());
        committed_seq = seqs.value()[0];
        parked_seq = seqs.value()[2];
        j.mark_committed(committed_seq, final_digest);
        j.park(parked_seq);
        j.purge(99, 1000); // no-op purge of another inode
    }
    Journal j(dir.path);
    auto live = j.live_entries();
    REQUIRE(live.size() == 4);
    CHECK(live[0].state == EntryState::committed);
    CHECK(live[0].final_digest == final_digest);
    CHECK(live[2].state == EntryState::parked);
    CHECK(j.parked_entries_for(3).empty());
    CHECK(j.parked_entries_for(4).size() == 1);
}

TEST_CASE_METHOD(JournalFixture, "rewrite_body persists across reopen") {
    uint64_t seq;
    Digest new_ph;
    {
        Journal j(dir.path);
        auto seqs = j.enqueue_batch({inode_entry(7, "before", {})});
        REQUIRE(seqs.ok());
        seq = seqs.value()[0];
        auto rebuilt = inode_entry(7, "after", {});
        new_ph = rebuilt.body.inner_digest();
        j.rewrite_body(seq, rebuilt.body);
    }
    Journal j(dir.path);
    auto ie = j.latest_inode_entry(7);
    REQUIRE(ie.has_value());
    CHECK(ie->body.inode.name == "after");
    CHECK(ie->placeholder == new_ph);
}

TEST_CASE_METHOD(JournalFixture, "references_pending_placeholder flags unresolved hashes") {
    Journal j(dir.path);
    auto d = data_entry(9, 0, "pending");
    Digest ph = d.body.inner_digest();
    REQUIRE(j.enqueue_batch({std::move(d)}).ok());
    CHECK(j.references_pending_placeholder(9, {ph}));
    CHECK(!j.references_pending_placeholder(9, {sha256(to_bytes("other"))}));
    j.mark_committed(j.pending_data_entries(9)[0].sequence, sha256(to_bytes("final")));
    CHECK(!j.references_pending_placeholder(9, {ph}));
}

TEST_CASE_METHOD(JournalFixture, "journal compacts to empty when everything purges") {
    {
        Journal j(dir.path);
        auto seqs = j.enqueue_batch({data_entry(2, 0, "x"), inode_entry(2, "f", {})});
        REQUIRE(seqs.ok());
        j.purge(2, seqs.value()[1]);
        CHECK(j.pending_count() == 0);
    }
    CHECK(std::filesystem::file_size(dir / "journal.log") == 0);
    Journal j(dir.path);
    CHECK(j.live_entries().empty());
}
