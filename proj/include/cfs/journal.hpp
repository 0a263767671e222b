#pragma once

// Write-path durability: an append-only record log of blocks awaiting
// middleware commitment. Entries are fsync'd before write() acknowledges,
// carry a placeholder digest until the middleware produces the final one,
// coalesce per (inode, block index), and survive process crashes for
// recovery resend.

#include "cfs/blocks.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <map>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

namespace cfs {

inline constexpr uint64_t kInodeEntry = UINT64_MAX; // block_index sentinel for metadata entries

enum class EntryState : uint8_t { pending = 0, committed = 1, superseded = 2, parked = 3 };

enum class OpKind : uint8_t {
    data = 0,
    create = 1,
    write = 2,
    unlink = 3,
    set_acl = 4,
    rename = 5,
};

struct JournalEntry {
    uint64_t sequence = 0;
    uint64_t inode = 0;
    uint64_t block_index = kInodeEntry;
    OpKind op = OpKind::data;
    CfsBlock body;
    Digest placeholder; // hash of the canonical body; stands in for the final digest
    EntryState state = EntryState::pending;
    std::optional<Digest> final_digest;
};

class Journal {
public:
    struct NewEntry {
        uint64_t inode = 0;
        uint64_t block_index = kInodeEntry;
        OpKind op = OpKind::data;
        CfsBlock body;
    };

    explicit Journal(const std::filesystem::path& dir) : path_(dir / "journal.log") {
        std::filesystem::create_directories(dir);
        recover();
        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0600);
        if (fd_ < 0) throw std::runtime_error("cannot open journal: " + path_.string());
    }

    ~Journal() {
        if (fd_ >= 0) ::close(fd_);
    }

    Journal(const Journal&) = delete;
    Journal& operator=(const Journal&) = delete;

    // Appends a batch of entries and fsyncs once; nothing is considered
    // enqueued unless the whole batch persisted.
    Result<std::vector<uint64_t>> enqueue_batch(std::vector<NewEntry> batch) {
        std::lock_guard lk(m_);
        Encoder buf;
        std::vector<JournalEntry> staged;
        std::vector<uint64_t> seqs;
        for (auto& ne : batch) {
            JournalEntry e;
            e.sequence = next_seq_++;
            e.inode = ne.inode;
            e.block_index = ne.block_index;
            e.op = ne.op;
            e.body = std::move(ne.body);
            e.placeholder = e.body.inner_digest();
            seqs.push_back(e.sequence);
            append_enq_record(buf, e);
            staged.push_back(std::move(e));
        }
        auto st = write_records(buf.view(), true);
        if (!st) {
            next_seq_ -= staged.size();
            return Result<std::vector<uint64_t>>::err(st.error().code, st.error().message);
        }
        for (auto& e : staged) {
            uint64_t seq = e.sequence;
            entries_.emplace(seq, std::move(e));
        }
        return seqs;
    }

    // Sequence-explicit variant; duplicate or non-monotonic sequences are
    // rejected before anything touches the log.
    Status enqueue_with_sequence(uint64_t sequence, NewEntry ne) {
        std::lock_guard lk(m_);
        if (sequence < next_seq_)
            return Status::err(Errc::bad_request, "duplicate or stale journal sequence");
        JournalEntry e;
        e.sequence = sequence;
        e.inode = ne.inode;
        e.block_index = ne.block_index;
        e.op = ne.op;
        e.body = std::move(ne.body);
        e.placeholder = e.body.inner_digest();
        Encoder buf;
        append_enq_record(buf, e);
        auto st = write_records(buf.view(), true);
        if (!st) return st;
        next_seq_ = sequence + 1;
        entries_.emplace(sequence, std::move(e));
        return ok_status();
    }

    // Among pending entries sharing (inode, block index) only the newest
    // survives; pending inode entries whose data hashes still name a dropped
    // placeholder are pointed at the survivor's.
    size_t coalesce() {
        std::lock_guard lk(m_);
        std::map<std::pair<uint64_t, uint64_t>, uint64_t> latest;
        for (const auto& [seq, e] : entries_)
            if (e.state == EntryState::pending) latest[{e.inode, e.block_index}] = seq;

        size_t dropped = 0;
        std::unordered_map<Digest, Digest, DigestHash> renames;
        for (auto& [seq, e] : entries_) {
            if (e.state != EntryState::pending) continue;
            if (latest[{e.inode, e.block_index}] != seq) {
                e.state = EntryState::superseded;
                renames[e.placeholder] = entries_[latest[{e.inode, e.block_index}]].placeholder;
                Encoder buf;
                buf.u8('S');
                buf.u64(seq);
                write_records(frame(buf.take()), false);
                dropped++;
            }
        }
        if (!renames.empty()) {
            for (auto& [seq, e] : entries_) {
                if (e.state != EntryState::pending || e.block_index != kInodeEntry) continue;
                bool changed = false;
                InodeBlock ib = e.body.inode;
                for (auto& h : ib.data_hashes) {
                    auto it = renames.find(h);
                    if (it != renames.end()) {
                        h = it->second;
                        changed = true;
                    }
                }
                if (changed) rewrite_body_locked(e, std::move(ib));
            }
        }
        return dropped;
    }

    // Inodes with pending work, ordered by their earliest pending sequence so
    // parents created before children flush before them.
    std::vector<uint64_t> pending_inodes() const {
        std::lock_guard lk(m_);
        std::vector<std::pair<uint64_t, uint64_t>> firsts;
        std::map<uint64_t, uint64_t> seen;
        for (const auto& [seq, e] : entries_) {
            if (e.state != EntryState::pending) continue;
            if (!seen.contains(e.inode)) seen[e.inode] = seq;
        }
        for (const auto& [inode, seq] : seen) firsts.push_back({seq, inode});
        std::sort(firsts.begin(), firsts.end());
        std::vector<uint64_t> out;
        out.reserve(firsts.size());
        for (const auto& [_, inode] : firsts) out.push_back(inode);
        return out;
    }

    std::vector<JournalEntry> pending_data_entries(uint64_t inode) const {
        std::lock_guard lk(m_);
        std::vector<JournalEntry> out;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index != kInodeEntry &&
                e.state == EntryState::pending)
                out.push_back(e);
        return out;
    }

    // Consistent view for one flush round: the newest pending inode entry
    // and exactly the pending data entries enqueued before it. Entries from
    // batches that arrive mid-round wait for the next round.
    struct FlushSnapshot {
        std::vector<JournalEntry> data;
        std::optional<JournalEntry> inode_entry;
    };

    FlushSnapshot flush_snapshot(uint64_t inode) const {
        std::lock_guard lk(m_);
        FlushSnapshot out;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index == kInodeEntry &&
                e.state == EntryState::pending)
                out.inode_entry = e;
        uint64_t bound = out.inode_entry ? out.inode_entry->sequence : UINT64_MAX;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index != kInodeEntry &&
                e.state == EntryState::pending && seq < bound)
                out.data.push_back(e);
        return out;
    }

    // Placeholder -> final digest for every committed data entry of an inode
    // whose metadata commit is still outstanding.
    std::unordered_map<Digest, Digest, DigestHash> committed_renames(uint64_t inode) const {
        std::lock_guard lk(m_);
        std::unordered_map<Digest, Digest, DigestHash> out;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index != kInodeEntry && e.final_digest)
                out[e.placeholder] = *e.final_digest;
        return out;
    }

    // True when any hash in the list is still the placeholder of an
    // uncommitted data entry for this inode.
    bool references_pending_placeholder(uint64_t inode,
                                        const std::vector<Digest>& hashes) const {
        std::lock_guard lk(m_);
        std::unordered_set<Digest, DigestHash> pending;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index != kInodeEntry && !e.final_digest)
                pending.insert(e.placeholder);
        if (pending.empty()) return false;
        for (const auto& h : hashes)
            if (pending.contains(h)) return true;
        return false;
    }

    std::optional<JournalEntry> latest_inode_entry(uint64_t inode) const {
        std::lock_guard lk(m_);
        std::optional<JournalEntry> out;
        for (const auto& [seq, e] : entries_)
            if (e.inode == inode && e.block_index == kInodeEntry &&
                e.state == EntryState::pending)
                out = e;
        return out;
    }

    // Data payload lookup by placeholder or final digest; serves the
    // journal-first read path until entries are purged.
    std::optional<Bytes> find_payload(const Digest& digest) const {
        std::lock_guard lk(m_);
        for (const auto& [seq, e] : entries_) {
            if (e.block_index == kInodeEntry) continue;
            if (e.placeholder == digest || (e.final_digest && *e.final_digest == digest))
                return e.body.data.payload;
        }
        return std::nullopt;
    }

    void mark_committed(uint64_t seq, const Digest& final_digest) {
        std::lock_guard lk(m_);
        auto it = entries_.find(seq);
        if (it == entries_.end()) return;
        it->second.state = EntryState::committed;
        it->second.final_digest = final_digest;
        Encoder buf;
        buf.u8('C');
        buf.u64(seq);
        encode_digest(buf, final_digest);
        write_records(frame(buf.take()), false);
    }

    void park(uint64_t seq) {
        std::lock_guard lk(m_);
        auto it = entries_.find(seq);
        if (it == entries_.end()) return;
        it->second.state = EntryState::parked;
        Encoder buf;
        buf.u8('P');
        buf.u64(seq);
        write_records(frame(buf.take()), false);
    }

    // Rebase support: replaces the body of a pending inode entry (new version
    // link, rewritten hashes, fresh signature).
    void rewrite_body(uint64_t seq, CfsBlock body) {
        std::lock_guard lk(m_);
        auto it = entries_.find(seq);
        if (it == entries_.end()) return;
        it->second.body = std::move(body);
        it->second.placeholder = it->second.body.inner_digest();
        Encoder buf;
        buf.u8('R');
        buf.u64(seq);
        buf.bytes(it->second.body.canonical_bytes());
        write_records(frame(buf.take()), false);
    }

    // Drops every record for the inode up to and including the committed
    // inode entry. Entries enqueued after that point stay for the next round.
    void purge(uint64_t inode, uint64_t up_to_seq) {
        std::lock_guard lk(m_);
        for (auto it = entries_.begin(); it != entries_.end();) {
            if (it->first > up_to_seq) break;
            if (it->second.inode == inode)
                it = entries_.erase(it);
            else
                ++it;
        }
        Encoder buf;
        buf.u8('G');
        buf.u64(inode);
        buf.u64(up_to_seq);
        write_records(frame(buf.take()), false);
        if (entries_.empty()) compact_locked();
    }

    size_t pending_count() const {
        std::lock_guard lk(m_);
        size_t n = 0;
        for (const auto& [_, e] : entries_)
            if (e.state == EntryState::pending) n++;
        return n;
    }

    size_t parked_count() const {
        std::lock_guard lk(m_);
        size_t n = 0;
        for (const auto& [_, e] : entries_)
            if (e.state == EntryState::parked) n++;
        return n;
    }

    std::vector<JournalEntry> live_entries() const {
        std::lock_guard lk(m_);
        std::vector<JournalEntry> out;
        out.reserve(entries_.size());
        for (const auto& [_, e] : entries_) out.push_back(e);
        return out;
    }

    std::vector<JournalEntry> parked_entries_for(uint64_t inode) const {
        std::lock_guard lk(m_);
        std::vector<JournalEntry> out;
        for (const auto& [_, e] : entries_)
            if (e.inode == inode && e.state == EntryState::parked) out.push_back(e);
        return out;
    }

    uint64_t next_sequence() const {
        std::lock_guard lk(m_);
        return next_seq_;
    }

private:
    static Bytes frame(Bytes record) {
        Encoder e;
        e.u32(static_cast<uint32_t>(record.size()));
        e.raw(record);
        return e.take();
    }

    void append_enq_record(Encoder& out, const JournalEntry& e) {
        Encoder rec;
        rec.u8('E');
        rec.u64(e.sequence);
        rec.u64(e.inode);
        rec.u64(e.block_index);
        rec.u8(static_cast<uint8_t>(e.op));
        rec.bytes(e.body.canonical_bytes());
        out.u32(static_cast<uint32_t>(rec.size()));
        out.raw(rec.view());
    }

    Status write_records(ByteSpan buf, bool sync) {
        if (fd_ < 0) return ok_status(); // during recover(), before the fd exists
        ssize_t n = ::write(fd_, buf.data(), buf.size());
        if (n != static_cast<ssize_t>(buf.size()))
            return Status::err(Errc::io, "journal write failed");
        if (sync && ::fsync(fd_) != 0) return Status::err(Errc::io, "journal fsync failed");
        return ok_status();
    }

    void rewrite_body_locked(JournalEntry& e, InodeBlock ib) {
        // Re-signing happens in the flusher, which owns the client key; here
        // only the recorded hashes move. The signature is refreshed before
        // the entry is ever sent.
        e.body.inode = std::move(ib);
        e.placeholder = e.body.inner_digest();
        Encoder buf;
        buf.u8('R');
        buf.u64(e.sequence);
        buf.bytes(e.body.canonical_bytes());
        write_records(frame(buf.take()), false);
    }

    void recover() {
        auto data = detail::read_file(path_);
        if (!data) return;
        Decoder d(data.value());
        size_t good_end = 0;
        while (d.remaining() >= 4) {
            uint32_t len = d.u32();
            if (!d.valid() || d.remaining() < len) break;
            Decoder rd(d.raw(len));
            if (!replay_record(rd)) break;
            good_end = data.value().size() - d.remaining();
        }
        if (good_end < data.value().size()) {
            CFS_LOG_WARN("journal: truncating %zu torn bytes",
                         data.value().size() - good_end);
            std::filesystem::resize_file(path_, good_end);
        }
        // Entries that were superseded before a crash stay superseded; their
        // payloads remain findable until their inode's next purge.
    }

    bool replay_record(Decoder& rd) {
        uint8_t tag = rd.u8();
        switch (tag) {
            case 'E': {
                JournalEntry e;
                e.sequence = rd.u64();
                e.inode = rd.u64();
                e.block_index = rd.u64();
                e.op = static_cast<OpKind>(rd.u8());
                Bytes body = rd.bytes();
                if (!rd.at_end()) return false;
                auto block = CfsBlock::decode_canonical(body);
                if (!block) return false;
                e.body = std::move(*block);
                e.placeholder = e.body.inner_digest();
                next_seq_ = std::max(next_seq_, e.sequence + 1);
                entries_.emplace(e.sequence, std::move(e));
                return true;
            }
            case 'C': {
                uint64_t seq = rd.u64();
                Digest final_digest = decode_digest(rd);
                if (!rd.at_end()) return false;
                auto it = entries_.find(seq);
                if (it != entries_.end()) {
                    it->second.state = EntryState::committed;
                    it->second.final_digest = final_digest;
                }
                return true;
            }
            case 'S':
            case 'P': {
                uint64_t seq = rd.u64();
                if (!rd.at_end()) return false;
                auto it = entries_.find(seq);
                if (it != entries_.end())
                    it->second.state =
                        tag == 'S' ? EntryState::superseded : EntryState::parked;
                return true;
            }
            case 'R': {
                uint64_t seq = rd.u64();
                Bytes body = rd.bytes();
                if (!rd.at_end()) return false;
                auto block = CfsBlock::decode_canonical(body);
                if (!block) return false;
                auto it = entries_.find(seq);
                if (it != entries_.end()) {
                    it->second.body = std::move(*block);
                    it->second.placeholder = it->second.body.inner_digest();
                }
                return true;
            }
            case 'G': {
                uint64_t inode = rd.u64();
                uint64_t up_to = rd.u64();
                if (!rd.at_end()) return false;
                for (auto it = entries_.begin(); it != entries_.end();) {
                    if (it->first > up_to) break;
                    if (it->second.inode == inode)
                        it = entries_.erase(it);
                    else
                        ++it;
                }
                return true;
            }
            default:
                return false;
        }
    }

    void compact_locked() {
        if (fd_ < 0) return;
        ::close(fd_);
        fd_ = ::open(path_.c_str(), O_WRONLY | O_TRUNC | O_CLOEXEC, 0600);
    }

    std::filesystem::path path_;
    int fd_ = -1;
    mutable std::mutex m_;
    std::map<uint64_t, JournalEntry> entries_;
    uint64_t next_seq_ = 1;
};

} // namespace cfs
