#pragma once

// Append-only capsule store: one length-prefixed record file per capsule, an
// in-memory index rebuilt by full scan on open, chain/leaf tracking, Merkle
// proofs against middleware-signed roots, and an update subscription feed.

#include "cfs/blocks.hpp"
#include "cfs/merkle.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <unordered_map>
#include <unordered_set>

namespace cfs {

// ---------------------------------------------------------------------------
// Capsule metadata; the capsule id is the digest of its canonical encoding.

struct CapsuleMeta {
    std::string label; // "inode" / "data"
    uint32_t block_size = kDefaultBlockSize;
    Bytes nonce;      // random, makes ids unique per initialization
    Bytes verify_key; // middleware public key (root + outer signature trust anchor)

    Bytes canonical_bytes() const {
        Encoder e;
        e.u8('M');
        e.str(label);
        e.u32(block_size);
        e.bytes(nonce);
        e.bytes(verify_key);
        return e.take();
    }

    Digest capsule_id() const { return sha256(canonical_bytes()); }

    void encode(Encoder& e) const { e.bytes(canonical_bytes()); }

    static std::optional<CapsuleMeta> decode(Decoder& d) {
        Bytes raw = d.bytes();
        Decoder md(raw);
        CapsuleMeta m;
        if (md.u8() != 'M') return std::nullopt;
        m.label = md.str();
        m.block_size = md.u32();
        m.nonce = md.bytes();
        m.verify_key = md.bytes();
        if (!md.at_end()) return std::nullopt;
        return m;
    }
};

struct SignedRoot {
    uint64_t tree_size = 0;
    Digest root;
    Signature signature;

    void encode(Encoder& e) const {
        e.u64(tree_size);
        encode_digest(e, root);
        signature.encode(e);
    }

    static SignedRoot decode(Decoder& d) {
        SignedRoot r;
        r.tree_size = d.u64();
        r.root = decode_digest(d);
        r.signature = Signature::decode(d);
        return r;
    }
};

struct Receipt {
    Digest digest;
    uint64_t sequence = 0;
    MerkleProof proof;
};

struct CapsuleRecord {
    uint64_t sequence = 0;
    Bytes encrypted;
    SignedRoot root;
};

struct SubEvent {
    uint64_t sequence = 0;
    Digest digest;
};

class Subscription {
public:
    void push(SubEvent ev) {
        std::lock_guard lk(m_);
        if (closed_) return;
        q_.push_back(ev);
        cv_.notify_all();
    }

    // Blocks up to timeout_ms; nullopt on timeout or close.
    std::optional<SubEvent> next(int timeout_ms) {
        std::unique_lock lk(m_);
        cv_.wait_for(lk, std::chrono::milliseconds(timeout_ms),
                     [&] { return closed_ || !q_.empty(); });
        if (q_.empty()) return std::nullopt;
        SubEvent ev = q_.front();
        q_.pop_front();
        return ev;
    }

    void close() {
        std::lock_guard lk(m_);
        closed_ = true;
        cv_.notify_all();
    }

    bool closed() const {
        std::lock_guard lk(m_);
        return closed_;
    }

private:
    mutable std::mutex m_;
    std::condition_variable cv_;
    std::deque<SubEvent> q_;
    bool closed_ = false;
};

struct CapsuleOptions {
    bool crypto = true;
    bool durable = true;               // fdatasync every append
    bool redundant_inner_verify = false; // test instrumentation, see invalid_admissions()
};

inline constexpr char kCapsuleFileMagic[4] = {'C', 'F', 'S', 'C'};

class CapsuleStore {
public:
    CapsuleStore(const CapsuleStore&) = delete;
    CapsuleStore& operator=(const CapsuleStore&) = delete;

    ~CapsuleStore() {
        if (fd_ >= 0) ::close(fd_);
    }

    // Creates the store file if absent (meta required), otherwise loads and
    // rebuilds the index by scanning the record log.
    static Result<std::shared_ptr<CapsuleStore>> open(const std::filesystem::path& path,
                                                      const CapsuleMeta& meta,
                                                      const CapsuleReadKey& read_key,
                                                      CapsuleOptions options = {}) {
        auto store = std::shared_ptr<CapsuleStore>(new CapsuleStore());
        store->path_ = path;
        store->read_key_ = read_key;
        store->options_ = options;

        bool fresh = !std::filesystem::exists(path);
        if (fresh) {
            store->meta_ = meta;
            store->capsule_id_ = meta.capsule_id();
            Encoder e;
            e.raw(ByteSpan(reinterpret_cast<const uint8_t*>(kCapsuleFileMagic), 4));
            e.u8(1);
            meta.encode(e);
            auto st = detail::write_file_atomic(path, e.view());
            if (!st)
                return Result<std::shared_ptr<CapsuleStore>>::err(st.error().code,
                                                                  st.error().message);
        }
        auto st = store->load();
        if (!st)
            return Result<std::shared_ptr<CapsuleStore>>::err(st.error().code,
                                                              st.error().message);
        if (store->capsule_id_ != read_key.capsule_id)
            return Result<std::shared_ptr<CapsuleStore>>::err(
                Errc::bad_request, "read key belongs to a different capsule");
        return store;
    }

    const CapsuleMeta& meta() const { return meta_; }
    const Digest& capsule_id() const { return capsule_id_; }
    uint32_t block_size() const { return meta_.block_size; }

    uint64_t length() const {
        std::shared_lock lk(m_);
        return order_.size();
    }

    // Admission and append. Serialized per capsule; the record is durable
    // before the receipt is returned.
    Result<Receipt> append(ByteSpan encrypted, const SignedRoot& claimed_root) {
        std::lock_guard alk(append_m_);

        auto verified = unwrap_outer_block(read_key_, encrypted, options_.crypto);
        if (!verified)
            return Result<Receipt>::err(Errc::rejected_write,
                                        "admission failed: " + verified.error().message);
        const OuterBlock& outer = verified.value().outer;
        Digest digest = verified.value().digest;

        {
            std::shared_lock lk(m_);
            auto it = index_.find(digest);
            if (it != index_.end()) return receipt_at_locked(it->second);
            if (outer.prev_hash != kGenesisHash && !index_.contains(outer.prev_hash))
                return Result<Receipt>::err(Errc::dangling_chain, "unknown prev_hash");
            if (outer.timestamp == 0 && !order_.empty())
                return Result<Receipt>::err(Errc::rejected_write,
                                            "zero timestamp outside genesis");
        }

        if (options_.redundant_inner_verify && options_.crypto &&
            !verify_cfs_block(outer.inner)) {
            invalid_admissions_.fetch_add(1, std::memory_order_relaxed);
            CFS_LOG_ERROR("capsule %s admitted block with invalid inner signature",
                          meta_.label.c_str());
        }

        std::unique_lock lk(m_);
        tree_.append(digest);
        if (tree_.root() != claimed_root.root || tree_.size() != claimed_root.tree_size) {
            rebuild_tree_locked();
            return Result<Receipt>::err(Errc::rejected_write, "root claim mismatch");
        }
        if (options_.crypto &&
            !verify_payload(read_key_.verify_key,
                            root_signing_payload(capsule_id_, claimed_root.tree_size,
                                                 claimed_root.root),
                            claimed_root.signature)) {
            rebuild_tree_locked();
            return Result<Receipt>::err(Errc::rejected_write, "root signature invalid");
        }

        uint64_t seq = order_.size();
        auto st = persist_record_locked(seq, encrypted, claimed_root);
        if (!st) {
            rebuild_tree_locked();
            return Result<Receipt>::err(st.error().code, st.error().message);
        }

        order_.push_back(digest);
        roots_.push_back(claimed_root);
        records_.push_back(CapsuleRecord{seq, Bytes(encrypted.begin(), encrypted.end()),
                                         claimed_root});
        index_.emplace(digest, seq);
        prev_of_.emplace(digest, outer.prev_hash);
        if (outer.prev_hash != kGenesisHash) leaves_.erase(outer.prev_hash);
        if (!referenced_.contains(digest)) leaves_.insert(digest);
        referenced_.insert(outer.prev_hash);

        auto receipt = receipt_at_locked(seq);
        lk.unlock();

        fan_out(SubEvent{seq, digest});
        return receipt;
    }

    Result<std::pair<Bytes, MerkleProof>> get(const Digest& digest) {
        get_count_.fetch_add(1, std::memory_order_relaxed);
        std::shared_lock lk(m_);
        auto it = index_.find(digest);
        if (it == index_.end())
            return Result<std::pair<Bytes, MerkleProof>>::err(Errc::not_found,
                                                              "unknown digest");
        Bytes bytes = records_[it->second].encrypted;
        MerkleProof p = tree_.proof(it->second);
        p.root_signature = roots_.back().signature;
        lk.unlock();
        if (get_tamper_) get_tamper_(digest, bytes);
        return std::make_pair(std::move(bytes), std::move(p));
    }

    Result<CapsuleRecord> record(uint64_t sequence) const {
        std::shared_lock lk(m_);
        if (sequence >= records_.size())
            return Result<CapsuleRecord>::err(Errc::not_found, "sequence beyond head");
        return records_[sequence];
    }

    std::vector<Digest> leaves() const {
        std::shared_lock lk(m_);
        std::vector<Digest> out(leaves_.begin(), leaves_.end());
        std::sort(out.begin(), out.end());
        return out;
    }

    Result<MerkleProof> proof(const Digest& digest) const {
        std::shared_lock lk(m_);
        auto it = index_.find(digest);
        if (it == index_.end())
            return Result<MerkleProof>::err(Errc::not_found, "unknown digest");
        MerkleProof p = tree_.proof(it->second);
        p.root_signature = roots_.back().signature;
        return p;
    }

    Result<std::shared_ptr<Subscription>> subscribe(uint64_t from_sequence) {
        std::lock_guard alk(append_m_); // freeze appends while seeding
        std::unique_lock lk(m_);
        if (from_sequence > order_.size())
            return Result<std::shared_ptr<Subscription>>::err(Errc::invalid_cursor,
                                                              "cursor beyond head");
        auto sub = std::make_shared<Subscription>();
        for (uint64_t s = from_sequence; s < order_.size(); s++)
            sub->push(SubEvent{s, order_[s]});
        subs_.push_back(sub);
        return sub;
    }

    std::vector<Digest> order_snapshot() const {
        std::shared_lock lk(m_);
        return order_;
    }

    // Dishonest-server injection point: mutates bytes served by get().
    void set_get_tamper(std::function<void(const Digest&, Bytes&)> hook) {
        get_tamper_ = std::move(hook);
    }

    uint64_t get_count() const { return get_count_.load(std::memory_order_relaxed); }
    uint64_t invalid_admissions() const {
        return invalid_admissions_.load(std::memory_order_relaxed);
    }

    const CapsuleReadKey& read_key() const { return read_key_; }
    const CapsuleOptions& options() const { return options_; }

private:
    CapsuleStore() = default;

    Result<Receipt> receipt_at_locked(uint64_t seq) const {
        Receipt r;
        r.digest = order_[seq];
        r.sequence = seq;
        // Proof against the tree as it stood right after this append, so a
        // repeated append returns the identical receipt.
        if (seq + 1 == order_.size()) {
            r.proof = tree_.proof(seq);
        } else {
            r.proof = MerkleTree::proof_over(std::span(order_.data(), seq + 1), seq);
        }
        r.proof.root_signature = roots_[seq].signature;
        return r;
    }

    void rebuild_tree_locked() {
        tree_ = MerkleTree();
        for (const auto& d : order_) tree_.append(d);
    }

    Status persist_record_locked(uint64_t seq, ByteSpan encrypted, const SignedRoot& root) {
        Encoder e;
        e.u64(seq);
        e.bytes(encrypted);
        root.encode(e);
        Encoder framed;
        framed.u32(static_cast<uint32_t>(e.size()));
        framed.raw(e.view());
        const Bytes& buf = framed.view();
        ssize_t n = ::write(fd_, buf.data(), buf.size());
        if (n != static_cast<ssize_t>(buf.size()))
            return Status::err(Errc::io, "capsule record write failed");
        if (options_.durable && ::fdatasync(fd_) != 0)
            return Status::err(Errc::io, "capsule fdatasync failed");
        return ok_status();
    }

    Status load() {
        auto data = detail::read_file(path_);
        if (!data) return Status::err(data.error().code, data.error().message);
        const Bytes& buf = data.value();
        Decoder d(buf);
        auto magic = d.raw(4);
        if (!d.valid() || std::memcmp(magic.data(), kCapsuleFileMagic, 4) != 0)
            return Status::err(Errc::bad_request, "not a capsule file: " + path_.string());
        if (d.u8() != 1) return Status::err(Errc::bad_request, "unknown capsule file version");
        auto meta = CapsuleMeta::decode(d);
        if (!meta) return Status::err(Errc::bad_request, "corrupt capsule metadata");
        meta_ = *meta;
        capsule_id_ = meta_.capsule_id();

        size_t good_end = buf.size() - d.remaining();
        while (d.remaining() >= 4) {
            uint32_t len = d.u32();
            if (!d.valid() || d.remaining() < len) break; // torn tail record
            Decoder rd(d.raw(len));
            uint64_t seq = rd.u64();
            Bytes encrypted = rd.bytes();
            SignedRoot root = SignedRoot::decode(rd);
            if (!rd.at_end() || seq != order_.size()) break;

            auto verified = unwrap_outer_block(read_key_, encrypted, options_.crypto);
            if (!verified) {
                CFS_LOG_ERROR("capsule %s: record %llu failed verification on load",
                              meta_.label.c_str(), static_cast<unsigned long long>(seq));
                break;
            }
            Digest digest = verified.value().digest;
            tree_.append(digest);
            if (tree_.root() != root.root || tree_.size() != root.tree_size) {
                CFS_LOG_ERROR("capsule %s: record %llu root mismatch on load",
                              meta_.label.c_str(), static_cast<unsigned long long>(seq));
                rebuild_tree_locked();
                break;
            }
            order_.push_back(digest);
            roots_.push_back(root);
            records_.push_back(CapsuleRecord{seq, std::move(encrypted), root});
            index_.emplace(digest, seq);
            const Digest& prev = verified.value().outer.prev_hash;
            prev_of_.emplace(digest, prev);
            if (prev != kGenesisHash) leaves_.erase(prev);
            if (!referenced_.contains(digest)) leaves_.insert(digest);
            referenced_.insert(prev);
            good_end = buf.size() - d.remaining();
        }
        if (good_end < buf.size()) {
            CFS_LOG_WARN("capsule %s: truncating %zu torn bytes", meta_.label.c_str(),
                         buf.size() - good_end);
            std::filesystem::resize_file(path_, good_end);
        }

        fd_ = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
        if (fd_ < 0) return Status::err(Errc::io, "cannot open capsule file for append");
        return ok_status();
    }

    void fan_out(SubEvent ev) {
        std::lock_guard lk(subs_m_);
        for (auto it = subs_.begin(); it != subs_.end();) {
            if ((*it)->closed()) {
                it = subs_.erase(it);
            } else {
                (*it)->push(ev);
                ++it;
            }
        }
    }

    std::filesystem::path path_;
    CapsuleMeta meta_;
    Digest capsule_id_;
    CapsuleReadKey read_key_;
    CapsuleOptions options_;
    int fd_ = -1;

    mutable std::shared_mutex m_;
    std::mutex append_m_;
    std::vector<Digest> order_;
    std::vector<SignedRoot> roots_;
    std::vector<CapsuleRecord> records_;
    std::unordered_map<Digest, uint64_t, DigestHash> index_;
    std::unordered_map<Digest, Digest, DigestHash> prev_of_;
    std::unordered_set<Digest, DigestHash> leaves_;
    std::unordered_set<Digest, DigestHash> referenced_;
    MerkleTree tree_;

    std::mutex subs_m_;
    std::vector<std::shared_ptr<Subscription>> subs_;

    std::function<void(const Digest&, Bytes&)> get_tamper_;
    std::atomic<uint64_t> get_count_{0};
    std::atomic<uint64_t> invalid_admissions_{0};
};

} // namespace cfs
