#pragma once

// The trusted write path. Every client write is verified (signature, ACL
// membership, inode freshness) before the middleware stamps a timestamp,
// chains the block, signs and encrypts it with the capsule write key, and
// forwards it to the storage server. Write keys live only here; the TEE the
// deployment would put around this process is simulated by ordinary process
// isolation.

#include "cfs/service.hpp"

#include <fstream>
#include <thread>

namespace cfs {

struct MiddlewareOptions {
    bool crypto = true;
    bool scrub_on_revoke = false;     // also rewrite every ACL containing the key
    bool skip_client_sig_verify = false; // harness mutation testing only
    std::filesystem::path revocation_path; // optional persistence of revoked key ids
};

struct InodeView {
    Digest digest;
    uint64_t timestamp = 0;
    InodeBlock block;
};

// Shared conflict-resolution rule: highest timestamp wins, ties broken by the
// lexicographically greater digest. Used identically by the middleware view
// and the client inode cache so both converge on the same winner.
inline bool supersedes(uint64_t ts_new, const Digest& d_new, uint64_t ts_old,
                       const Digest& d_old) {
    if (ts_new != ts_old) return ts_new > ts_old;
    return d_new > d_old;
}

class Middleware {
public:
    Middleware(CapsuleWriteKey inode_key, CapsuleWriteKey data_key,
               std::shared_ptr<CapsuleService> inode_capsule,
               std::shared_ptr<CapsuleService> data_capsule, KeyPair admin,
               MiddlewareOptions options = {})
        : inode_key_(std::move(inode_key)),
          data_key_(std::move(data_key)),
          inode_capsule_(std::move(inode_capsule)),
          data_capsule_(std::move(data_capsule)),
          admin_(std::move(admin)),
          options_(std::move(options)) {
        block_size_ = data_capsule_->block_size();
        load_revocations();
        bootstrap();
    }

    ~Middleware() { stop(); }

    Middleware(const Middleware&) = delete;
    Middleware& operator=(const Middleware&) = delete;

    // Live reconciliation with the inode capsule; bootstrap alone is enough
    // when this middleware is the only writer.
    void start_sync() {
        auto sub = inode_capsule_->subscribe(view_cursor_);
        if (!sub) {
            CFS_LOG_WARN("middleware: inode subscription failed: %s",
                         sub.error().message.c_str());
            return;
        }
        sync_stream_ = sub.take();
        sync_thread_ = std::thread([this] {
            while (!stopping_.load()) {
                auto ev = sync_stream_->next(200);
                if (!ev) continue;
                ingest_inode_digest(ev->digest);
            }
        });
    }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        if (sync_stream_) sync_stream_->close();
        if (sync_thread_.joinable()) sync_thread_.join();
    }

    const Identity admin_identity() const { return Identity{admin_.public_key, 0}; }
    const KeyPair& admin_key() const { return admin_; }

    // ------------------------------------------------------------------
    // Write admission pipeline.
    PutResult put(const PutRequest& req) {
        puts_.fetch_add(1, std::memory_order_relaxed);

        bool to_inode = req.capsule_id == inode_capsule_->capsule_id();
        bool to_data = req.capsule_id == data_capsule_->capsule_id();
        if (!to_inode && !to_data) return reject(PutStatus::bad_request, "unknown capsule");

        auto block = CfsBlock::decode_canonical(req.cfs_bytes);
        if (!block) return reject(PutStatus::bad_request, "malformed CFS block");

        if (options_.crypto && !options_.skip_client_sig_verify && !verify_cfs_block(*block))
            return reject(PutStatus::bad_signature, "client signature does not verify");

        {
            std::shared_lock lk(revoked_m_);
            if (revoked_.contains(block->author.key_id()))
                return reject(PutStatus::revoked, "author key revoked");
        }

        std::lock_guard inode_lk(stripe(req.claimed_inode));

        if (block->body_kind == BodyKind::inode) {
            if (!to_inode)
                return reject(PutStatus::bad_request, "inode block sent to data capsule");
            return put_inode(req, std::move(*block));
        }
        if (!to_data) return reject(PutStatus::bad_request, "data block sent to inode capsule");
        return put_data(req, std::move(*block));
    }

    Status revoke(const Digest& key_id) {
        {
            std::unique_lock lk(revoked_m_);
            if (!revoked_.insert(key_id).second) return ok_status(); // idempotent
        }
        persist_revocation(key_id);
        if (options_.scrub_on_revoke) scrub_acls(key_id);
        return ok_status();
    }

    bool is_revoked(const Digest& key_id) const {
        std::shared_lock lk(revoked_m_);
        return revoked_.contains(key_id);
    }

    // Strictly monotonic within this process: wall-clock microseconds with a
    // tick forced between equal readings.
    uint64_t assign_timestamp() {
        uint64_t now = wall_micros();
        uint64_t prev = last_ts_.load(std::memory_order_relaxed);
        uint64_t next;
        do {
            next = std::max(now, prev + 1);
        } while (!last_ts_.compare_exchange_weak(prev, next, std::memory_order_relaxed));
        return next;
    }

    std::optional<InodeView> view_of(uint64_t inode) const {
        std::shared_lock lk(view_m_);
        auto it = acl_view_.find(inode);
        if (it == acl_view_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<uint64_t> view_inodes() const {
        std::shared_lock lk(view_m_);
        std::vector<uint64_t> out;
        out.reserve(acl_view_.size());
        for (const auto& [n, _] : acl_view_) out.push_back(n);
        return out;
    }

    uint64_t put_count() const { return puts_.load(std::memory_order_relaxed); }
    uint64_t reject_count() const { return rejects_.load(std::memory_order_relaxed); }

private:
    PutResult reject(PutStatus status, std::string msg) {
        rejects_.fetch_add(1, std::memory_order_relaxed);
        PutResult r;
        r.status = status;
        r.message = std::move(msg);
        CFS_LOG_DEBUG("middleware: rejected put: %s (%s)", put_status_name(status),
                      r.message.c_str());
        return r;
    }

    PutResult put_inode(const PutRequest& req, CfsBlock block) {
        const InodeBlock& ib = block.inode;
        if (ib.inode_number != req.claimed_inode)
            return reject(PutStatus::bad_request, "claimed inode does not match block");
        if (auto st = ib.validate(block_size_); !st)
            return reject(PutStatus::bad_request, st.error().message);
        if (!acl_sorted(ib.acl))
            return reject(PutStatus::bad_request, "ACL not in canonical order");

        auto current = view_of(ib.inode_number);
        if (current) {
            if (!acl_permits(current->block.acl, block.author))
                return reject(PutStatus::forbidden, "author not in inode ACL");
            if (!req.expected_version || *req.expected_version != current->digest) {
                PutResult r = reject(PutStatus::stale_inode, "inode has a newer version");
                r.current_version = current->digest;
                return r;
            }
        } else {
            if (req.expected_version)
                return reject(PutStatus::stale_inode, "inode does not exist yet");
            auto parent = view_of(ib.parent_inode);
            if (!parent)
                return reject(PutStatus::forbidden, "unknown parent inode");
            if (parent->block.kind != NodeKind::directory)
                return reject(PutStatus::bad_request, "parent is not a directory");
            if (!acl_permits(parent->block.acl, block.author))
                return reject(PutStatus::forbidden, "author not in parent ACL");
        }

        InodeBlock view_copy = ib; // survives the move of the block below
        auto committed = commit(inode_mirror_, inode_key_, *inode_capsule_, std::move(block));
        if (!committed.ok()) return committed;
        apply_inode_view(committed.digest, committed.timestamp, view_copy);
        return committed;
    }

    PutResult put_data(const PutRequest& req, CfsBlock block) {
        if (block.data.payload.size() > block_size_)
            return reject(PutStatus::bad_request, "data block exceeds capsule block size");

        // Blocks for inodes this view knows are ACL-checked here; blocks for
        // not-yet-committed inodes are admitted as unreachable orphans and
        // only become visible once an authorized inode block references them.
        if (auto current = view_of(req.claimed_inode)) {
            if (!acl_permits(current->block.acl, block.author))
                return reject(PutStatus::forbidden, "author not in inode ACL");
        }

        Digest inner = block.inner_digest();
        {
            std::lock_guard lk(memo_m_);
            auto it = data_memo_.find(inner);
            if (it != data_memo_.end()) return it->second; // recovery resend
        }

        auto committed = commit(data_mirror_, data_key_, *data_capsule_, std::move(block));
        if (committed.ok()) {
            std::lock_guard lk(memo_m_);
            data_memo_.emplace(inner, committed);
        }
        return committed;
    }

    struct CapsuleMirror {
        std::mutex m;
        Digest head = kGenesisHash;
        std::vector<Digest> order;
        MerkleTree tree;
    };

    // Chain, timestamp, sign, encrypt, forward. Appends to one capsule are
    // serialized by the mirror mutex since each block must name its
    // predecessor.
    PutResult commit(CapsuleMirror& mirror, const CapsuleWriteKey& key,
                     CapsuleService& capsule, CfsBlock block) {
        std::lock_guard lk(mirror.m);
        uint64_t ts = assign_timestamp();
        auto wrapped = wrap_outer_block(key, mirror.head, ts, std::move(block),
                                        options_.crypto);
        if (!wrapped) return reject(PutStatus::server_error, wrapped.error().message);

        Digest digest = wrapped.value().outer.digest();
        mirror.tree.append(digest);
        SignedRoot root;
        root.tree_size = mirror.tree.size();
        root.root = mirror.tree.root();
        if (options_.crypto) {
            auto sig = sign_payload(key.signer,
                                    root_signing_payload(key.capsule_id, root.tree_size,
                                                         root.root));
            if (sig) root.signature = sig.take();
        }

        auto receipt = capsule.append(wrapped.value().encrypted, root);
        if (!receipt) {
            mirror.tree = MerkleTree();
            for (const auto& d : mirror.order) mirror.tree.append(d);
            PutStatus st = receipt.error().code == Errc::unavailable ? PutStatus::unavailable
                                                                     : PutStatus::server_error;
            return reject(st, receipt.error().message);
        }

        mirror.order.push_back(digest);
        mirror.head = digest;

        PutResult r;
        r.status = PutStatus::accepted;
        r.digest = digest;
        r.timestamp = ts;
        return r;
    }

    void apply_inode_view(const Digest& digest, uint64_t ts, const InodeBlock& block) {
        std::unique_lock lk(view_m_);
        auto it = acl_view_.find(block.inode_number);
        if (it == acl_view_.end()) {
            acl_view_.emplace(block.inode_number, InodeView{digest, ts, block});
            return;
        }
        if (supersedes(ts, digest, it->second.timestamp, it->second.digest))
            it->second = InodeView{digest, ts, block};
    }

    void bootstrap() {
        replay(*inode_capsule_, inode_key_, inode_mirror_, true);
        replay(*data_capsule_, data_key_, data_mirror_, false);
    }

    void replay(CapsuleService& capsule, const CapsuleWriteKey& key, CapsuleMirror& mirror,
                bool is_inode) {
        auto rk = read_key_of(key);
        for (uint64_t seq = 0;; seq++) {
            auto rec = capsule.record(seq);
            if (!rec) break;
            auto verified = unwrap_outer_block(rk, rec.value().encrypted, options_.crypto);
            if (!verified) {
                CFS_LOG_WARN("middleware: skipping unverifiable record %llu",
                             static_cast<unsigned long long>(seq));
                continue;
            }
            Digest digest = verified.value().digest;
            mirror.tree.append(digest);
            mirror.order.push_back(digest);
            mirror.head = digest;
            const OuterBlock& outer = verified.value().outer;
            if (is_inode && outer.inner.body_kind == BodyKind::inode) {
                apply_inode_view(digest, outer.timestamp, outer.inner.inode);
                view_cursor_ = seq + 1;
            } else if (!is_inode && outer.inner.body_kind == BodyKind::data) {
                PutResult r;
                r.status = PutStatus::accepted;
                r.digest = digest;
                r.timestamp = outer.timestamp;
                std::lock_guard lk(memo_m_);
                data_memo_.emplace(outer.inner.inner_digest(), r);
            }
        }
        if (is_inode) view_cursor_ = mirror.order.size();
    }

    void ingest_inode_digest(const Digest& digest) {
        auto fetched = fetch_verified(*inode_capsule_, read_key_of(inode_key_), digest,
                                      options_.crypto);
        if (!fetched) {
            CFS_LOG_WARN("middleware: subscribed block failed verification: %s",
                         fetched.error().message.c_str());
            return;
        }
        const OuterBlock& outer = fetched.value().outer;
        if (outer.inner.body_kind != BodyKind::inode) return;
        if (options_.crypto && !verify_cfs_block(outer.inner)) return;
        apply_inode_view(digest, outer.timestamp, outer.inner.inode);
    }

    // Rewrites every ACL containing the revoked key, authored by the
    // middleware's administrative identity.
    void scrub_acls(const Digest& key_id) {
        for (uint64_t inode : view_inodes()) {
            for (int attempt = 0; attempt < 5; attempt++) {
                auto current = view_of(inode);
                if (!current || !acl_contains_key(current->block.acl, key_id)) break;

                InodeBlock next = current->block;
                Acl scrubbed;
                for (const auto& e : next.acl)
                    if (e.key_id() != key_id) scrubbed.push_back(e);
                if (scrubbed.empty()) {
                    CFS_LOG_WARN("revocation would empty ACL of inode %llu; skipped",
                                 static_cast<unsigned long long>(inode));
                    break;
                }
                next.acl = std::move(scrubbed);
                next.updated_by = admin_identity();
                next.version_of = current->digest;

                auto block = build_cfs_block(std::move(next), admin_identity(), admin_);
                if (!block) break;
                PutRequest req;
                req.capsule_id = inode_capsule_->capsule_id();
                req.cfs_bytes = block.value().canonical_bytes();
                req.claimed_inode = inode;
                req.expected_version = current->digest;
                PutResult r = put(req);
                if (r.ok() || r.status != PutStatus::stale_inode) break;
            }
        }
    }

    std::mutex& stripe(uint64_t inode) { return stripes_[inode % kStripes]; }

    static bool acl_sorted(const Acl& acl) {
        Acl copy = acl;
        canonicalize_acl(copy);
        return copy == acl;
    }

    void load_revocations() {
        if (options_.revocation_path.empty()) return;
        std::ifstream f(options_.revocation_path);
        std::string line;
        while (std::getline(f, line)) {
            if (auto d = Digest::from_hex(line)) revoked_.insert(*d);
        }
    }

    void persist_revocation(const Digest& key_id) {
        if (options_.revocation_path.empty()) return;
        std::ofstream f(options_.revocation_path, std::ios::app);
        f << key_id.hex() << "\n";
    }

    CapsuleWriteKey inode_key_;
    CapsuleWriteKey data_key_;
    std::shared_ptr<CapsuleService> inode_capsule_;
    std::shared_ptr<CapsuleService> data_capsule_;
    KeyPair admin_;
    MiddlewareOptions options_;
    uint32_t block_size_ = kDefaultBlockSize;

    static constexpr size_t kStripes = 64;
    std::array<std::mutex, kStripes> stripes_;

    CapsuleMirror inode_mirror_;
    CapsuleMirror data_mirror_;

    mutable std::shared_mutex view_m_;
    std::map<uint64_t, InodeView> acl_view_;
    uint64_t view_cursor_ = 0;

    mutable std::shared_mutex revoked_m_;
    std::unordered_set<Digest, DigestHash> revoked_;

    std::mutex memo_m_;
    std::unordered_map<Digest, PutResult, DigestHash> data_memo_;

    std::atomic<uint64_t> last_ts_{0};
    std::atomic<uint64_t> puts_{0};
    std::atomic<uint64_t> rejects_{0};

    std::unique_ptr<SubscriptionStream> sync_stream_;
    std::thread sync_thread_;
    std::atomic<bool> stopping_{false};
};

// In-process MiddlewareService adapter.
class LocalMiddleware final : public MiddlewareService {
public:
    explicit LocalMiddleware(std::shared_ptr<Middleware> mw) : mw_(std::move(mw)) {}

    PutResult put(const PutRequest& req) override { return mw_->put(req); }
    Status revoke(const Digest& key_id) override { return mw_->revoke(key_id); }

    std::shared_ptr<Middleware> middleware() { return mw_; }

private:
    std::shared_ptr<Middleware> mw_;
};

} // namespace cfs
