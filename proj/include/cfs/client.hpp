#pragma once

// The filesystem client: rebuilds the inode tree from the capsule with full
// verification, resolves conflicts by timestamp, exposes file and directory
// operations, journals writes for durability and read-your-writes, and
// flushes them to the middleware in the background. A snapshot timestamp
// turns the same machinery into a read-only point-in-time view.

#include "cfs/block_cache.hpp"
#include "cfs/inode_cache.hpp"
#include "cfs/journal.hpp"
#include "cfs/middleware.hpp"
#include "cfs/service.hpp"

#include <condition_variable>
#include <thread>

namespace cfs {

struct ClientOptions {
    uint32_t uid = 1000;        // default caller uid when an op does not pass one
    uint32_t nobody_uid = kDefaultNobodyUid;
    bool crypto = true;
    bool advisory_checks = true; // fail fast with the middleware's own rules
    bool coalesce = true;
    size_t cache_memory_blocks = 1024;
    size_t cache_disk_blocks = 8192;
    int stale_retry_limit = 5;
    std::filesystem::path journal_dir;
    std::filesystem::path cache_dir;
    std::optional<uint64_t> snapshot_ts; // implies read-only
    bool start_flush_worker = true;
};

struct Attr {
    uint64_t inode = 0;
    uint64_t size = 0;
    NodeKind kind = NodeKind::file;
    uint32_t owner_uid = 0;
    uint64_t mtime_us = 0;
    uint64_t nlink = 1;
};

struct DirEntry {
    std::string name;
    uint64_t inode = 0;
    NodeKind kind = NodeKind::file;
};

struct FlushReport {
    bool clean = true;          // nothing pending, nothing parked
    bool transient_failure = false;
    std::map<uint64_t, PutStatus> parked; // inode -> first terminal rejection
    size_t rounds = 0;
};

// Foreign authors are untrusted name claims: their uid maps to nobody.
inline uint32_t map_author(const Identity& author, const Bytes& self_public_key,
                           uint32_t nobody_uid) {
    return author.public_key == self_public_key ? author.uid : nobody_uid;
}

class Client {
public:
    Client(KeyPair key, CapsuleReadKey inode_read_key, CapsuleReadKey data_read_key,
           std::shared_ptr<CapsuleService> inode_capsule,
           std::shared_ptr<CapsuleService> data_capsule,
           std::shared_ptr<MiddlewareService> middleware, ClientOptions options)
        : key_(std::move(key)),
          inode_rk_(std::move(inode_read_key)),
          data_rk_(std::move(data_read_key)),
          inode_capsule_(std::move(inode_capsule)),
          data_capsule_(std::move(data_capsule)),
          middleware_(std::move(middleware)),
          opt_(std::move(options)),
          cache_(opt_.snapshot_ts),
          bcache_(opt_.cache_memory_blocks, opt_.cache_disk_blocks, opt_.cache_dir) {
        block_size_ = data_capsule_->block_size();
        read_only_ = opt_.snapshot_ts.has_value();
        if (!read_only_) journal_ = std::make_unique<Journal>(opt_.journal_dir);
        inode_prefix_ = derive_prefix(key_.key_id);
    }

    ~Client() { unmount(); }

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    // ------------------------------------------------------------------
    // Mount: rebuild the inode view by walking back from the capsule leaves,
    // verifying every block. A block that fails verification is excluded;
    // since its prev link is then unreadable, the remaining history is
    // recovered by enumerating sequences and fetching each digest through
    // the same verified read path. A live subscription then keeps the view
    // current.
    Status mount() {
        auto lv = inode_capsule_->leaves();
        if (!lv) return Status::err(Errc::unavailable, "inode capsule unreachable: " +
                                                           lv.error().message);
        {
            std::unique_lock lk(m_);
            std::unordered_set<Digest, DigestHash> rejected;
            auto fetch_apply = [&](const Digest& d) -> std::optional<Digest> {
                if (rejected.contains(d)) return std::nullopt;
                auto fetched = fetch_verified(*inode_capsule_, inode_rk_, d, opt_.crypto);
                if (!fetched) {
                    rejected.insert(d);
                    CFS_LOG_WARN("mount: excluding block %s: %s", d.hex().c_str(),
                                 fetched.error().message.c_str());
                    return std::nullopt;
                }
                const OuterBlock& outer = fetched.value().outer;
                if (!ingest_locked(d, outer)) rejected.insert(d);
                return outer.prev_hash;
            };

            std::vector<Digest> frontier = lv.value().leaves;
            std::unordered_set<Digest, DigestHash> visited;
            while (!frontier.empty()) {
                Digest d = frontier.back();
                frontier.pop_back();
                if (d == kGenesisHash || !visited.insert(d).second) continue;
                if (auto prev = fetch_apply(d)) frontier.push_back(*prev);
            }

            if (!rejected.empty() || !cache_.current(kRootInode)) {
                auto sweep = inode_capsule_->subscribe(0);
                if (sweep) {
                    auto stream = sweep.take();
                    for (uint64_t n = 0; n < lv.value().length; n++) {
                        auto ev = stream->next(1000);
                        if (!ev) break;
                        if (!visited.insert(ev->digest).second) continue;
                        fetch_apply(ev->digest);
                    }
                    stream->close();
                }
            }
            cache_.rejected_blocks += rejected.size();

            if (!cache_.current(kRootInode)) {
                return Status::err(Errc::integrity,
                                   "mount failed: no verifiable root inode (wrong read key "
                                   "or empty capsule)");
            }
            next_inode_low_ = next_low_locked();
            if (journal_) {
                for (const auto& e : journal_->live_entries())
                    if (e.block_index == kInodeEntry) refresh_overlay_locked(e.inode);
            }
        }

        if (!opt_.snapshot_ts) {
            auto sub = inode_capsule_->subscribe(lv.value().length);
            if (sub) {
                sub_stream_ = sub.take();
                sub_thread_ = std::thread([this] { subscription_loop(); });
            } else {
                CFS_LOG_WARN("mount: live subscription unavailable: %s",
                             sub.error().message.c_str());
            }
        }
        if (!read_only_ && opt_.start_flush_worker)
            flush_thread_ = std::thread([this] { flush_worker(); });
        mounted_ = true;
        return ok_status();
    }

    void unmount() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        flush_cv_.notify_all();
        if (sub_stream_) sub_stream_->close();
        if (sub_thread_.joinable()) sub_thread_.join();
        if (flush_thread_.joinable()) flush_thread_.join();
    }

    // ------------------------------------------------------------------
    // Namespace operations

    Result<uint64_t> lookup(std::string_view path) const {
        std::shared_lock lk(m_);
        return lookup_locked(path);
    }

    Result<Attr> getattr(uint64_t inode) const {
        std::shared_lock lk(m_);
        auto v = view_locked(inode);
        if (!v) return Result<Attr>::err(Errc::not_found, "no such inode");
        Attr a;
        a.inode = inode;
        a.size = v->block.size;
        a.kind = v->block.kind;
        a.owner_uid = map_author(v->block.updated_by, key_.public_key, opt_.nobody_uid);
        a.mtime_us = v->timestamp;
        a.nlink = v->block.kind == NodeKind::directory
                      ? 1 + children_locked(inode).size()
                      : 1;
        return a;
    }

    Result<std::vector<DirEntry>> readdir(uint64_t inode) const {
        std::shared_lock lk(m_);
        auto v = view_locked(inode);
        if (!v) return Result<std::vector<DirEntry>>::err(Errc::not_found, "no such inode");
        if (v->block.kind != NodeKind::directory)
            return Result<std::vector<DirEntry>>::err(Errc::not_a_directory, "not a directory");
        std::vector<DirEntry> out;
        for (const auto& [name, child] : children_locked(inode)) {
            auto cv = view_locked(child);
            if (!cv) continue;
            out.push_back(DirEntry{name, child, cv->block.kind});
        }
        return out;
    }

    Result<Bytes> read(uint64_t inode, uint64_t offset, uint64_t length) {
        InodeBlock block;
        {
            std::shared_lock lk(m_);
            auto v = view_locked(inode);
            if (!v) return Result<Bytes>::err(Errc::not_found, "no such inode");
            if (v->block.kind != NodeKind::file)
                return Result<Bytes>::err(Errc::is_a_directory, "not a file");
            block = v->block;
        }
        if (offset >= block.size || length == 0) return Bytes{};
        uint64_t end = std::min(block.size, offset + length);
        Bytes out;
        out.reserve(end - offset);
        for (uint64_t idx = offset / block_size_; idx * block_size_ < end; idx++) {
            auto payload = data_payload(block.data_hashes.at(idx));
            if (!payload) return Result<Bytes>::err(payload.error().code,
                                                    payload.error().message);
            uint64_t block_start = idx * block_size_;
            uint64_t valid = std::min<uint64_t>(block.size - block_start, block_size_);
            const Bytes& bytes = payload.value();
            uint64_t lo = offset > block_start ? offset - block_start : 0;
            uint64_t hi = std::min<uint64_t>(end - block_start, valid);
            for (uint64_t i = lo; i < hi; i++)
                out.push_back(i < bytes.size() ? bytes[i] : 0);
        }
        return out;
    }

    Result<uint64_t> write(uint64_t inode, uint64_t offset, ByteSpan data,
                           std::optional<uint32_t> uid = std::nullopt) {
        if (auto st = writable(); !st) return Result<uint64_t>::err(st.error().code,
                                                                    st.error().message);
        uint32_t caller = uid.value_or(opt_.uid);
        if (data.empty()) return uint64_t{0};

        InodeBlock base;
        {
            std::shared_lock lk(m_);
            auto v = view_locked(inode);
            if (!v) return Result<uint64_t>::err(Errc::not_found, "no such inode");
            if (v->block.kind != NodeKind::file)
                return Result<uint64_t>::err(Errc::is_a_directory, "not a file");
            if (opt_.advisory_checks && !acl_permits(v->block.acl, identity(caller)))
                return Result<uint64_t>::err(Errc::permission_denied,
                                             "caller not in inode ACL");
            base = v->block;
        }

        uint64_t old_size = base.size;
        uint64_t new_size = std::max(old_size, offset + data.size());
        uint64_t n_new = blocks_for(new_size);
        uint64_t dirty_from = std::min(offset, old_size) / block_size_;
        uint64_t dirty_to = (offset + data.size() - 1) / block_size_; // inclusive

        std::vector<Digest> hashes = base.data_hashes;
        hashes.resize(n_new);

        std::vector<Journal::NewEntry> batch;
        for (uint64_t idx = dirty_from; idx <= dirty_to; idx++) {
            uint64_t block_start = idx * block_size_;
            uint64_t block_len = idx + 1 == n_new ? new_size - block_start : block_size_;
            Bytes content(block_len, 0);
            if (block_start < old_size && idx < base.data_hashes.size()) {
                auto old_payload = data_payload(base.data_hashes[idx]);
                if (!old_payload)
                    return Result<uint64_t>::err(old_payload.error().code,
                                                 old_payload.error().message);
                uint64_t old_valid = std::min<uint64_t>(old_size - block_start, block_size_);
                for (uint64_t i = 0; i < std::min<uint64_t>(old_valid, block_len); i++)
                    content[i] = i < old_payload.value().size() ? old_payload.value()[i] : 0;
            }
            // Overlay the written range.
            uint64_t from = offset > block_start ? offset : block_start;
            uint64_t to = std::min(offset + data.size(), block_start + block_len);
            for (uint64_t b = from; b < to; b++) content[b - block_start] = data[b - offset];

            auto cfs = build_cfs_block(DataBlock{std::move(content)}, identity(caller), key_);
            if (!cfs) return Result<uint64_t>::err(cfs.error().code, cfs.error().message);
            hashes[idx] = cfs.value().inner_digest();
            batch.push_back(Journal::NewEntry{inode, idx, OpKind::data, cfs.take()});
        }

        InodeBlock next = base;
        next.size = new_size;
        next.data_hashes = std::move(hashes);
        next.updated_by = identity(caller);
        auto st = enqueue_inode_op(inode, std::move(next), OpKind::write, caller,
                                   std::move(batch));
        if (!st) return Result<uint64_t>::err(st.error().code, st.error().message);
        return static_cast<uint64_t>(data.size());
    }

    Result<uint64_t> create(uint64_t parent, std::string name, NodeKind kind,
                            std::optional<uint32_t> uid = std::nullopt) {
        if (auto st = writable(); !st) return Result<uint64_t>::err(st.error().code,
                                                                    st.error().message);
        uint32_t caller = uid.value_or(opt_.uid);
        if (name.empty() || name.find('/') != std::string::npos)
            return Result<uint64_t>::err(Errc::bad_request, "invalid name");

        InodeBlock parent_block;
        {
            std::shared_lock lk(m_);
            auto pv = view_locked(parent);
            if (!pv) return Result<uint64_t>::err(Errc::not_found, "no such parent");
            if (pv->block.kind != NodeKind::directory)
                return Result<uint64_t>::err(Errc::not_a_directory, "parent is not a directory");
            if (opt_.advisory_checks && !acl_permits(pv->block.acl, identity(caller)))
                return Result<uint64_t>::err(Errc::permission_denied,
                                             "caller not in parent ACL");
            if (lookup_child_locked(parent, name))
                return Result<uint64_t>::err(Errc::exists, "name already exists");
            parent_block = pv->block;
        }

        auto acl = inherit_acl(parent_block);
        if (!acl) return Result<uint64_t>::err(acl.error().code, acl.error().message);

        uint64_t inode = allocate_inode();
        InodeBlock block;
        block.inode_number = inode;
        block.parent_inode = parent;
        block.name = std::move(name);
        block.kind = kind;
        block.acl = acl.take();
        block.updated_by = identity(caller);
        auto st = enqueue_inode_op(inode, std::move(block), OpKind::create, caller, {});
        if (!st) return Result<uint64_t>::err(st.error().code, st.error().message);
        return inode;
    }

    Status unlink(uint64_t parent, std::string_view name,
                  std::optional<uint32_t> uid = std::nullopt) {
        if (auto st = writable(); !st) return st;
        uint32_t caller = uid.value_or(opt_.uid);

        uint64_t child;
        InodeBlock child_block;
        {
            std::shared_lock lk(m_);
            auto pv = view_locked(parent);
            if (!pv) return Status::err(Errc::not_found, "no such parent");
            if (pv->block.kind != NodeKind::directory)
                return Status::err(Errc::not_a_directory, "parent is not a directory");
            if (opt_.advisory_checks && !acl_permits(pv->block.acl, identity(caller)))
                return Status::err(Errc::permission_denied, "caller not in parent ACL");
            auto c = lookup_child_locked(parent, name);
            if (!c) return Status::err(Errc::not_found, "no such name");
            child = *c;
            auto cv = view_locked(child);
            if (!cv) return Status::err(Errc::not_found, "no such inode");
            if (cv->block.kind == NodeKind::directory && !children_locked(child).empty())
                return Status::err(Errc::conflict, "directory not empty");
            child_block = cv->block;
        }

        child_block.deleted = true;
        child_block.updated_by = identity(caller);
        return enqueue_inode_op(child, std::move(child_block), OpKind::unlink, caller, {});
    }

    // chown: members of an inode's ACL may replace it.
    Status set_acl(uint64_t inode, Acl new_acl, std::optional<uint32_t> uid = std::nullopt) {
        if (auto st = writable(); !st) return st;
        uint32_t caller = uid.value_or(opt_.uid);
        canonicalize_acl(new_acl);
        if (new_acl.empty()) return Status::err(Errc::bad_request, "ACL cannot be empty");

        InodeBlock block;
        {
            std::shared_lock lk(m_);
            auto v = view_locked(inode);
            if (!v) return Status::err(Errc::not_found, "no such inode");
            if (opt_.advisory_checks && !acl_permits(v->block.acl, identity(caller)))
                return Status::err(Errc::permission_denied, "caller not in current ACL");
            block = v->block;
        }
        block.acl = std::move(new_acl);
        block.updated_by = identity(caller);
        return enqueue_inode_op(inode, std::move(block), OpKind::set_acl, caller, {});
    }

    Status rename(uint64_t inode, uint64_t new_parent, std::string new_name,
                  std::optional<uint32_t> uid = std::nullopt) {
        if (auto st = writable(); !st) return st;
        uint32_t caller = uid.value_or(opt_.uid);
        if (new_name.empty() || new_name.find('/') != std::string::npos)
            return Status::err(Errc::bad_request, "invalid name");

        InodeBlock block;
        {
            std::shared_lock lk(m_);
            auto v = view_locked(inode);
            if (!v) return Status::err(Errc::not_found, "no such inode");
            if (opt_.advisory_checks && !acl_permits(v->block.acl, identity(caller)))
                return Status::err(Errc::permission_denied, "caller not in inode ACL");
            auto pv = view_locked(new_parent);
            if (!pv) return Status::err(Errc::not_found, "no such parent");
            if (pv->block.kind != NodeKind::directory)
                return Status::err(Errc::not_a_directory, "new parent is not a directory");
            if (auto taken = lookup_child_locked(new_parent, new_name);
                taken && *taken != inode)
                return Status::err(Errc::exists, "name already exists");
            block = v->block;
        }
        block.parent_inode = new_parent;
        block.name = std::move(new_name);
        block.updated_by = identity(caller);
        return enqueue_inode_op(inode, std::move(block), OpKind::rename, caller, {});
    }

    // ------------------------------------------------------------------
    // Flush: synchronously drain the journal (also runs in the background).
    FlushReport flush() {
        FlushReport report;
        if (!journal_) return report;
        std::lock_guard lk(flush_m_);
        for (;;) {
            report.rounds++;
            size_t before = journal_->pending_count();
            bool transient = flush_round(report);
            size_t after = journal_->pending_count();
            if (transient) {
                report.transient_failure = true;
                break;
            }
            if (after == 0) break;
            if (after >= before) break; // only parked work left
        }
        report.clean = journal_->pending_count() == 0 && journal_->parked_count() == 0 &&
                       !report.transient_failure;
        return report;
    }

    // ------------------------------------------------------------------
    // Introspection used by tools and tests.

    const KeyPair& key() const { return key_; }
    Identity identity(uint32_t uid) const { return Identity{key_.public_key, uid}; }
    Identity self_identity() const { return identity(opt_.uid); }
    uint32_t block_size() const { return block_size_; }
    const ClientOptions& options() const { return opt_; }
    Journal* journal() { return journal_.get(); }
    BlockCache& block_cache() { return bcache_; }
    bool read_only() const { return read_only_; }

    std::optional<Digest> cache_digest(uint64_t inode) const {
        std::shared_lock lk(m_);
        return cache_.current_digest(inode);
    }

    Result<std::vector<Digest>> data_hashes_of(uint64_t inode) const {
        std::shared_lock lk(m_);
        auto v = view_locked(inode);
        if (!v) return Result<std::vector<Digest>>::err(Errc::not_found, "no such inode");
        if (v->block.kind != NodeKind::file)
            return Result<std::vector<Digest>>::err(Errc::is_a_directory, "not a file");
        return v->block.data_hashes;
    }

    Result<Acl> acl_of(uint64_t inode) const {
        std::shared_lock lk(m_);
        auto v = view_locked(inode);
        if (!v) return Result<Acl>::err(Errc::not_found, "no such inode");
        return v->block.acl;
    }

    // Clears parked (terminally rejected) journal entries for an inode.
    void drop_parked(uint64_t inode) {
        if (!journal_) return;
        uint64_t max_seq = 0;
        for (const auto& e : journal_->parked_entries_for(inode))
            max_seq = std::max(max_seq, e.sequence);
        if (max_seq) journal_->purge(inode, max_seq);
        std::unique_lock lk(m_);
        refresh_overlay_locked(inode);
    }

    std::vector<uint64_t> cached_inodes() const {
        std::shared_lock lk(m_);
        return cache_.all_inodes();
    }

    uint64_t rejected_block_count() const {
        std::shared_lock lk(m_);
        return cache_.rejected_blocks;
    }

    // Direct, cache-bypassing verified fetch (benchmarks read this way).
    Result<Bytes> fetch_data_block_uncached(const Digest& digest) {
        auto fetched = fetch_verified(*data_capsule_, data_rk_, digest, opt_.crypto);
        if (!fetched) return Result<Bytes>::err(fetched.error().code,
                                                fetched.error().message);
        if (fetched.value().outer.inner.body_kind != BodyKind::data)
            return Result<Bytes>::err(Errc::integrity, "not a data block");
        return fetched.value().outer.inner.data.payload;
    }

    // Crash-injection hook: invoked right before every middleware put with
    // the count of puts already completed by this client.
    void set_put_hook(std::function<void(uint64_t)> hook) { put_hook_ = std::move(hook); }

    uint64_t puts_completed() const { return puts_done_.load(std::memory_order_relaxed); }

private:
    struct View {
        InodeBlock block;
        uint64_t timestamp = 0;
        std::optional<Digest> digest; // nullopt while only pending in the journal
    };

    Status writable() const {
        if (read_only_) return Status::err(Errc::read_only, "read-only mount");
        if (!mounted_) return Status::err(Errc::unavailable, "not mounted");
        return ok_status();
    }

    static uint32_t derive_prefix(const Digest& key_id) {
        uint32_t p = 0;
        std::memcpy(&p, key_id.v.data(), sizeof(p));
        return p == 0 ? 1 : p;
    }

    uint64_t blocks_for(uint64_t size) const {
        return (size + block_size_ - 1) / block_size_;
    }

    uint64_t next_low_locked() const {
        uint64_t used = cache_.max_inode_with_prefix(inode_prefix_);
        uint64_t low = used ? (used & 0xffffffffu) + 1 : 1;
        if (journal_) {
            for (const auto& e : journal_->live_entries()) {
                if (static_cast<uint32_t>(e.inode >> 32) == inode_prefix_)
                    low = std::max(low, (e.inode & 0xffffffffu) + 1);
            }
        }
        return low;
    }

    uint64_t allocate_inode() {
        uint64_t low = next_inode_low_.fetch_add(1, std::memory_order_relaxed);
        return (static_cast<uint64_t>(inode_prefix_) << 32) | low;
    }

    // ------------------------------------------------------------------
    // View resolution: pending journal intent shadows the committed cache.

    std::optional<View> view_locked(uint64_t inode) const {
        auto ov = overlay_.find(inode);
        if (ov != overlay_.end()) {
            if (ov->second.deleted) return std::nullopt;
            View v;
            v.block = ov->second;
            auto committed = cache_.current_any(inode);
            v.timestamp = committed ? committed->timestamp : wall_micros();
            return v;
        }
        auto c = cache_.current(inode);
        if (!c) return std::nullopt;
        return View{c->block, c->timestamp, c->digest};
    }

    std::optional<uint64_t> lookup_child_locked(uint64_t parent, std::string_view name) const {
        // Pending renames/creates/deletes first.
        for (const auto& [inode, block] : overlay_) {
            if (block.deleted) continue;
            if (block.parent_inode == parent && block.name == name) return inode;
        }
        auto c = cache_.lookup_child(parent, name);
        if (c && shadowed_away(*c, parent, name)) return std::nullopt;
        return c;
    }

    bool shadowed_away(uint64_t inode, uint64_t parent, std::string_view name) const {
        auto ov = overlay_.find(inode);
        if (ov == overlay_.end()) return false;
        return ov->second.deleted || ov->second.parent_inode != parent ||
               ov->second.name != name;
    }

    std::map<std::string, uint64_t> children_locked(uint64_t parent) const {
        std::map<std::string, uint64_t> out;
        for (const auto& [name, child] : cache_.list_children(parent)) {
            if (!shadowed_away(child, parent, name)) out[name] = child;
        }
        for (const auto& [inode, block] : overlay_) {
            if (block.deleted || block.parent_inode != parent) continue;
            out[block.name] = inode;
        }
        return out;
    }

    Result<uint64_t> lookup_locked(std::string_view path) const {
        if (path.empty() || path[0] != '/')
            return Result<uint64_t>::err(Errc::bad_request, "path must be absolute");
        uint64_t cur = kRootInode;
        size_t i = 1;
        while (i < path.size()) {
            size_t j = path.find('/', i);
            if (j == std::string_view::npos) j = path.size();
            std::string_view part = path.substr(i, j - i);
            i = j + 1;
            if (part.empty()) continue;
            auto v = view_locked(cur);
            if (!v) return Result<uint64_t>::err(Errc::not_found, "missing component");
            if (v->block.kind != NodeKind::directory)
                return Result<uint64_t>::err(Errc::not_a_directory,
                                             "path component is not a directory");
            auto child = lookup_child_locked(cur, part);
            if (!child) return Result<uint64_t>::err(Errc::not_found,
                                                     "no such path component");
            cur = *child;
        }
        if (!view_locked(cur))
            return Result<uint64_t>::err(Errc::not_found, "no such inode");
        return cur;
    }

    void refresh_overlay_locked(uint64_t inode) {
        if (!journal_) return;
        auto pending = journal_->latest_inode_entry(inode);
        if (pending)
            overlay_[inode] = pending->body.inode;
        else
            overlay_.erase(inode);
    }

    // ------------------------------------------------------------------
    // Verified ingest shared by rebuild and subscription. Returns false when
    // the block failed its inner (client) signature check.

    bool ingest_locked(const Digest& digest, const OuterBlock& outer) {
        if (outer.inner.body_kind != BodyKind::inode) return true;
        if (opt_.crypto && !verify_cfs_block(outer.inner)) {
            CFS_LOG_WARN("excluding block %s: client signature invalid", digest.hex().c_str());
            return false;
        }
        bool genesis = outer.prev_hash == kGenesisHash &&
                       outer.inner.inode.inode_number == kRootInode;
        cache_.apply(CachedInode{digest, outer.timestamp, outer.inner.inode}, genesis);
        return true;
    }

    void subscription_loop() {
        while (!stopping_.load()) {
            auto ev = sub_stream_->next(200);
            if (!ev) continue;
            auto fetched = fetch_verified(*inode_capsule_, inode_rk_, ev->digest, opt_.crypto);
            std::unique_lock lk(m_);
            if (!fetched) {
                cache_.rejected_blocks++;
                CFS_LOG_WARN("subscription: excluding block %s: %s", ev->digest.hex().c_str(),
                             fetched.error().message.c_str());
                continue;
            }
            if (!ingest_locked(ev->digest, fetched.value().outer)) cache_.rejected_blocks++;
        }
    }

    // ------------------------------------------------------------------
    // Data path: journal first, then cache tiers, then verified server fetch.

    Result<Bytes> data_payload(const Digest& digest) {
        if (journal_) {
            if (auto p = journal_->find_payload(digest)) return *p;
        }
        if (auto cached = bcache_.get(digest)) {
            auto outer = OuterBlock::decode_canonical(*cached);
            if (outer && outer->inner.body_kind == BodyKind::data)
                return outer->inner.data.payload;
        }
        auto fetched = fetch_verified(*data_capsule_, data_rk_, digest, opt_.crypto);
        if (!fetched)
            return Result<Bytes>::err(
                fetched.error().code == Errc::not_found ? Errc::not_found : Errc::integrity,
                "data block " + digest.hex() + ": " + fetched.error().message);
        if (fetched.value().outer.inner.body_kind != BodyKind::data)
            return Result<Bytes>::err(Errc::integrity, "expected a data block");
        bcache_.put(digest, fetched.value().plaintext);
        return fetched.value().outer.inner.data.payload;
    }

    // ------------------------------------------------------------------
    // Journal enqueue for namespace mutations.

    Status enqueue_inode_op(uint64_t inode, InodeBlock block, OpKind op, uint32_t caller,
                            std::vector<Journal::NewEntry> data_batch) {
        {
            std::shared_lock lk(m_);
            auto committed = cache_.current_any(inode);
            block.version_of = committed ? std::optional(committed->digest) : std::nullopt;
        }
        auto cfs = build_cfs_block(std::move(block), identity(caller), key_);
        if (!cfs) return Status::err(cfs.error().code, cfs.error().message);
        data_batch.push_back(Journal::NewEntry{inode, kInodeEntry, op, cfs.take()});
        auto seqs = journal_->enqueue_batch(std::move(data_batch));
        if (!seqs) return Status::err(seqs.error().code, seqs.error().message);
        {
            std::unique_lock lk(m_);
            refresh_overlay_locked(inode);
        }
        flush_cv_.notify_all();
        return ok_status();
    }

    // ------------------------------------------------------------------
    // Flush machinery

    void flush_worker() {
        std::unique_lock lk(flush_worker_m_);
        int backoff_ms = 50;
        while (!stopping_.load()) {
            flush_cv_.wait_for(lk, std::chrono::milliseconds(backoff_ms), [&] {
                return stopping_.load() || (journal_ && journal_->pending_count() > 0);
            });
            if (stopping_.load()) break;
            if (!journal_ || journal_->pending_count() == 0) continue;
            FlushReport report;
            {
                std::lock_guard flk(flush_m_);
                bool transient = flush_round(report);
                backoff_ms = transient ? std::min(backoff_ms * 2, 2000) : 50;
            }
        }
    }

    // One pass over all pending inodes. Returns true on a transient
    // (retryable) transport failure.
    bool flush_round(FlushReport& report) {
        if (opt_.coalesce) journal_->coalesce();
        for (uint64_t inode : journal_->pending_inodes()) {
            if (stopping_.load() && !mounted_) return false;
            auto snapshot = journal_->flush_snapshot(inode);
            const auto& data_entries = snapshot.data;
            std::unordered_map<Digest, Digest, DigestHash> finals;
            bool parked = false;
            for (const auto& e : data_entries) {
                PutRequest req;
                req.capsule_id = data_capsule_->capsule_id();
                req.cfs_bytes = e.body.canonical_bytes();
                req.claimed_inode = inode;
                before_put();
                PutResult r = middleware_->put(req);
                if (r.ok()) {
                    journal_->mark_committed(e.sequence, r.digest);
                    finals[e.placeholder] = r.digest;
                    puts_done_.fetch_add(1, std::memory_order_relaxed);
                    continue;
                }
                if (r.status == PutStatus::unavailable) return true;
                park_inode(inode, r.status, report);
                parked = true;
                break;
            }
            if (parked) continue;
            // Entries committed in an earlier round whose inode commit is
            // still outstanding also resolve placeholders.
            for (const auto& [ph, fin] : journal_->committed_renames(inode)) finals[ph] = fin;

            if (!snapshot.inode_entry) {
                uint64_t max_seq = 0;
                for (const auto& e : data_entries) max_seq = std::max(max_seq, e.sequence);
                if (max_seq) journal_->purge(inode, max_seq);
                continue;
            }
            bool transient = commit_inode_entry(inode, *snapshot.inode_entry, finals, report);
            if (transient) return true;
        }
        return false;
    }

    bool commit_inode_entry(uint64_t inode, const JournalEntry& entry,
                            const std::unordered_map<Digest, Digest, DigestHash>& finals,
                            FlushReport& report) {
        for (int attempt = 0; attempt <= opt_.stale_retry_limit; attempt++) {
            std::optional<CachedInode> committed;
            {
                std::shared_lock lk(m_);
                committed = cache_.current_any(inode);
            }
            InodeBlock next = rebase(entry, committed);
            for (auto& h : next.data_hashes) {
                auto it = finals.find(h);
                if (it != finals.end()) h = it->second;
            }
            // No placeholder may escape to the middleware.
            if (journal_->references_pending_placeholder(inode, next.data_hashes)) {
                CFS_LOG_ERROR("inode %llu still references a pending placeholder; parking",
                              static_cast<unsigned long long>(inode));
                park_inode(inode, PutStatus::bad_request, report);
                return false;
            }

            uint32_t caller = next.updated_by.uid;
            auto cfs = build_cfs_block(next, identity(caller), key_);
            if (!cfs) {
                park_inode(inode, PutStatus::bad_request, report);
                return false;
            }
            journal_->rewrite_body(entry.sequence, cfs.value());

            PutRequest req;
            req.capsule_id = inode_capsule_->capsule_id();
            req.cfs_bytes = cfs.value().canonical_bytes();
            req.claimed_inode = inode;
            req.expected_version = next.version_of;
            before_put();
            PutResult r = middleware_->put(req);

            if (r.ok()) {
                journal_->mark_committed(entry.sequence, r.digest);
                {
                    // The signed copy is what the capsule actually holds.
                    std::unique_lock lk(m_);
                    cache_.apply(CachedInode{r.digest, r.timestamp, cfs.value().inode});
                }
                journal_->purge(inode, entry.sequence);
                {
                    std::unique_lock lk(m_);
                    refresh_overlay_locked(inode);
                }
                puts_done_.fetch_add(1, std::memory_order_relaxed);
                return false;
            }
            if (r.status == PutStatus::unavailable) return true;
            if (r.status == PutStatus::stale_inode) {
                if (r.current_version) refresh_inode_version(*r.current_version);
                continue;
            }
            park_inode(inode, r.status, report);
            return false;
        }
        CFS_LOG_ERROR("deferred write conflict: inode %llu lost CAS %d times; parked",
                      static_cast<unsigned long long>(inode), opt_.stale_retry_limit + 1);
        park_inode(inode, PutStatus::stale_inode, report);
        return false;
    }

    // Reapplies the entry's intent on top of the committed winner. With no
    // interference this reproduces the enqueued block exactly.
    InodeBlock rebase(const JournalEntry& entry, const std::optional<CachedInode>& committed) {
        InodeBlock ours = entry.body.inode;
        if (!committed) {
            ours.version_of = std::nullopt;
            return ours;
        }
        const InodeBlock& base = committed->block;
        InodeBlock next;
        switch (entry.op) {
            case OpKind::unlink:
                next = base;
                next.deleted = true;
                break;
            case OpKind::set_acl:
                next = base;
                next.acl = ours.acl;
                break;
            case OpKind::rename:
                next = base;
                next.name = ours.name;
                next.parent_inode = ours.parent_inode;
                break;
            case OpKind::create:
            case OpKind::write:
            default:
                // Content intent wins whole-block; a concurrent ACL change is
                // preserved rather than reverted.
                next = ours;
                next.acl = base.acl;
                next.deleted = false;
                break;
        }
        next.updated_by = ours.updated_by;
        next.version_of = committed->digest;
        return next;
    }

    void refresh_inode_version(const Digest& digest) {
        auto fetched = fetch_verified(*inode_capsule_, inode_rk_, digest, opt_.crypto);
        if (!fetched) return;
        std::unique_lock lk(m_);
        ingest_locked(digest, fetched.value().outer);
    }

    void park_inode(uint64_t inode, PutStatus why, FlushReport& report) {
        report.parked.emplace(inode, why);
        for (const auto& e : journal_->pending_data_entries(inode)) journal_->park(e.sequence);
        if (auto ie = journal_->latest_inode_entry(inode)) journal_->park(ie->sequence);
        std::unique_lock lk(m_);
        refresh_overlay_locked(inode);
    }

    void before_put() {
        if (put_hook_) put_hook_(puts_done_.load(std::memory_order_relaxed));
    }

    KeyPair key_;
    CapsuleReadKey inode_rk_;
    CapsuleReadKey data_rk_;
    std::shared_ptr<CapsuleService> inode_capsule_;
    std::shared_ptr<CapsuleService> data_capsule_;
    std::shared_ptr<MiddlewareService> middleware_;
    ClientOptions opt_;
    uint32_t block_size_ = kDefaultBlockSize;
    bool read_only_ = false;
    bool mounted_ = false;
    uint32_t inode_prefix_ = 1;

    mutable std::shared_mutex m_;
    InodeCache cache_;
    std::map<uint64_t, InodeBlock> overlay_; // pending inode intent by inode number

    std::unique_ptr<Journal> journal_;
    BlockCache bcache_;

    std::mutex flush_m_;        // serializes flush rounds
    std::mutex flush_worker_m_; // worker wait lock
    std::condition_variable flush_cv_;
    std::thread flush_thread_;

    std::unique_ptr<SubscriptionStream> sub_stream_;
    std::thread sub_thread_;
    std::atomic<bool> stopping_{false};

    std::atomic<uint64_t> next_inode_low_{1};
    std::atomic<uint64_t> puts_done_{0};
    std::function<void(uint64_t)> put_hook_;
};

} // namespace cfs
