#pragma once

// Client-side view of the inode capsule: every verified inode block ever
// seen, the per-inode winner under the shared conflict rule, and the
// directory-children index derived from the winners. A snapshot bound makes
// the same structure serve point-in-time mounts.

#include "cfs/middleware.hpp" // supersedes()

#include <map>
#include <set>

namespace cfs {

struct CachedInode {
    Digest digest;
    uint64_t timestamp = 0;
    InodeBlock block;
};

class InodeCache {
public:
    explicit InodeCache(std::optional<uint64_t> snapshot_ts = std::nullopt)
        : snapshot_ts_(snapshot_ts) {}

    // Feeds one verified block into the view. The genesis root block is
    // always admitted so a snapshot at ts=0 still has a root directory.
    // Returns true when the block became (or stayed) some inode's winner.
    bool apply(const CachedInode& node, bool genesis = false) {
        if (snapshot_ts_ && node.timestamp > *snapshot_ts_ && !genesis) return false;
        by_digest_[node.digest] = node;

        uint64_t n = node.block.inode_number;
        auto it = current_.find(n);
        if (it != current_.end()) {
            const CachedInode& cur = by_digest_[it->second];
            if (!supersedes(node.timestamp, node.digest, cur.timestamp, cur.digest))
                return false;
            unlink_child(cur.block);
        }
        current_[n] = node.digest;
        link_child(node.block);
        return true;
    }

    std::optional<CachedInode> current(uint64_t inode) const {
        auto it = current_.find(inode);
        if (it == current_.end()) return std::nullopt;
        auto bit = by_digest_.find(it->second);
        if (bit == by_digest_.end()) return std::nullopt;
        if (bit->second.block.deleted) return std::nullopt;
        return bit->second;
    }

    // Includes tombstoned winners; used by writers that need version digests.
    std::optional<CachedInode> current_any(uint64_t inode) const {
        auto it = current_.find(inode);
        if (it == current_.end()) return std::nullopt;
        auto bit = by_digest_.find(it->second);
        if (bit == by_digest_.end()) return std::nullopt;
        return bit->second;
    }

    std::optional<Digest> current_digest(uint64_t inode) const {
        auto it = current_.find(inode);
        if (it == current_.end()) return std::nullopt;
        return it->second;
    }

    // Resolves a name within a directory. Two concurrent creates can commit
    // the same name under different inodes; the conflict rule applied to the
    // candidates keeps every client's resolution identical.
    std::optional<uint64_t> lookup_child(uint64_t parent, std::string_view name) const {
        auto it = children_.find(parent);
        if (it == children_.end()) return std::nullopt;
        std::optional<uint64_t> winner;
        uint64_t w_ts = 0;
        Digest w_digest;
        for (const auto& [child_name, child] : it->second) {
            if (child_name != name) continue;
            auto node = current(child);
            if (!node) continue;
            if (!winner || supersedes(node->timestamp, node->digest, w_ts, w_digest)) {
                winner = child;
                w_ts = node->timestamp;
                w_digest = node->digest;
            }
        }
        return winner;
    }

    // Directory listing with the same per-name winner rule as lookup_child.
    std::vector<std::pair<std::string, uint64_t>> list_children(uint64_t parent) const {
        std::map<std::string, uint64_t> by_name;
        std::map<std::string, std::pair<uint64_t, Digest>> rank;
        auto it = children_.find(parent);
        if (it == children_.end()) return {};
        for (const auto& [name, child] : it->second) {
            auto node = current(child);
            if (!node) continue;
            auto rit = rank.find(name);
            if (rit == rank.end() ||
                supersedes(node->timestamp, node->digest, rit->second.first,
                           rit->second.second)) {
                rank[name] = {node->timestamp, node->digest};
                by_name[name] = child;
            }
        }
        return {by_name.begin(), by_name.end()};
    }

    std::vector<uint64_t> all_inodes() const {
        std::vector<uint64_t> out;
        out.reserve(current_.size());
        for (const auto& [n, _] : current_) out.push_back(n);
        return out;
    }

    // Highest inode number with the given high-32 prefix, over every version
    // ever seen (tombstones included); allocation must never reuse numbers.
    uint64_t max_inode_with_prefix(uint32_t prefix) const {
        uint64_t best = 0;
        for (const auto& [d, node] : by_digest_) {
            uint64_t n = node.block.inode_number;
            if (static_cast<uint32_t>(n >> 32) == prefix) best = std::max(best, n);
        }
        return best;
    }

    bool has_digest(const Digest& d) const { return by_digest_.contains(d); }

    size_t version_count() const { return by_digest_.size(); }
    size_t inode_count() const { return current_.size(); }

    std::optional<uint64_t> snapshot_ts() const { return snapshot_ts_; }

    uint64_t rejected_blocks = 0; // verification failures observed during ingest

private:
    void link_child(const InodeBlock& b) {
        if (b.inode_number == kRootInode || b.deleted) return;
        children_[b.parent_inode].insert({b.name, b.inode_number});
    }

    void unlink_child(const InodeBlock& b) {
        if (b.inode_number == kRootInode) return;
        auto it = children_.find(b.parent_inode);
        if (it == children_.end()) return;
        it->second.erase({b.name, b.inode_number});
        if (it->second.empty()) children_.erase(it);
    }

    std::optional<uint64_t> snapshot_ts_;
    std::unordered_map<Digest, CachedInode, DigestHash> by_digest_;
    std::map<uint64_t, Digest> current_;
    std::map<uint64_t, std::set<std::pair<std::string, uint64_t>>> children_;
};

} // namespace cfs
