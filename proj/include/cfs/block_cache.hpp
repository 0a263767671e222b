#pragma once

// Hybrid LRU cache for verified block bytes, keyed by digest. The memory
// tier evicts into a content-addressed disk tier (one file per digest), so
// everything the cache hands back is self-verifying: hash(bytes) == key.

#include "cfs/crypto.hpp"

#include <filesystem>
#include <list>
#include <mutex>
#include <unordered_map>

namespace cfs {

class BlockCache {
public:
    BlockCache(size_t memory_capacity, size_t disk_capacity, std::filesystem::path disk_dir)
        : mem_capacity_(memory_capacity), disk_capacity_(disk_capacity),
          dir_(std::move(disk_dir)) {
        if (disk_capacity_ > 0 && !dir_.empty()) {
            std::filesystem::create_directories(dir_);
            // Existing spill files are adopted in arbitrary recency order.
            for (const auto& f : std::filesystem::directory_iterator(dir_)) {
                auto d = Digest::from_hex(f.path().filename().string());
                if (!d) continue;
                disk_lru_.push_front(*d);
                disk_index_[*d] = disk_lru_.begin();
            }
        }
    }

    std::optional<Bytes> get(const Digest& digest) {
        std::lock_guard lk(m_);
        auto it = mem_index_.find(digest);
        if (it != mem_index_.end()) {
            mem_lru_.splice(mem_lru_.begin(), mem_lru_, it->second);
            hits_++;
            return it->second->second;
        }
        auto dit = disk_index_.find(digest);
        if (dit != disk_index_.end()) {
            auto data = detail::read_file(file_of(digest));
            if (data && sha256(data.value()) == digest) {
                hits_++;
                promote_locked(digest, data.value());
                return data.take();
            }
            // Corrupt or missing spill file: drop the index entry.
            disk_lru_.erase(dit->second);
            disk_index_.erase(dit);
            std::error_code ec;
            std::filesystem::remove(file_of(digest), ec);
        }
        misses_++;
        return std::nullopt;
    }

    // Inserts verified bytes; refuses anything whose hash does not match.
    bool put(const Digest& digest, Bytes bytes) {
        if (sha256(bytes) != digest) return false;
        std::lock_guard lk(m_);
        insert_mem_locked(digest, std::move(bytes));
        return true;
    }

    bool contains(const Digest& digest) const {
        std::lock_guard lk(m_);
        return mem_index_.contains(digest) || disk_index_.contains(digest);
    }

    size_t memory_size() const {
        std::lock_guard lk(m_);
        return mem_lru_.size();
    }

    size_t disk_size() const {
        std::lock_guard lk(m_);
        return disk_lru_.size();
    }

    uint64_t hits() const { return hits_; }
    uint64_t misses() const { return misses_; }

private:
    std::filesystem::path file_of(const Digest& d) const { return dir_ / d.hex(); }

    void insert_mem_locked(const Digest& digest, Bytes bytes) {
        auto it = mem_index_.find(digest);
        if (it != mem_index_.end()) {
            mem_lru_.splice(mem_lru_.begin(), mem_lru_, it->second);
            return;
        }
        mem_lru_.emplace_front(digest, std::move(bytes));
        mem_index_[digest] = mem_lru_.begin();
        while (mem_lru_.size() > mem_capacity_) {
            auto& [old_digest, old_bytes] = mem_lru_.back();
            spill_locked(old_digest, old_bytes);
            mem_index_.erase(old_digest);
            mem_lru_.pop_back();
        }
    }

    // An entry lives in exactly one tier; promotion removes the spill file so
    // the two tiers together behave as a single LRU stack of size mem+disk.
    void promote_locked(const Digest& digest, const Bytes& bytes) {
        auto dit = disk_index_.find(digest);
        if (dit != disk_index_.end()) {
            disk_lru_.erase(dit->second);
            disk_index_.erase(dit);
            std::error_code ec;
            std::filesystem::remove(file_of(digest), ec);
        }
        insert_mem_locked(digest, bytes);
    }

    void spill_locked(const Digest& digest, const Bytes& bytes) {
        if (disk_capacity_ == 0 || dir_.empty()) return;
        auto dit = disk_index_.find(digest);
        if (dit != disk_index_.end()) {
            disk_lru_.splice(disk_lru_.begin(), disk_lru_, dit->second);
            return;
        }
        if (!detail::write_file_atomic(file_of(digest), bytes)) return;
        disk_lru_.push_front(digest);
        disk_index_[digest] = disk_lru_.begin();
        while (disk_lru_.size() > disk_capacity_) {
            Digest victim = disk_lru_.back();
            disk_lru_.pop_back();
            disk_index_.erase(victim);
            std::error_code ec;
            std::filesystem::remove(file_of(victim), ec);
        }
    }

    size_t mem_capacity_;
    size_t disk_capacity_;
    std::filesystem::path dir_;

    mutable std::mutex m_;
    std::list<std::pair<Digest, Bytes>> mem_lru_;
    std::unordered_map<Digest, std::list<std::pair<Digest, Bytes>>::iterator, DigestHash>
        mem_index_;
    std::list<Digest> disk_lru_;
    std::unordered_map<Digest, std::list<Digest>::iterator, DigestHash> disk_index_;

    uint64_t hits_ = 0;
    uint64_t misses_ = 0;
};

} // namespace cfs
