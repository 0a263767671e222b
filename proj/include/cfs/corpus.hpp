#pragma once

// Deterministic corpus of randomized blocks for cross-process codec checks:
// the same seed must yield byte-identical canonical encodings and mutually
// verifiable signatures in independent runs.

#include "cfs/blocks.hpp"

#include <random>

namespace cfs {

struct CorpusItem {
    Bytes canonical;
    Signature signature;
    Bytes public_key;
};

namespace detail_corpus {

inline Bytes rng_bytes(std::mt19937_64& rng, size_t n) {
    Bytes out(n);
    for (auto& b : out) b = static_cast<uint8_t>(rng());
    return out;
}

inline Digest rng_digest(std::mt19937_64& rng) {
    Digest d;
    for (auto& b : d.v) b = static_cast<uint8_t>(rng());
    return d;
}

} // namespace detail_corpus

inline std::vector<CorpusItem> generate_corpus(uint64_t seed, size_t count) {
    std::mt19937_64 rng(seed);
    std::vector<CorpusItem> out;
    out.reserve(count);
    for (size_t i = 0; i < count; i++) {
        Bytes kp_seed = detail_corpus::rng_bytes(rng, 32);
        KeyPair kp = KeyPair::from_seed(kp_seed);
        Identity author{kp.public_key, static_cast<uint32_t>(rng() % 100000)};

        Result<CfsBlock> block = [&]() -> Result<CfsBlock> {
            if (rng() % 2 == 0) {
                DataBlock d{detail_corpus::rng_bytes(rng, rng() % 512)};
                return build_cfs_block(std::move(d), author, kp);
            }
            InodeBlock ib;
            ib.inode_number = 1 + rng() % (1ull << 40);
            ib.parent_inode = rng() % (1ull << 40);
            size_t name_len = 1 + rng() % 24;
            ib.name.resize(name_len);
            for (auto& ch : ib.name) ch = static_cast<char>('a' + rng() % 26);
            ib.kind = rng() % 4 == 0 ? NodeKind::directory : NodeKind::file;
            ib.deleted = rng() % 8 == 0;
            if (ib.kind == NodeKind::file) {
                size_t nblocks = rng() % 6;
                for (size_t b = 0; b < nblocks; b++)
                    ib.data_hashes.push_back(detail_corpus::rng_digest(rng));
                if (nblocks > 0)
                    ib.size = (nblocks - 1) * 512 + 1 + rng() % 512;
            }
            size_t acl_n = 1 + rng() % 3;
            for (size_t a = 0; a < acl_n; a++) {
                KeyPair member = KeyPair::from_seed(detail_corpus::rng_bytes(rng, 32));
                ib.acl.push_back(
                    AclEntry{member.public_key, static_cast<uint32_t>(rng() % 65536)});
            }
            if (rng() % 2 == 0) ib.version_of = detail_corpus::rng_digest(rng);
            ib.updated_by = author;
            return build_cfs_block(std::move(ib), author, kp);
        }();
        if (!block) continue;
        out.push_back(CorpusItem{block.value().canonical_bytes(),
                                 block.value().client_signature, kp.public_key});
    }
    return out;
}

inline Bytes encode_corpus(const std::vector<CorpusItem>& items) {
    Encoder e;
    e.u32(static_cast<uint32_t>(items.size()));
    for (const auto& it : items) {
        e.bytes(it.canonical);
        it.signature.encode(e);
        e.bytes(it.public_key);
    }
    return e.take();
}

inline std::optional<std::vector<CorpusItem>> decode_corpus(ByteSpan data) {
    Decoder d(data);
    uint32_t n = d.u32();
    std::vector<CorpusItem> out;
    out.reserve(n);
    for (uint32_t i = 0; i < n && d.valid(); i++) {
        CorpusItem it;
        it.canonical = d.bytes();
        it.signature = Signature::decode(d);
        it.public_key = d.bytes();
        out.push_back(std::move(it));
    }
    if (!d.at_end()) return std::nullopt;
    return out;
}

// Every item's signature must verify over exactly its canonical bytes, and
// the embedded canonical bytes must re-decode and re-encode identically.
inline Result<size_t> verify_corpus(const std::vector<CorpusItem>& items) {
    size_t n = 0;
    for (const auto& it : items) {
        auto block = CfsBlock::decode_canonical(it.canonical);
        if (!block) return Result<size_t>::err(Errc::integrity, "undecodable corpus item");
        if (block->canonical_bytes() != it.canonical)
            return Result<size_t>::err(Errc::integrity, "re-encode mismatch");
        if (!verify_cfs_block(*block))
            return Result<size_t>::err(Errc::integrity, "signature failed verification");
        n++;
    }
    return n;
}

} // namespace cfs
