#pragma once

// Append-order binary Merkle tree over block digests. Odd nodes at any level
// pair with themselves, so appending only touches the rightmost path and
// every historical root is reproducible from a prefix of the leaf sequence.

#include "cfs/blocks.hpp"

namespace cfs {

struct ProofStep {
    Digest sibling;
    bool sibling_on_right = false;
};

struct MerkleProof {
    Digest leaf;
    uint64_t leaf_index = 0;
    uint64_t tree_size = 0;
    std::vector<ProofStep> path;
    Digest root;
    Signature root_signature;

    void encode(Encoder& e) const {
        encode_digest(e, leaf);
        e.u64(leaf_index);
        e.u64(tree_size);
        e.u16(static_cast<uint16_t>(path.size()));
        for (const auto& s : path) {
            encode_digest(e, s.sibling);
            e.u8(s.sibling_on_right ? 1 : 0);
        }
        encode_digest(e, root);
        root_signature.encode(e);
    }

    static MerkleProof decode(Decoder& d) {
        MerkleProof p;
        p.leaf = decode_digest(d);
        p.leaf_index = d.u64();
        p.tree_size = d.u64();
        uint16_t n = d.u16();
        p.path.reserve(n);
        for (uint16_t i = 0; i < n; i++) {
            ProofStep s;
            s.sibling = decode_digest(d);
            s.sibling_on_right = d.u8() == 1;
            p.path.push_back(s);
        }
        p.root = decode_digest(d);
        p.root_signature = Signature::decode(d);
        return p;
    }
};

inline Digest merkle_combine(const Digest& left, const Digest& right) {
    Encoder e;
    e.u8('N'); // interior-node domain separation
    encode_digest(e, left);
    encode_digest(e, right);
    return sha256(e.view());
}

// Folds the leaf through the sibling path; the result must equal the root.
inline Digest merkle_fold(const Digest& leaf, const std::vector<ProofStep>& path) {
    Digest acc = leaf;
    for (const auto& s : path)
        acc = s.sibling_on_right ? merkle_combine(acc, s.sibling)
                                 : merkle_combine(s.sibling, acc);
    return acc;
}

class MerkleTree {
public:
    uint64_t size() const { return levels_.empty() ? 0 : levels_[0].size(); }

    Digest root() const {
        if (levels_.empty()) return kGenesisHash; // empty-tree sentinel
        return levels_.back().front();
    }

    void append(const Digest& leaf) {
        if (levels_.empty()) levels_.emplace_back();
        levels_[0].push_back(leaf);
        // Only the rightmost node of each level can change.
        size_t level = 0;
        while (levels_[level].size() > 1) {
            size_t parent_count = (levels_[level].size() + 1) / 2;
            if (level + 1 >= levels_.size()) levels_.emplace_back();
            levels_[level + 1].resize(parent_count);
            const auto& cur = levels_[level]; // taken after any reallocation above
            size_t last = parent_count - 1;
            const Digest& left = cur[2 * last];
            const Digest& right = (2 * last + 1 < cur.size()) ? cur[2 * last + 1] : cur[2 * last];
            levels_[level + 1][last] = merkle_combine(left, right);
            level++;
        }
        levels_.resize(level + 1);
    }

    MerkleProof proof(uint64_t index) const {
        MerkleProof p;
        p.tree_size = size();
        p.leaf_index = index;
        if (index >= p.tree_size) return p;
        p.leaf = levels_[0][index];
        size_t i = index;
        for (size_t level = 0; level + 1 < levels_.size(); level++) {
            const auto& cur = levels_[level];
            size_t sib = i ^ 1;
            ProofStep step;
            step.sibling = sib < cur.size() ? cur[sib] : cur[i]; // odd node pairs with itself
            step.sibling_on_right = (i % 2) == 0;
            p.path.push_back(step);
            i /= 2;
        }
        p.root = root();
        return p;
    }

    // Root of the tree over the first `prefix` leaves.
    static Digest root_over(std::span<const Digest> leaves) {
        MerkleTree t;
        for (const auto& l : leaves) t.append(l);
        return t.root();
    }

    static MerkleProof proof_over(std::span<const Digest> leaves, uint64_t index) {
        MerkleTree t;
        for (const auto& l : leaves) t.append(l);
        return t.proof(index);
    }

private:
    std::vector<std::vector<Digest>> levels_;
};

// Structural check: path folds to the signed root and the root signature
// verifies under the capsule's trusted key. Acceptance policy about
// historical tree sizes is the caller's.
inline bool verify_proof(const Digest& expected_leaf, const MerkleProof& proof,
                         const Digest& capsule_id, ByteSpan trusted_root_key, bool crypto) {
    if (proof.leaf != expected_leaf) return false;
    if (proof.tree_size == 0 || proof.leaf_index >= proof.tree_size) return false;
    if (merkle_fold(proof.leaf, proof.path) != proof.root) return false;
    if (!crypto) return true;
    return verify_payload(trusted_root_key,
                          root_signing_payload(capsule_id, proof.tree_size, proof.root),
                          proof.root_signature);
}

} // namespace cfs
