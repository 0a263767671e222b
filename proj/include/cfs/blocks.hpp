#pragma once

// The four-layer block model: fixed-size data blocks and inode blocks,
// wrapped in a client-signed CFS block, wrapped in a middleware-signed (and
// encrypted) capsule block chained by previous-hash.
//
// Signed payloads carry a one-byte domain tag ('C' client layer, 'O' outer
// layer, 'R' merkle root) so a signature can never be replayed across layers.

#include "cfs/codec.hpp"
#include "cfs/crypto.hpp"

#include <algorithm>

namespace cfs {

inline constexpr uint64_t kRootInode = 1;
inline constexpr uint64_t kNoParent = 0;   // parent sentinel of the root inode
inline constexpr uint32_t kDefaultNobodyUid = 65534;
inline constexpr uint32_t kDefaultBlockSize = 512;

enum class NodeKind : uint8_t { file = 0, directory = 1 };

// ---------------------------------------------------------------------------
// Identity and ACLs

struct Identity {
    Bytes public_key;
    uint32_t uid = 0;

    Digest key_id() const { return key_id_of(public_key); }

    void encode(Encoder& e) const {
        e.bytes(public_key);
        e.u32(uid);
    }

    static Identity decode(Decoder& d) {
        Identity i;
        i.public_key = d.bytes();
        i.uid = d.u32();
        return i;
    }

    bool operator==(const Identity&) const = default;
};

struct AclEntry {
    Bytes public_key;
    uint32_t uid = 0;

    Digest key_id() const { return key_id_of(public_key); }

    void encode(Encoder& e) const {
        e.bytes(public_key);
        e.u32(uid);
    }

    static AclEntry decode(Decoder& d) {
        AclEntry a;
        a.public_key = d.bytes();
        a.uid = d.u32();
        return a;
    }

    bool operator==(const AclEntry&) const = default;
};

using Acl = std::vector<AclEntry>;

// Canonical ACL order: sorted by (key_id, uid), duplicates removed, so the
// encoding is independent of insertion order.
inline void canonicalize_acl(Acl& acl) {
    std::sort(acl.begin(), acl.end(), [](const AclEntry& a, const AclEntry& b) {
        Digest ka = a.key_id(), kb = b.key_id();
        if (ka != kb) return ka < kb;
        return a.uid < b.uid;
    });
    acl.erase(std::unique(acl.begin(), acl.end()), acl.end());
}

inline bool acl_permits(const Acl& acl, const Identity& who) {
    for (const auto& e : acl)
        if (e.uid == who.uid && e.public_key == who.public_key) return true;
    return false;
}

inline bool acl_contains_key(const Acl& acl, const Digest& key_id) {
    for (const auto& e : acl)
        if (e.key_id() == key_id) return true;
    return false;
}

inline void encode_acl(Encoder& e, const Acl& acl) {
    e.u32(static_cast<uint32_t>(acl.size()));
    for (const auto& a : acl) a.encode(e);
}

inline Acl decode_acl(Decoder& d) {
    uint32_t n = d.u32();
    Acl acl;
    if (n > d.remaining()) { // each entry is > 1 byte; cheap bound check
        d.fail();
        return acl;
    }
    acl.reserve(n);
    for (uint32_t i = 0; i < n && d.valid(); i++) acl.push_back(AclEntry::decode(d));
    return acl;
}

// ---------------------------------------------------------------------------
// Inode and data blocks

struct InodeBlock {
    uint64_t inode_number = 0;
    uint64_t parent_inode = kNoParent;
    std::string name;
    uint64_t size = 0;
    NodeKind kind = NodeKind::file;
    bool deleted = false; // tombstone: append-only capsules cannot remove records
    std::vector<Digest> data_hashes;
    Acl acl;
    Identity updated_by;
    std::optional<Digest> version_of; // prior version of this inode, null for the first

    void encode(Encoder& e) const {
        e.u64(inode_number);
        e.u64(parent_inode);
        e.str(name);
        e.u64(size);
        e.u8(static_cast<uint8_t>(kind));
        e.u8(deleted ? 1 : 0);
        e.u32(static_cast<uint32_t>(data_hashes.size()));
        for (const auto& h : data_hashes) encode_digest(e, h);
        encode_acl(e, acl);
        updated_by.encode(e);
        encode_opt_digest(e, version_of);
    }

    static InodeBlock decode(Decoder& d) {
        InodeBlock b;
        b.inode_number = d.u64();
        b.parent_inode = d.u64();
        b.name = d.str();
        b.size = d.u64();
        uint8_t k = d.u8();
        if (k > 1) d.fail();
        b.kind = static_cast<NodeKind>(k);
        uint8_t del = d.u8();
        if (del > 1) d.fail();
        b.deleted = del == 1;
        uint32_t n = d.u32();
        if (static_cast<uint64_t>(n) * 32 > d.remaining()) {
            d.fail();
            return b;
        }
        b.data_hashes.reserve(n);
        for (uint32_t i = 0; i < n && d.valid(); i++) b.data_hashes.push_back(decode_digest(d));
        b.acl = decode_acl(d);
        b.updated_by = Identity::decode(d);
        b.version_of = decode_opt_digest(d);
        return b;
    }

    // Structural invariants; block_size 0 skips the size/data-hash bound.
    Status validate(uint32_t block_size) const {
        if (inode_number == 0) return Status::err(Errc::bad_request, "inode number 0");
        if (acl.empty()) return Status::err(Errc::bad_request, "empty ACL");
        if (kind == NodeKind::directory) {
            if (!data_hashes.empty() || size != 0)
                return Status::err(Errc::bad_request, "directory with data");
        } else if (block_size > 0) {
            uint64_t n = data_hashes.size();
            if (size > n * block_size)
                return Status::err(Errc::bad_request, "size exceeds data blocks");
            if (n > 0 && size <= (n - 1) * block_size)
                return Status::err(Errc::bad_request, "trailing data block unused");
        }
        return ok_status();
    }

    bool operator==(const InodeBlock&) const = default;
};

struct DataBlock {
    Bytes payload;

    void encode(Encoder& e) const { e.bytes(payload); }

    static DataBlock decode(Decoder& d) { return DataBlock{d.bytes()}; }

    bool operator==(const DataBlock&) const = default;
};

// Split file content into fixed-size blocks; every block except possibly the
// last is exactly block_size bytes long.
inline std::vector<DataBlock> make_data_blocks(ByteSpan content, uint32_t block_size) {
    std::vector<DataBlock> out;
    if (block_size == 0) return out;
    out.reserve((content.size() + block_size - 1) / block_size);
    for (size_t off = 0; off < content.size(); off += block_size) {
        size_t n = std::min<size_t>(block_size, content.size() - off);
        out.push_back(DataBlock{Bytes(content.begin() + off, content.begin() + off + n)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// CFS block: inode or data payload plus author, signed by the client.

enum class BodyKind : uint8_t { inode = 0, data = 1 };

struct CfsBlock {
    BodyKind body_kind = BodyKind::data;
    InodeBlock inode; // valid when body_kind == inode
    DataBlock data;   // valid when body_kind == data

    Identity author;
    Signature client_signature;

    Bytes signing_payload() const {
        Encoder e;
        e.u8('C');
        e.u8(static_cast<uint8_t>(body_kind));
        Encoder body;
        if (body_kind == BodyKind::inode)
            inode.encode(body);
        else
            data.encode(body);
        e.bytes(body.view());
        author.encode(e);
        return e.take();
    }

    Bytes canonical_bytes() const {
        Encoder e;
        e.raw(signing_payload());
        client_signature.encode(e);
        return e.take();
    }

    // Digest of the canonical client-layer bytes. Used as the journal
    // placeholder until the middleware produces the final outer digest.
    Digest inner_digest() const { return sha256(canonical_bytes()); }

    static std::optional<CfsBlock> decode_canonical(ByteSpan bytes) {
        Decoder d(bytes);
        CfsBlock b;
        if (d.u8() != 'C') return std::nullopt;
        uint8_t k = d.u8();
        if (k > 1) return std::nullopt;
        b.body_kind = static_cast<BodyKind>(k);
        Bytes body = d.bytes();
        {
            Decoder bd(body);
            if (b.body_kind == BodyKind::inode)
                b.inode = InodeBlock::decode(bd);
            else
                b.data = DataBlock::decode(bd);
            if (!bd.at_end()) return std::nullopt;
        }
        b.author = Identity::decode(d);
        b.client_signature = Signature::decode(d);
        if (!d.at_end()) return std::nullopt;
        return b;
    }

    bool operator==(const CfsBlock&) const = default;
};

inline Result<CfsBlock> build_cfs_block(InodeBlock body, Identity author, const KeyPair& key) {
    if (key.public_key != author.public_key)
        return Result<CfsBlock>::err(Errc::bad_request, "signing key does not match author");
    CfsBlock b;
    b.body_kind = BodyKind::inode;
    canonicalize_acl(body.acl);
    b.inode = std::move(body);
    b.author = std::move(author);
    auto sig = sign_payload(key, b.signing_payload());
    if (!sig) return Result<CfsBlock>::err(sig.error().code, sig.error().message);
    b.client_signature = sig.take();
    return b;
}

inline Result<CfsBlock> build_cfs_block(DataBlock body, Identity author, const KeyPair& key) {
    if (key.public_key != author.public_key)
        return Result<CfsBlock>::err(Errc::bad_request, "signing key does not match author");
    CfsBlock b;
    b.body_kind = BodyKind::data;
    b.data = std::move(body);
    b.author = std::move(author);
    auto sig = sign_payload(key, b.signing_payload());
    if (!sig) return Result<CfsBlock>::err(sig.error().code, sig.error().message);
    b.client_signature = sig.take();
    return b;
}

// False (never throws) on any malformed or mismatching signature.
inline bool verify_cfs_block(const CfsBlock& b) {
    return verify_payload(b.author.public_key, b.signing_payload(), b.client_signature);
}

// Child ACLs inherit from the parent directory by default; the copy is
// independent, later edits to either side do not affect the other.
inline Result<Acl> inherit_acl(const InodeBlock& parent) {
    if (parent.kind != NodeKind::directory)
        return Result<Acl>::err(Errc::not_a_directory, "ACL inheritance from non-directory");
    return Acl(parent.acl);
}

// ---------------------------------------------------------------------------
// Outer capsule block: chained, timestamped, signed and encrypted by the
// middleware. The block digest is the hash of the canonical plaintext of the
// full signed structure; encryption happens after signing.

struct OuterBlock {
    Digest prev_hash;
    uint64_t timestamp = 0; // microseconds; 0 only on the capsule-init genesis block
    CfsBlock inner;
    Signature middleware_signature;

    Bytes signing_payload() const {
        Encoder e;
        e.u8('O');
        encode_digest(e, prev_hash);
        e.u64(timestamp);
        e.bytes(inner.canonical_bytes());
        return e.take();
    }

    Bytes canonical_bytes() const {
        Encoder e;
        e.raw(signing_payload());
        middleware_signature.encode(e);
        return e.take();
    }

    Digest digest() const { return sha256(canonical_bytes()); }

    static std::optional<OuterBlock> decode_canonical(ByteSpan bytes) {
        Decoder d(bytes);
        OuterBlock b;
        if (d.u8() != 'O') return std::nullopt;
        b.prev_hash = decode_digest(d);
        b.timestamp = d.u64();
        Bytes inner_bytes = d.bytes();
        auto inner = CfsBlock::decode_canonical(inner_bytes);
        if (!inner) return std::nullopt;
        b.inner = std::move(*inner);
        b.middleware_signature = Signature::decode(d);
        if (!d.at_end()) return std::nullopt;
        return b;
    }
};

// Merkle root signing payload, bound to the capsule and tree size.
inline Bytes root_signing_payload(const Digest& capsule_id, uint64_t tree_size,
                                  const Digest& root) {
    Encoder e;
    e.u8('R');
    encode_digest(e, capsule_id);
    e.u64(tree_size);
    encode_digest(e, root);
    return e.take();
}

// Builds the signed outer block and its ciphertext. With crypto disabled the
// signature is empty and the "ciphertext" is the canonical plaintext.
struct WrappedBlock {
    OuterBlock outer;
    Bytes plaintext; // canonical bytes of outer
    Bytes encrypted; // what travels to / lives on the server
};

inline Result<WrappedBlock> wrap_outer_block(const CapsuleWriteKey& wk, const Digest& prev_hash,
                                             uint64_t timestamp, CfsBlock inner, bool crypto) {
    WrappedBlock w;
    w.outer.prev_hash = prev_hash;
    w.outer.timestamp = timestamp;
    w.outer.inner = std::move(inner);
    if (crypto) {
        auto sig = sign_payload(wk.signer, w.outer.signing_payload());
        if (!sig) return Result<WrappedBlock>::err(sig.error().code, sig.error().message);
        w.outer.middleware_signature = sig.take();
    } else {
        w.outer.middleware_signature.signer_key_id = wk.signer.key_id;
    }
    w.plaintext = w.outer.canonical_bytes();
    w.encrypted = crypto ? aead_encrypt(wk.sym_key, w.plaintext, wk.capsule_id.span())
                         : w.plaintext;
    return w;
}

// Decrypt + structurally decode an outer block; verifies the AEAD tag and the
// middleware signature when crypto is on. Does not check the digest against
// anything — callers compare against the digest they asked for.
struct VerifiedOuter {
    OuterBlock outer;
    Bytes plaintext;
    Digest digest;
};

inline Result<VerifiedOuter> unwrap_outer_block(const CapsuleReadKey& rk, ByteSpan encrypted,
                                                bool crypto) {
    Bytes plain;
    if (crypto) {
        auto p = aead_decrypt(rk.sym_key, encrypted, rk.capsule_id.span());
        if (!p)
            return Result<VerifiedOuter>::err(Errc::decrypt_failure,
                                              "outer block failed authenticated decryption");
        plain = std::move(*p);
    } else {
        plain.assign(encrypted.begin(), encrypted.end());
    }
    auto outer = OuterBlock::decode_canonical(plain);
    if (!outer)
        return Result<VerifiedOuter>::err(Errc::bad_request, "malformed outer block");
    if (crypto &&
        !verify_payload(rk.verify_key, outer->signing_payload(), outer->middleware_signature))
        return Result<VerifiedOuter>::err(Errc::integrity, "middleware signature invalid");
    VerifiedOuter v;
    v.digest = outer->digest();
    v.outer = std::move(*outer);
    v.plaintext = std::move(plain);
    return v;
}

} // namespace cfs
