#pragma once

// Shared test fixtures: scratch directories, quick capsule/key factories,
// and a hand-rolled middleware-style block wrapper used where tests need
// authentic outer blocks without a full stack.

#include "cfs/capsule.hpp"
#include "cfs/stack.hpp"

#include <random>

namespace cfs::test {

struct TempDir {
    std::filesystem::path path;

    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::string tmpl = (base / "cfs-test-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        char* got = ::mkdtemp(buf.data());
        if (!got) throw std::runtime_error("mkdtemp failed");
        path = got;
    }

    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }

    std::filesystem::path operator/(const std::string& p) const { return path / p; }
};

inline Bytes random_bytes(std::mt19937_64& rng, size_t n) {
    Bytes out(n);
    for (auto& b : out) b = static_cast<uint8_t>(rng());
    return out;
}

inline Digest random_digest(std::mt19937_64& rng) {
    Digest d;
    for (auto& b : d.v) b = static_cast<uint8_t>(rng());
    return d;
}

// A capsule write key plus matching meta, as init would mint them.
struct TestCapsule {
    CapsuleWriteKey wk;
    CapsuleMeta meta;
    CapsuleReadKey rk;

    explicit TestCapsule(const std::string& label = "test", uint32_t block_size = 512) {
        crypto_init();
        wk.signer = KeyPair::generate();
        wk.sym_key.resize(kSymKeyBytes);
        randombytes_buf(wk.sym_key.data(), wk.sym_key.size());
        meta.label = label;
        meta.block_size = block_size;
        meta.nonce.resize(16);
        randombytes_buf(meta.nonce.data(), meta.nonce.size());
        meta.verify_key = wk.signer.public_key;
        wk.capsule_id = meta.capsule_id();
        rk = read_key_of(wk);
    }
};

// Wraps, signs and root-signs a block the way the middleware would, chaining
// onto `prev` at tree position `size_after - 1`.
struct WrapChain {
    const TestCapsule& cap;
    Digest head = kGenesisHash;
    MerkleTree tree;
    uint64_t next_ts = 1;

    explicit WrapChain(const TestCapsule& c) : cap(c) {}

    struct Wrapped {
        Bytes encrypted;
        SignedRoot root;
        Digest digest;
    };

    Wrapped wrap(CfsBlock inner, std::optional<uint64_t> ts = std::nullopt,
                 bool crypto = true) {
        auto w = wrap_outer_block(cap.wk, head, ts.value_or(next_ts++), std::move(inner),
                                  crypto);
        Digest digest = w.value().outer.digest();
        tree.append(digest);
        SignedRoot root;
        root.tree_size = tree.size();
        root.root = tree.root();
        if (crypto) {
            auto sig = sign_payload(cap.wk.signer,
                                    root_signing_payload(cap.wk.capsule_id, root.tree_size,
                                                         root.root));
            root.signature = sig.take();
        }
        head = digest;
        return Wrapped{w.value().encrypted, root, digest};
    }
};

inline CfsBlock make_data_cfs(const KeyPair& key, uint32_t uid, Bytes payload) {
    auto b = build_cfs_block(DataBlock{std::move(payload)}, Identity{key.public_key, uid},
                             key);
    return b.take();
}

inline InodeBlock make_file_inode(uint64_t inode, uint64_t parent, std::string name,
                                  const KeyPair& owner, uint32_t uid) {
    InodeBlock ib;
    ib.inode_number = inode;
    ib.parent_inode = parent;
    ib.name = std::move(name);
    ib.kind = NodeKind::file;
    ib.acl = {AclEntry{owner.public_key, uid}};
    ib.updated_by = Identity{owner.public_key, uid};
    return ib;
}

// Boots an initialized in-process stack in a scratch directory.
struct TestStack {
    TempDir dir;
    std::unique_ptr<InprocStack> stack;

    explicit TestStack(InitOptions init = {}, StackOptions opts = {}) {
        auto st = init_fs(dir.path, init);
        if (!st) throw std::runtime_error("init_fs: " + st.error().message);
        auto booted = InprocStack::boot(dir.path, opts);
        if (!booted) throw std::runtime_error("boot: " + booted.error().message);
        stack = booted.take();
    }

    InprocStack* operator->() { return stack.get(); }

    // Mints an extra identity and registers it with the stack.
    KeyPair add_client(const std::string& name, uint32_t uid) {
        KeyPair kp = KeyPair::generate();
        auto path = dir / ("keys/" + name + ".key");
        if (!save_keypair(path, kp).ok()) throw std::runtime_error("save_keypair failed");
        stack->register_client(MountClient{name, path.string(), uid});
        return kp;
    }
};

} // namespace cfs::test
