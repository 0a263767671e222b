#pragma once

// Role configuration files (JSON, one per role) and filesystem
// initialization: mints both capsules, all key material, and the genesis
// root directory.

#include "cfs/capsule.hpp"
#include "cfs/middleware.hpp"

#include <json.hpp>

#include <fstream>

namespace cfs {

using nlohmann::json;

struct CapsuleEndpoint {
    std::string label;
    std::string capsule_id_hex;
    uint32_t block_size = kDefaultBlockSize;
    std::string store_path;
    std::string read_key_path;
    std::string address; // host:port when served over TCP

    Digest capsule_id() const {
        auto d = Digest::from_hex(capsule_id_hex);
        return d ? *d : Digest{};
    }
};

inline void to_json(json& j, const CapsuleEndpoint& c) {
    j = json{{"label", c.label},
             {"capsule_id", c.capsule_id_hex},
             {"block_size", c.block_size},
             {"store_path", c.store_path},
             {"read_key_path", c.read_key_path},
             {"address", c.address}};
}

inline void from_json(const json& j, CapsuleEndpoint& c) {
    j.at("label").get_to(c.label);
    j.at("capsule_id").get_to(c.capsule_id_hex);
    j.at("block_size").get_to(c.block_size);
    j.at("store_path").get_to(c.store_path);
    j.at("read_key_path").get_to(c.read_key_path);
    c.address = j.value("address", "");
}

struct ServerConfig {
    CapsuleEndpoint capsule;
    std::string listen = "127.0.0.1:0";
    bool crypto = true;
    bool durable = true;
    bool redundant_inner_verify = false;
    std::string follower_of; // leader address; empty for a primary
};

inline void to_json(json& j, const ServerConfig& c) {
    j = json{{"capsule", c.capsule},
             {"listen", c.listen},
             {"crypto", c.crypto},
             {"durable", c.durable},
             {"redundant_inner_verify", c.redundant_inner_verify},
             {"follower_of", c.follower_of}};
}

inline void from_json(const json& j, ServerConfig& c) {
    j.at("capsule").get_to(c.capsule);
    c.listen = j.value("listen", "127.0.0.1:0");
    c.crypto = j.value("crypto", true);
    c.durable = j.value("durable", true);
    c.redundant_inner_verify = j.value("redundant_inner_verify", false);
    c.follower_of = j.value("follower_of", "");
}

struct MiddlewareConfig {
    std::string listen = "127.0.0.1:0";
    CapsuleEndpoint inode;
    CapsuleEndpoint data;
    std::string inode_write_key_path;
    std::string data_write_key_path;
    std::string admin_key_path;
    std::string revocation_path;
    bool crypto = true;
    bool scrub_on_revoke = true;
};

inline void to_json(json& j, const MiddlewareConfig& c) {
    j = json{{"listen", c.listen},
             {"inode", c.inode},
             {"data", c.data},
             {"inode_write_key_path", c.inode_write_key_path},
             {"data_write_key_path", c.data_write_key_path},
             {"admin_key_path", c.admin_key_path},
             {"revocation_path", c.revocation_path},
             {"crypto", c.crypto},
             {"scrub_on_revoke", c.scrub_on_revoke}};
}

inline void from_json(const json& j, MiddlewareConfig& c) {
    c.listen = j.value("listen", "127.0.0.1:0");
    j.at("inode").get_to(c.inode);
    j.at("data").get_to(c.data);
    j.at("inode_write_key_path").get_to(c.inode_write_key_path);
    j.at("data_write_key_path").get_to(c.data_write_key_path);
    j.at("admin_key_path").get_to(c.admin_key_path);
    c.revocation_path = j.value("revocation_path", "");
    c.crypto = j.value("crypto", true);
    c.scrub_on_revoke = j.value("scrub_on_revoke", true);
}

struct MountClient {
    std::string name = "A";
    std::string key_path;
    uint32_t uid = 1000;
};

inline void to_json(json& j, const MountClient& c) {
    j = json{{"name", c.name}, {"key_path", c.key_path}, {"uid", c.uid}};
}

inline void from_json(const json& j, MountClient& c) {
    j.at("name").get_to(c.name);
    j.at("key_path").get_to(c.key_path);
    c.uid = j.value("uid", 1000u);
}

struct MountConfig {
    MountClient client;
    std::vector<MountClient> extra_clients; // additional identities for workloads
    CapsuleEndpoint inode;
    CapsuleEndpoint data;
    std::string middleware_address;
    std::string journal_dir;
    std::string cache_dir;
    uint32_t nobody_uid = kDefaultNobodyUid;
    size_t cache_memory_blocks = 1024;
    size_t cache_disk_blocks = 8192;
    bool coalesce = true;
    bool advisory_checks = true;
    bool crypto = true;
    int stale_retry_limit = 5;
};

inline void to_json(json& j, const MountConfig& c) {
    j = json{{"client", c.client},
             {"extra_clients", c.extra_clients},
             {"inode", c.inode},
             {"data", c.data},
             {"middleware_address", c.middleware_address},
             {"journal_dir", c.journal_dir},
             {"cache_dir", c.cache_dir},
             {"nobody_uid", c.nobody_uid},
             {"cache_memory_blocks", c.cache_memory_blocks},
             {"cache_disk_blocks", c.cache_disk_blocks},
             {"coalesce", c.coalesce},
             {"advisory_checks", c.advisory_checks},
             {"crypto", c.crypto},
             {"stale_retry_limit", c.stale_retry_limit}};
}

inline void from_json(const json& j, MountConfig& c) {
    j.at("client").get_to(c.client);
    if (j.contains("extra_clients")) j.at("extra_clients").get_to(c.extra_clients);
    j.at("inode").get_to(c.inode);
    j.at("data").get_to(c.data);
    c.middleware_address = j.value("middleware_address", "");
    j.at("journal_dir").get_to(c.journal_dir);
    j.at("cache_dir").get_to(c.cache_dir);
    c.nobody_uid = j.value("nobody_uid", kDefaultNobodyUid);
    c.cache_memory_blocks = j.value("cache_memory_blocks", size_t{1024});
    c.cache_disk_blocks = j.value("cache_disk_blocks", size_t{8192});
    c.coalesce = j.value("coalesce", true);
    c.advisory_checks = j.value("advisory_checks", true);
    c.crypto = j.value("crypto", true);
    c.stale_retry_limit = j.value("stale_retry_limit", 5);
}

struct FsConfig {
    uint32_t block_size = kDefaultBlockSize;
    bool crypto = true;
    std::string signature_scheme = "ed25519";
    std::string aead = "xchacha20poly1305";
    std::string hash = "sha256";
    std::string inode_capsule_id;
    std::string data_capsule_id;
};

inline void to_json(json& j, const FsConfig& c) {
    j = json{{"block_size", c.block_size},
             {"crypto", c.crypto},
             {"signature_scheme", c.signature_scheme},
             {"aead", c.aead},
             {"hash", c.hash},
             {"inode_capsule_id", c.inode_capsule_id},
             {"data_capsule_id", c.data_capsule_id}};
}

inline void from_json(const json& j, FsConfig& c) {
    j.at("block_size").get_to(c.block_size);
    c.crypto = j.value("crypto", true);
    c.signature_scheme = j.value("signature_scheme", "ed25519");
    c.aead = j.value("aead", "xchacha20poly1305");
    c.hash = j.value("hash", "sha256");
    j.at("inode_capsule_id").get_to(c.inode_capsule_id);
    j.at("data_capsule_id").get_to(c.data_capsule_id);
}

template <typename T>
Result<T> load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) return Result<T>::err(Errc::not_found, "cannot open " + path.string());
    try {
        json j = json::parse(f);
        return j.get<T>();
    } catch (const std::exception& e) {
        return Result<T>::err(Errc::bad_request,
                              "config " + path.string() + ": " + e.what());
    }
}

template <typename T>
Status save_config(const std::filesystem::path& path, const T& cfg) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) return Status::err(Errc::io, "cannot write " + path.string());
    f << json(cfg).dump(2) << "\n";
    return ok_status();
}

// ---------------------------------------------------------------------------
// Filesystem initialization

struct InitOptions {
    uint32_t block_size = kDefaultBlockSize;
    bool crypto = true;
    uint32_t owner_uid = 1000;
    bool force = false;
};

inline Status init_fs(const std::filesystem::path& dir, const InitOptions& opt = {}) {
    namespace fs = std::filesystem;
    if (fs::exists(dir / "fs.json") && !opt.force)
        return Status::err(Errc::exists,
                           dir.string() + " already holds a filesystem (use --force)");
    fs::create_directories(dir / "keys");
    fs::create_directories(dir / "capsules");
    fs::create_directories(dir / "journal");
    fs::create_directories(dir / "cache");

    KeyPair client = KeyPair::generate();
    KeyPair admin = KeyPair::generate();

    auto make_write_key = [&](const std::string& label) {
        CapsuleWriteKey wk;
        wk.signer = KeyPair::generate();
        wk.sym_key.resize(kSymKeyBytes);
        randombytes_buf(wk.sym_key.data(), wk.sym_key.size());
        CapsuleMeta meta;
        meta.label = label;
        meta.block_size = opt.block_size;
        meta.nonce.resize(16);
        randombytes_buf(meta.nonce.data(), meta.nonce.size());
        meta.verify_key = wk.signer.public_key;
        wk.capsule_id = meta.capsule_id();
        return std::make_pair(wk, meta);
    };
    auto [inode_wk, inode_meta] = make_write_key("inode");
    auto [data_wk, data_meta] = make_write_key("data");

    if (auto st = save_keypair(dir / "keys/client.key", client); !st) return st;
    if (auto st = save_keypair(dir / "keys/admin.key", admin); !st) return st;
    if (auto st = save_write_key(dir / "keys/inode.write.key", inode_wk); !st) return st;
    if (auto st = save_write_key(dir / "keys/data.write.key", data_wk); !st) return st;
    if (auto st = save_read_key(dir / "keys/inode.read.key", read_key_of(inode_wk)); !st)
        return st;
    if (auto st = save_read_key(dir / "keys/data.read.key", read_key_of(data_wk)); !st)
        return st;

    // Fresh stores. --force replaces any previous capsule files.
    fs::remove(dir / "capsules/inode.capsule");
    fs::remove(dir / "capsules/data.capsule");
    CapsuleOptions copt;
    copt.crypto = opt.crypto;
    auto inode_store = CapsuleStore::open(dir / "capsules/inode.capsule", inode_meta,
                                          read_key_of(inode_wk), copt);
    if (!inode_store) return Status::err(inode_store.error().code,
                                         inode_store.error().message);
    auto data_store = CapsuleStore::open(dir / "capsules/data.capsule", data_meta,
                                         read_key_of(data_wk), copt);
    if (!data_store) return Status::err(data_store.error().code, data_store.error().message);

    // Genesis root directory: inode 1, written at initialization with
    // timestamp 0 so a snapshot at ts=0 sees exactly the empty root.
    InodeBlock root;
    root.inode_number = kRootInode;
    root.parent_inode = kNoParent;
    root.kind = NodeKind::directory;
    root.acl = {AclEntry{admin.public_key, 0}, AclEntry{client.public_key, opt.owner_uid}};
    root.updated_by = Identity{client.public_key, opt.owner_uid};
    auto cfs_block = build_cfs_block(std::move(root),
                                     Identity{client.public_key, opt.owner_uid}, client);
    if (!cfs_block) return Status::err(cfs_block.error().code, cfs_block.error().message);
    auto wrapped = wrap_outer_block(inode_wk, kGenesisHash, 0, cfs_block.take(), opt.crypto);
    if (!wrapped) return Status::err(wrapped.error().code, wrapped.error().message);
    SignedRoot genesis_root;
    genesis_root.tree_size = 1;
    genesis_root.root = wrapped.value().outer.digest();
    if (opt.crypto) {
        auto sig = sign_payload(inode_wk.signer,
                                root_signing_payload(inode_wk.capsule_id, 1,
                                                     genesis_root.root));
        if (!sig) return Status::err(sig.error().code, sig.error().message);
        genesis_root.signature = sig.take();
    }
    auto appended = inode_store.value()->append(wrapped.value().encrypted, genesis_root);
    if (!appended) return Status::err(appended.error().code, appended.error().message);

    // Role configs with absolute paths; TCP addresses are filled in by
    // whoever boots the roles.
    auto abs = [&](const char* rel) { return fs::absolute(dir / rel).string(); };

    CapsuleEndpoint inode_ep{
        "inode", inode_wk.capsule_id.hex(), opt.block_size,
        abs("capsules/inode.capsule"), abs("keys/inode.read.key"), ""};
    CapsuleEndpoint data_ep{
        "data", data_wk.capsule_id.hex(), opt.block_size,
        abs("capsules/data.capsule"), abs("keys/data.read.key"), ""};

    ServerConfig s_inode;
    s_inode.capsule = inode_ep;
    s_inode.crypto = opt.crypto;
    ServerConfig s_data;
    s_data.capsule = data_ep;
    s_data.crypto = opt.crypto;
    if (auto st = save_config(dir / "server-inode.json", s_inode); !st) return st;
    if (auto st = save_config(dir / "server-data.json", s_data); !st) return st;

    MiddlewareConfig mw;
    mw.inode = inode_ep;
    mw.data = data_ep;
    mw.inode_write_key_path = abs("keys/inode.write.key");
    mw.data_write_key_path = abs("keys/data.write.key");
    mw.admin_key_path = abs("keys/admin.key");
    mw.revocation_path = abs("revoked.list");
    mw.crypto = opt.crypto;
    if (auto st = save_config(dir / "middleware.json", mw); !st) return st;

    MountConfig mnt;
    mnt.client = MountClient{"A", abs("keys/client.key"), opt.owner_uid};
    mnt.inode = inode_ep;
    mnt.data = data_ep;
    mnt.journal_dir = abs("journal");
    mnt.cache_dir = abs("cache");
    mnt.crypto = opt.crypto;
    if (auto st = save_config(dir / "mount.json", mnt); !st) return st;

    FsConfig fscfg;
    fscfg.block_size = opt.block_size;
    fscfg.crypto = opt.crypto;
    fscfg.inode_capsule_id = inode_wk.capsule_id.hex();
    fscfg.data_capsule_id = data_wk.capsule_id.hex();
    return save_config(dir / "fs.json", fscfg);
}

} // namespace cfs
