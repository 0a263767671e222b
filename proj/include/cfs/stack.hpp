#pragma once

// Boots a whole filesystem stack from an initialized directory, either
// fully in-process (fast CI) or with the server and middleware roles behind
// real TCP sockets. Tools and tests build clients through this.

#include "cfs/client.hpp"
#include "cfs/config.hpp"
#include "cfs/net.hpp"

namespace cfs {

struct StackOptions {
    bool durable_server = false;        // fdatasync per append; off for harness speed
    bool redundant_inner_verify = true; // server-side instrumentation counter
    bool skip_client_sig_verify = false;
    std::optional<bool> scrub_on_revoke; // default from middleware.json
};

struct ClientSpec {
    std::string name = "A";
    std::string instance; // journal/cache subdirectory; defaults to name
    std::optional<uint32_t> uid;
    std::optional<uint64_t> snapshot_ts;
    std::optional<bool> advisory_checks;
    std::optional<bool> coalesce;
    bool start_flush_worker = true;
    std::optional<size_t> cache_memory_blocks;
    std::optional<size_t> cache_disk_blocks;
    // Attack injection on the client->middleware stream.
    std::function<void(PutRequest&)> put_tamper;
};

namespace detail_stack {

inline Result<KeyPair> key_for(const MountConfig& mnt, const std::string& name,
                               uint32_t& uid_out) {
    if (name == mnt.client.name || name.empty()) {
        uid_out = mnt.client.uid;
        return load_keypair(mnt.client.key_path);
    }
    for (const auto& c : mnt.extra_clients) {
        if (c.name == name) {
            uid_out = c.uid;
            return load_keypair(c.key_path);
        }
    }
    return Result<KeyPair>::err(Errc::not_found, "no client named " + name);
}

} // namespace detail_stack

class Stack {
public:
    virtual ~Stack() = default;

    virtual std::shared_ptr<CapsuleService> inode_service() = 0;
    virtual std::shared_ptr<CapsuleService> data_service() = 0;
    virtual std::shared_ptr<MiddlewareService> middleware_service() = 0;

    std::shared_ptr<CapsuleStore> inode_store() { return inode_store_; }
    std::shared_ptr<CapsuleStore> data_store() { return data_store_; }
    std::shared_ptr<Middleware> middleware() { return middleware_; }
    const MountConfig& mount_config() const { return mount_; }
    const std::filesystem::path& dir() const { return dir_; }

    // Registers an additional identity for make_client lookups.
    void register_client(const MountClient& c) { mount_.extra_clients.push_back(c); }

    Result<std::unique_ptr<Client>> make_client(const ClientSpec& spec = {}) {
        uint32_t uid = 1000;
        auto key = detail_stack::key_for(mount_, spec.name, uid);
        if (!key)
            return Result<std::unique_ptr<Client>>::err(key.error().code,
                                                        key.error().message);
        auto inode_rk = load_read_key(mount_.inode.read_key_path);
        if (!inode_rk)
            return Result<std::unique_ptr<Client>>::err(inode_rk.error().code,
                                                        inode_rk.error().message);
        auto data_rk = load_read_key(mount_.data.read_key_path);
        if (!data_rk)
            return Result<std::unique_ptr<Client>>::err(data_rk.error().code,
                                                        data_rk.error().message);

        ClientOptions opt;
        opt.uid = spec.uid.value_or(uid);
        opt.nobody_uid = mount_.nobody_uid;
        opt.crypto = mount_.crypto;
        opt.advisory_checks = spec.advisory_checks.value_or(mount_.advisory_checks);
        opt.coalesce = spec.coalesce.value_or(mount_.coalesce);
        opt.cache_memory_blocks = spec.cache_memory_blocks.value_or(mount_.cache_memory_blocks);
        opt.cache_disk_blocks = spec.cache_disk_blocks.value_or(mount_.cache_disk_blocks);
        opt.stale_retry_limit = mount_.stale_retry_limit;
        const std::string& inst = spec.instance.empty() ? spec.name : spec.instance;
        opt.journal_dir = std::filesystem::path(mount_.journal_dir) / inst;
        opt.cache_dir = std::filesystem::path(mount_.cache_dir) / inst;
        opt.snapshot_ts = spec.snapshot_ts;
        opt.start_flush_worker = spec.start_flush_worker;

        std::shared_ptr<MiddlewareService> mw = middleware_service();
        if (spec.put_tamper)
            mw = std::make_shared<TamperedMiddleware>(mw, spec.put_tamper);

        auto client = std::make_unique<Client>(key.take(), inode_rk.take(), data_rk.take(),
                                               inode_service(), data_service(), mw,
                                               std::move(opt));
        auto st = client->mount();
        if (!st)
            return Result<std::unique_ptr<Client>>::err(st.error().code, st.error().message);
        return client;
    }

protected:
    Status open_stores(const std::filesystem::path& dir, const StackOptions& opts) {
        dir_ = dir;
        auto mnt = load_config<MountConfig>(dir / "mount.json");
        if (!mnt) return Status::err(mnt.error().code, mnt.error().message);
        mount_ = mnt.take();
        auto mwc = load_config<MiddlewareConfig>(dir / "middleware.json");
        if (!mwc) return Status::err(mwc.error().code, mwc.error().message);
        mw_config_ = mwc.take();

        CapsuleOptions copt;
        copt.crypto = mount_.crypto;
        copt.durable = opts.durable_server;
        copt.redundant_inner_verify = opts.redundant_inner_verify;

        auto open_one = [&](const CapsuleEndpoint& ep)
            -> Result<std::shared_ptr<CapsuleStore>> {
            auto rk = load_read_key(ep.read_key_path);
            if (!rk)
                return Result<std::shared_ptr<CapsuleStore>>::err(rk.error().code,
                                                                  rk.error().message);
            return CapsuleStore::open(ep.store_path, CapsuleMeta{}, rk.take(), copt);
        };
        auto is = open_one(mount_.inode);
        if (!is) return Status::err(is.error().code, is.error().message);
        inode_store_ = is.take();
        auto ds = open_one(mount_.data);
        if (!ds) return Status::err(ds.error().code, ds.error().message);
        data_store_ = ds.take();
        return ok_status();
    }

    Status build_middleware(std::shared_ptr<CapsuleService> inode_svc,
                            std::shared_ptr<CapsuleService> data_svc,
                            const StackOptions& opts) {
        auto inode_wk = load_write_key(mw_config_.inode_write_key_path);
        if (!inode_wk) return Status::err(inode_wk.error().code, inode_wk.error().message);
        auto data_wk = load_write_key(mw_config_.data_write_key_path);
        if (!data_wk) return Status::err(data_wk.error().code, data_wk.error().message);
        auto admin = load_keypair(mw_config_.admin_key_path);
        if (!admin) return Status::err(admin.error().code, admin.error().message);

        MiddlewareOptions mo;
        mo.crypto = mw_config_.crypto;
        mo.scrub_on_revoke = opts.scrub_on_revoke.value_or(mw_config_.scrub_on_revoke);
        mo.skip_client_sig_verify = opts.skip_client_sig_verify;
        mo.revocation_path = mw_config_.revocation_path;
        middleware_ = std::make_shared<Middleware>(inode_wk.take(), data_wk.take(),
                                                   std::move(inode_svc), std::move(data_svc),
                                                   admin.take(), std::move(mo));
        middleware_->start_sync();
        return ok_status();
    }

    std::filesystem::path dir_;
    MountConfig mount_;
    MiddlewareConfig mw_config_;
    std::shared_ptr<CapsuleStore> inode_store_;
    std::shared_ptr<CapsuleStore> data_store_;
    std::shared_ptr<Middleware> middleware_;
};

// ---------------------------------------------------------------------------

class InprocStack final : public Stack {
public:
    static Result<std::unique_ptr<InprocStack>> boot(const std::filesystem::path& dir,
                                                     const StackOptions& opts = {}) {
        auto stack = std::make_unique<InprocStack>();
        if (auto st = stack->open_stores(dir, opts); !st)
            return Result<std::unique_ptr<InprocStack>>::err(st.error().code,
                                                             st.error().message);
        stack->inode_svc_ = std::make_shared<LocalCapsule>(stack->inode_store_);
        stack->data_svc_ = std::make_shared<LocalCapsule>(stack->data_store_);
        if (auto st = stack->build_middleware(stack->inode_svc_, stack->data_svc_, opts); !st)
            return Result<std::unique_ptr<InprocStack>>::err(st.error().code,
                                                             st.error().message);
        stack->mw_svc_ = std::make_shared<LocalMiddleware>(stack->middleware_);
        return stack;
    }

    std::shared_ptr<CapsuleService> inode_service() override { return inode_svc_; }
    std::shared_ptr<CapsuleService> data_service() override { return data_svc_; }
    std::shared_ptr<MiddlewareService> middleware_service() override { return mw_svc_; }

private:
    std::shared_ptr<LocalCapsule> inode_svc_;
    std::shared_ptr<LocalCapsule> data_svc_;
    std::shared_ptr<LocalMiddleware> mw_svc_;
};

// ---------------------------------------------------------------------------
// Same roles behind loopback TCP: capsule hosts, a middleware host wired to
// them through remote adapters, and remote clients.

class TcpStack final : public Stack {
public:
    ~TcpStack() override { stop(); }

    static Result<std::unique_ptr<TcpStack>> boot(const std::filesystem::path& dir,
                                                  const StackOptions& opts = {}) {
        auto stack = std::make_unique<TcpStack>();
        if (auto st = stack->open_stores(dir, opts); !st)
            return Result<std::unique_ptr<TcpStack>>::err(st.error().code,
                                                          st.error().message);

        stack->inode_host_ = std::make_unique<CapsuleServerHost>();
        stack->inode_host_->add_store(stack->inode_store_);
        if (auto st = stack->inode_host_->listen({"127.0.0.1", 0}); !st)
            return Result<std::unique_ptr<TcpStack>>::err(st.error().code,
                                                          st.error().message);
        stack->data_host_ = std::make_unique<CapsuleServerHost>();
        stack->data_host_->add_store(stack->data_store_);
        if (auto st = stack->data_host_->listen({"127.0.0.1", 0}); !st)
            return Result<std::unique_ptr<TcpStack>>::err(st.error().code,
                                                          st.error().message);

        auto mw_inode = std::make_shared<RemoteCapsule>(stack->inode_address(),
                                                        stack->mount_.inode.capsule_id(),
                                                        stack->mount_.inode.block_size);
        auto mw_data = std::make_shared<RemoteCapsule>(stack->data_address(),
                                                       stack->mount_.data.capsule_id(),
                                                       stack->mount_.data.block_size);
        if (auto st = stack->build_middleware(mw_inode, mw_data, opts); !st)
            return Result<std::unique_ptr<TcpStack>>::err(st.error().code,
                                                          st.error().message);
        stack->mw_host_ = std::make_unique<MiddlewareHost>(stack->middleware_);
        if (auto st = stack->mw_host_->listen({"127.0.0.1", 0}); !st)
            return Result<std::unique_ptr<TcpStack>>::err(st.error().code,
                                                          st.error().message);
        return stack;
    }

    net::Address inode_address() const { return {"127.0.0.1", inode_host_->port()}; }
    net::Address data_address() const { return {"127.0.0.1", data_host_->port()}; }
    net::Address middleware_address() const { return {"127.0.0.1", mw_host_->port()}; }

    std::shared_ptr<CapsuleService> inode_service() override {
        return std::make_shared<RemoteCapsule>(inode_address(), mount_.inode.capsule_id(),
                                               mount_.inode.block_size);
    }

    std::shared_ptr<CapsuleService> data_service() override {
        return std::make_shared<RemoteCapsule>(data_address(), mount_.data.capsule_id(),
                                               mount_.data.block_size);
    }

    std::shared_ptr<MiddlewareService> middleware_service() override {
        return std::make_shared<RemoteMiddleware>(middleware_address());
    }

    // Mount config with live addresses, for spawning client processes.
    Status write_mount_config(const std::filesystem::path& out) {
        MountConfig mnt = mount_;
        mnt.inode.address = inode_address().str();
        mnt.data.address = data_address().str();
        mnt.middleware_address = middleware_address().str();
        return save_config(out, mnt);
    }

    void stop() {
        if (middleware_) middleware_->stop();
        if (mw_host_) mw_host_->stop();
        if (inode_host_) inode_host_->stop();
        if (data_host_) data_host_->stop();
    }

private:
    std::unique_ptr<CapsuleServerHost> inode_host_;
    std::unique_ptr<CapsuleServerHost> data_host_;
    std::unique_ptr<MiddlewareHost> mw_host_;
};

// ---------------------------------------------------------------------------
// Client construction straight from a mount config whose addresses point at
// already-running servers (the `cfs mount` / `cfs workload` path).

inline Result<std::unique_ptr<Client>> connect_client(const MountConfig& mnt,
                                                      const ClientSpec& spec = {}) {
    auto inode_addr = net::Address::parse(mnt.inode.address);
    auto data_addr = net::Address::parse(mnt.data.address);
    auto mw_addr = net::Address::parse(mnt.middleware_address);
    if (!inode_addr || !data_addr)
        return Result<std::unique_ptr<Client>>::err(Errc::bad_request,
                                                    "capsule addresses missing from config");

    uint32_t uid = 1000;
    auto key = detail_stack::key_for(mnt, spec.name, uid);
    if (!key) return Result<std::unique_ptr<Client>>::err(key.error().code,
                                                          key.error().message);
    auto inode_rk = load_read_key(mnt.inode.read_key_path);
    if (!inode_rk)
        return Result<std::unique_ptr<Client>>::err(inode_rk.error().code,
                                                    inode_rk.error().message);
    auto data_rk = load_read_key(mnt.data.read_key_path);
    if (!data_rk)
        return Result<std::unique_ptr<Client>>::err(data_rk.error().code,
                                                    data_rk.error().message);

    auto inode_svc = std::make_shared<RemoteCapsule>(*inode_addr, mnt.inode.capsule_id(),
                                                     mnt.inode.block_size);
    auto data_svc = std::make_shared<RemoteCapsule>(*data_addr, mnt.data.capsule_id(),
                                                    mnt.data.block_size);
    std::shared_ptr<MiddlewareService> mw;
    if (mw_addr) mw = std::make_shared<RemoteMiddleware>(*mw_addr);
    if (!mw && !spec.snapshot_ts)
        return Result<std::unique_ptr<Client>>::err(Errc::bad_request,
                                                    "middleware address missing from config");
    if (!mw) mw = std::make_shared<RemoteMiddleware>(net::Address{"127.0.0.1", 1}); // unused

    if (spec.put_tamper) mw = std::make_shared<TamperedMiddleware>(mw, spec.put_tamper);

    ClientOptions opt;
    opt.uid = spec.uid.value_or(uid);
    opt.nobody_uid = mnt.nobody_uid;
    opt.crypto = mnt.crypto;
    opt.advisory_checks = spec.advisory_checks.value_or(mnt.advisory_checks);
    opt.coalesce = spec.coalesce.value_or(mnt.coalesce);
    opt.cache_memory_blocks = spec.cache_memory_blocks.value_or(mnt.cache_memory_blocks);
    opt.cache_disk_blocks = spec.cache_disk_blocks.value_or(mnt.cache_disk_blocks);
    opt.stale_retry_limit = mnt.stale_retry_limit;
    std::string inst = spec.instance.empty()
                           ? (spec.name.empty() ? mnt.client.name : spec.name)
                           : spec.instance;
    opt.journal_dir = std::filesystem::path(mnt.journal_dir) / inst;
    opt.cache_dir = std::filesystem::path(mnt.cache_dir) / inst;
    opt.snapshot_ts = spec.snapshot_ts;
    opt.start_flush_worker = spec.start_flush_worker;

    auto client = std::make_unique<Client>(key.take(), inode_rk.take(), data_rk.take(),
                                           inode_svc, data_svc, mw, std::move(opt));
    auto st = client->mount();
    if (!st) return Result<std::unique_ptr<Client>>::err(st.error().code, st.error().message);
    return client;
}

} // namespace cfs
