#pragma once

// TCP transport: capsule server host, middleware host, and the remote
// service adapters clients use. One request/response frame pair per call; a
// subscription turns its connection into a one-way event stream.

#include "cfs/middleware.hpp"
#include "cfs/wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <thread>

namespace cfs {

namespace net {

inline bool write_all(int fd, ByteSpan data) {
    size_t off = 0;
    while (off < data.size()) {
        ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
        if (n <= 0) return false;
        off += static_cast<size_t>(n);
    }
    return true;
}

inline bool read_exact(int fd, uint8_t* buf, size_t len) {
    size_t off = 0;
    while (off < len) {
        ssize_t n = ::recv(fd, buf + off, len - off, 0);
        if (n <= 0) return false;
        off += static_cast<size_t>(n);
    }
    return true;
}

inline bool write_frame(int fd, MsgType type, ByteSpan body) {
    Encoder e;
    e.u32(static_cast<uint32_t>(body.size() + 1));
    e.u8(static_cast<uint8_t>(type));
    e.raw(body);
    return write_all(fd, e.view());
}

inline std::optional<Frame> read_frame(int fd) {
    uint8_t head[4];
    if (!read_exact(fd, head, 4)) return std::nullopt;
    uint32_t len = static_cast<uint32_t>(head[0]) | static_cast<uint32_t>(head[1]) << 8 |
                   static_cast<uint32_t>(head[2]) << 16 | static_cast<uint32_t>(head[3]) << 24;
    if (len == 0 || len > (64u << 20)) return std::nullopt;
    Bytes body(len);
    if (!read_exact(fd, body.data(), len)) return std::nullopt;
    Frame f;
    f.type = static_cast<MsgType>(body[0]);
    f.body.assign(body.begin() + 1, body.end());
    return f;
}

// Waits for readability so stream consumers can poll with a timeout.
inline bool wait_readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    return ::poll(&p, 1, timeout_ms) > 0 && (p.revents & (POLLIN | POLLHUP));
}

struct Address {
    std::string host = "127.0.0.1";
    uint16_t port = 0;

    static std::optional<Address> parse(const std::string& s) {
        auto colon = s.rfind(':');
        if (colon == std::string::npos) return std::nullopt;
        Address a;
        a.host = s.substr(0, colon);
        int p = std::atoi(s.c_str() + colon + 1);
        if (p < 0 || p > 65535) return std::nullopt;
        a.port = static_cast<uint16_t>(p);
        return a;
    }

    std::string str() const { return host + ":" + std::to_string(port); }
};

inline int connect_to(const Address& addr) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) return -1;
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(addr.port);
    if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1) {
        ::close(fd);
        return -1;
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
        ::close(fd);
        return -1;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return fd;
}

} // namespace net

// ---------------------------------------------------------------------------
// Generic accept loop; the handler owns the connection fd.

class TcpServer {
public:
    using Handler = std::function<void(int fd)>;

    Status listen(const net::Address& addr, Handler handler) {
        handler_ = std::move(handler);
        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) return Status::err(Errc::io, "socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_port = htons(addr.port);
        if (::inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1)
            return Status::err(Errc::bad_request, "bad listen host");
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0)
            return Status::err(Errc::io, "bind failed on " + addr.str());
        if (::listen(listen_fd_, 64) != 0) return Status::err(Errc::io, "listen failed");

        sockaddr_in bound{};
        socklen_t blen = sizeof(bound);
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
        port_ = ntohs(bound.sin_port);

        accept_thread_ = std::thread([this] { accept_loop(); });
        return ok_status();
    }

    uint16_t port() const { return port_; }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
        if (listen_fd_ >= 0) ::close(listen_fd_);
        listen_fd_ = -1;
        if (accept_thread_.joinable()) accept_thread_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lk(conn_m_);
            for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
            workers.swap(conn_threads_);
        }
        for (auto& t : workers)
            if (t.joinable()) t.join();
    }

    ~TcpServer() { stop(); }

private:
    void accept_loop() {
        while (!stopping_.load()) {
            int fd = ::accept(listen_fd_, nullptr, nullptr);
            if (fd < 0) {
                if (stopping_.load()) break;
                continue;
            }
            int one = 1;
            ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
            std::lock_guard lk(conn_m_);
            conn_fds_.push_back(fd);
            conn_threads_.emplace_back([this, fd] {
                handler_(fd);
                ::close(fd);
            });
        }
    }

    Handler handler_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex conn_m_;
    std::vector<int> conn_fds_;
    std::vector<std::thread> conn_threads_;
};

// ---------------------------------------------------------------------------
// Capsule server host: serves one or more capsule stores over TCP. A
// follower host rejects client appends; its store is fed by FollowerSync.

class CapsuleServerHost {
public:
    explicit CapsuleServerHost(bool follower = false) : follower_(follower) {}

    void add_store(std::shared_ptr<CapsuleStore> store) {
        stores_[store->capsule_id()] = std::move(store);
    }

    Status listen(const net::Address& addr) {
        return server_.listen(addr, [this](int fd) { serve(fd); });
    }

    uint16_t port() const { return server_.port(); }
    void stop() { server_.stop(); }

private:
    std::shared_ptr<CapsuleStore> store_for(const Digest& id) {
        auto it = stores_.find(id);
        return it == stores_.end() ? nullptr : it->second;
    }

    void serve(int fd) {
        while (true) {
            auto frame = net::read_frame(fd);
            if (!frame) return;
            Decoder d(frame->body);
            switch (frame->type) {
                case MsgType::append_req: {
                    Digest cid = decode_digest(d);
                    Bytes encrypted = d.bytes();
                    SignedRoot root = SignedRoot::decode(d);
                    Encoder e;
                    auto store = store_for(cid);
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                    } else if (follower_) {
                        encode_error(e, {Errc::read_only, "follower replica"});
                    } else {
                        auto r = store->append(encrypted, root);
                        if (!r) {
                            encode_error(e, r.error());
                        } else {
                            e.u8(0);
                            encode_receipt(e, r.value());
                        }
                    }
                    if (!net::write_frame(fd, MsgType::append_resp, e.view())) return;
                    break;
                }
                case MsgType::get_req: {
                    Digest cid = decode_digest(d);
                    Digest digest = decode_digest(d);
                    Encoder e;
                    auto store = store_for(cid);
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                    } else {
                        auto r = store->get(digest);
                        if (!r) {
                            encode_error(e, r.error());
                        } else {
                            e.u8(0);
                            e.bytes(r.value().first);
                            r.value().second.encode(e);
                        }
                    }
                    if (!net::write_frame(fd, MsgType::get_resp, e.view())) return;
                    break;
                }
                case MsgType::leaves_req: {
                    Digest cid = decode_digest(d);
                    Encoder e;
                    auto store = store_for(cid);
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                    } else {
                        auto leaves = store->leaves();
                        e.u8(0);
                        e.u64(store->length());
                        e.u32(static_cast<uint32_t>(leaves.size()));
                        for (const auto& l : leaves) encode_digest(e, l);
                    }
                    if (!net::write_frame(fd, MsgType::leaves_resp, e.view())) return;
                    break;
                }
                case MsgType::proof_req: {
                    Digest cid = decode_digest(d);
                    Digest digest = decode_digest(d);
                    Encoder e;
                    auto store = store_for(cid);
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                    } else {
                        auto r = store->proof(digest);
                        if (!r) {
                            encode_error(e, r.error());
                        } else {
                            e.u8(0);
                            r.value().encode(e);
                        }
                    }
                    if (!net::write_frame(fd, MsgType::proof_resp, e.view())) return;
                    break;
                }
                case MsgType::record_req: {
                    Digest cid = decode_digest(d);
                    uint64_t seq = d.u64();
                    Encoder e;
                    auto store = store_for(cid);
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                    } else {
                        auto r = store->record(seq);
                        if (!r) {
                            encode_error(e, r.error());
                        } else {
                            e.u8(0);
                            encode_capsule_record(e, r.value());
                        }
                    }
                    if (!net::write_frame(fd, MsgType::record_resp, e.view())) return;
                    break;
                }
                case MsgType::subscribe_req: {
                    Digest cid = decode_digest(d);
                    uint64_t from = d.u64();
                    auto store = store_for(cid);
                    Encoder e;
                    if (!store || !d.valid()) {
                        encode_error(e, {Errc::not_found, "unknown capsule"});
                        net::write_frame(fd, MsgType::subscribe_resp, e.view());
                        return;
                    }
                    auto sub = store->subscribe(from);
                    if (!sub) {
                        encode_error(e, sub.error());
                        net::write_frame(fd, MsgType::subscribe_resp, e.view());
                        return;
                    }
                    e.u8(0);
                    if (!net::write_frame(fd, MsgType::subscribe_resp, e.view())) {
                        sub.value()->close();
                        return;
                    }
                    stream_subscription(fd, sub.take());
                    return; // connection is consumed by the stream
                }
                default:
                    return; // unknown request: drop the connection
            }
        }
    }

    void stream_subscription(int fd, std::shared_ptr<Subscription> sub) {
        while (true) {
            auto ev = sub->next(250);
            if (!ev) {
                if (sub->closed()) return;
                // Heartbeat the socket: detect a dead peer by polling error.
                pollfd p{fd, 0, 0};
                ::poll(&p, 1, 0);
                if (p.revents & (POLLERR | POLLHUP)) {
                    sub->close();
                    return;
                }
                continue;
            }
            Encoder e;
            e.u64(ev->sequence);
            encode_digest(e, ev->digest);
            if (!net::write_frame(fd, MsgType::sub_event, e.view())) {
                sub->close();
                return;
            }
        }
    }

    bool follower_;
    std::unordered_map<Digest, std::shared_ptr<CapsuleStore>, DigestHash> stores_;
    TcpServer server_;
};

// ---------------------------------------------------------------------------
// Middleware host

class MiddlewareHost {
public:
    explicit MiddlewareHost(std::shared_ptr<Middleware> mw) : mw_(std::move(mw)) {}

    Status listen(const net::Address& addr) {
        return server_.listen(addr, [this](int fd) { serve(fd); });
    }

    uint16_t port() const { return server_.port(); }
    void stop() { server_.stop(); }

private:
    void serve(int fd) {
        while (true) {
            auto frame = net::read_frame(fd);
            if (!frame) return;
            Decoder d(frame->body);
            switch (frame->type) {
                case MsgType::put_req: {
                    PutRequest req = decode_put_request(d);
                    Encoder e;
                    if (!d.valid()) {
                        PutResult r;
                        r.status = PutStatus::bad_request;
                        r.message = "malformed put";
                        encode_put_result(e, r);
                    } else {
                        encode_put_result(e, mw_->put(req));
                    }
                    if (!net::write_frame(fd, MsgType::put_resp, e.view())) return;
                    break;
                }
                case MsgType::revoke_req: {
                    Digest key_id = decode_digest(d);
                    Encoder e;
                    if (!d.valid()) {
                        encode_error(e, {Errc::bad_request, "malformed revoke"});
                    } else {
                        mw_->revoke(key_id);
                        e.u8(0);
                    }
                    if (!net::write_frame(fd, MsgType::revoke_resp, e.view())) return;
                    break;
                }
                default:
                    return;
            }
        }
    }

    std::shared_ptr<Middleware> mw_;
    TcpServer server_;
};

// ---------------------------------------------------------------------------
// Remote adapters

namespace detail {

// One lazily-connected request/response socket, serialized per call.
class RpcConn {
public:
    explicit RpcConn(net::Address addr) : addr_(addr) {}

    ~RpcConn() {
        if (fd_ >= 0) ::close(fd_);
    }

    Result<Bytes> call(MsgType req, ByteSpan body, MsgType expected_resp) {
        std::lock_guard lk(m_);
        for (int attempt = 0; attempt < 2; attempt++) {
            if (fd_ < 0) fd_ = net::connect_to(addr_);
            if (fd_ < 0)
                return Result<Bytes>::err(Errc::unavailable, "cannot reach " + addr_.str());
            if (!net::write_frame(fd_, req, body)) {
                reset();
                continue;
            }
            auto frame = net::read_frame(fd_);
            if (!frame) {
                reset();
                continue;
            }
            if (frame->type != expected_resp)
                return Result<Bytes>::err(Errc::bad_request, "unexpected response type");
            return std::move(frame->body);
        }
        return Result<Bytes>::err(Errc::unavailable, "lost connection to " + addr_.str());
    }

private:
    void reset() {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

    net::Address addr_;
    std::mutex m_;
    int fd_ = -1;
};

} // namespace detail

class RemoteSubscription final : public SubscriptionStream {
public:
    explicit RemoteSubscription(int fd) : fd_(fd) {}

    ~RemoteSubscription() override { close(); }

    std::optional<SubEvent> next(int timeout_ms) override {
        if (fd_ < 0) return std::nullopt;
        if (!net::wait_readable(fd_, timeout_ms)) return std::nullopt;
        auto frame = net::read_frame(fd_);
        if (!frame || frame->type != MsgType::sub_event) {
            close();
            return std::nullopt;
        }
        Decoder d(frame->body);
        SubEvent ev;
        ev.sequence = d.u64();
        ev.digest = decode_digest(d);
        if (!d.valid()) return std::nullopt;
        return ev;
    }

    void close() override {
        int fd = fd_.exchange(-1);
        if (fd >= 0) {
            ::shutdown(fd, SHUT_RDWR);
            ::close(fd);
        }
    }

private:
    std::atomic<int> fd_;
};

class RemoteCapsule final : public CapsuleService {
public:
    RemoteCapsule(net::Address addr, Digest capsule_id, uint32_t block_size)
        : addr_(addr), conn_(addr), capsule_id_(capsule_id), block_size_(block_size) {}

    Digest capsule_id() override { return capsule_id_; }
    uint32_t block_size() override { return block_size_; }

    Result<Receipt> append(ByteSpan encrypted, const SignedRoot& root) override {
        Encoder e;
        encode_digest(e, capsule_id_);
        e.bytes(encrypted);
        root.encode(e);
        auto resp = conn_.call(MsgType::append_req, e.view(), MsgType::append_resp);
        if (!resp) return Result<Receipt>::err(resp.error().code, resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d)) return Result<Receipt>::err(err->code, err->message);
        Receipt r = decode_receipt(d);
        if (!d.valid()) return Result<Receipt>::err(Errc::bad_request, "malformed receipt");
        return r;
    }

    Result<std::pair<Bytes, MerkleProof>> get(const Digest& digest) override {
        Encoder e;
        encode_digest(e, capsule_id_);
        encode_digest(e, digest);
        auto resp = conn_.call(MsgType::get_req, e.view(), MsgType::get_resp);
        if (!resp)
            return Result<std::pair<Bytes, MerkleProof>>::err(resp.error().code,
                                                              resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d))
            return Result<std::pair<Bytes, MerkleProof>>::err(err->code, err->message);
        Bytes bytes = d.bytes();
        MerkleProof proof = MerkleProof::decode(d);
        if (!d.valid())
            return Result<std::pair<Bytes, MerkleProof>>::err(Errc::bad_request,
                                                              "malformed get response");
        return std::make_pair(std::move(bytes), std::move(proof));
    }

    Result<LeavesResult> leaves() override {
        Encoder e;
        encode_digest(e, capsule_id_);
        auto resp = conn_.call(MsgType::leaves_req, e.view(), MsgType::leaves_resp);
        if (!resp) return Result<LeavesResult>::err(resp.error().code, resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d))
            return Result<LeavesResult>::err(err->code, err->message);
        LeavesResult r;
        r.length = d.u64();
        uint32_t n = d.u32();
        for (uint32_t i = 0; i < n && d.valid(); i++) r.leaves.push_back(decode_digest(d));
        if (!d.valid())
            return Result<LeavesResult>::err(Errc::bad_request, "malformed leaves response");
        return r;
    }

    Result<MerkleProof> proof(const Digest& digest) override {
        Encoder e;
        encode_digest(e, capsule_id_);
        encode_digest(e, digest);
        auto resp = conn_.call(MsgType::proof_req, e.view(), MsgType::proof_resp);
        if (!resp) return Result<MerkleProof>::err(resp.error().code, resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d))
            return Result<MerkleProof>::err(err->code, err->message);
        MerkleProof p = MerkleProof::decode(d);
        if (!d.valid()) return Result<MerkleProof>::err(Errc::bad_request, "malformed proof");
        return p;
    }

    Result<CapsuleRecord> record(uint64_t sequence) override {
        Encoder e;
        encode_digest(e, capsule_id_);
        e.u64(sequence);
        auto resp = conn_.call(MsgType::record_req, e.view(), MsgType::record_resp);
        if (!resp) return Result<CapsuleRecord>::err(resp.error().code, resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d))
            return Result<CapsuleRecord>::err(err->code, err->message);
        CapsuleRecord rec = decode_capsule_record(d);
        if (!d.valid()) return Result<CapsuleRecord>::err(Errc::bad_request, "malformed record");
        return rec;
    }

    Result<std::unique_ptr<SubscriptionStream>> subscribe(uint64_t from_sequence) override {
        int fd = net::connect_to(addr_);
        if (fd < 0)
            return Result<std::unique_ptr<SubscriptionStream>>::err(
                Errc::unavailable, "cannot reach " + addr_.str());
        Encoder e;
        encode_digest(e, capsule_id_);
        e.u64(from_sequence);
        if (!net::write_frame(fd, MsgType::subscribe_req, e.view())) {
            ::close(fd);
            return Result<std::unique_ptr<SubscriptionStream>>::err(Errc::unavailable,
                                                                    "subscribe send failed");
        }
        auto frame = net::read_frame(fd);
        if (!frame || frame->type != MsgType::subscribe_resp) {
            ::close(fd);
            return Result<std::unique_ptr<SubscriptionStream>>::err(Errc::unavailable,
                                                                    "subscribe failed");
        }
        Decoder d(frame->body);
        if (auto err = decode_status(d)) {
            ::close(fd);
            return Result<std::unique_ptr<SubscriptionStream>>::err(err->code, err->message);
        }
        return std::unique_ptr<SubscriptionStream>(new RemoteSubscription(fd));
    }

private:
    net::Address addr_;
    detail::RpcConn conn_;
    Digest capsule_id_;
    uint32_t block_size_;
};

class RemoteMiddleware final : public MiddlewareService {
public:
    explicit RemoteMiddleware(net::Address addr) : conn_(addr) {}

    PutResult put(const PutRequest& req) override {
        Encoder e;
        encode_put_request(e, req);
        auto resp = conn_.call(MsgType::put_req, e.view(), MsgType::put_resp);
        if (!resp) {
            PutResult r;
            r.status = PutStatus::unavailable;
            r.message = resp.error().message;
            return r;
        }
        Decoder d(resp.value());
        PutResult r = decode_put_result(d);
        if (!d.valid()) {
            r.status = PutStatus::unavailable;
            r.message = "malformed put response";
        }
        return r;
    }

    Status revoke(const Digest& key_id) override {
        Encoder e;
        encode_digest(e, key_id);
        auto resp = conn_.call(MsgType::revoke_req, e.view(), MsgType::revoke_resp);
        if (!resp) return Status::err(resp.error().code, resp.error().message);
        Decoder d(resp.value());
        if (auto err = decode_status(d)) return Status::err(err->code, err->message);
        return ok_status();
    }

private:
    detail::RpcConn conn_;
};

// ---------------------------------------------------------------------------
// Follower replication: subscribe to a leader and append its records
// verbatim; local admission re-verifies everything.

class FollowerSync {
public:
    FollowerSync(std::shared_ptr<CapsuleStore> local, std::shared_ptr<CapsuleService> leader)
        : local_(std::move(local)), leader_(std::move(leader)) {}

    ~FollowerSync() { stop(); }

    Status start() {
        auto sub = leader_->subscribe(local_->length());
        if (!sub) return Status::err(sub.error().code, sub.error().message);
        stream_ = sub.take();
        thread_ = std::thread([this] { run(); });
        return ok_status();
    }

    void stop() {
        bool expected = false;
        if (!stopping_.compare_exchange_strong(expected, true)) return;
        if (stream_) stream_->close();
        if (thread_.joinable()) thread_.join();
    }

private:
    void run() {
        while (!stopping_.load()) {
            auto ev = stream_->next(200);
            if (!ev) continue;
            auto rec = leader_->record(ev->sequence);
            if (!rec) continue;
            auto r = local_->append(rec.value().encrypted, rec.value().root);
            if (!r)
                CFS_LOG_WARN("follower: append of seq %llu failed: %s",
                             static_cast<unsigned long long>(ev->sequence),
                             r.error().message.c_str());
        }
    }

    std::shared_ptr<CapsuleStore> local_;
    std::shared_ptr<CapsuleService> leader_;
    std::unique_ptr<SubscriptionStream> stream_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
};

} // namespace cfs
