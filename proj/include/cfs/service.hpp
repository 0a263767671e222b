#pragma once

// Transport-neutral views of the two network roles. The same client and
// middleware code runs against in-process stores (Local*) or TCP peers
// (Remote*, see net.hpp). Tamper wrappers are the attack-simulation hooks on
// the two write-path byte streams.

#include "cfs/capsule.hpp"

#include <functional>
#include <memory>

namespace cfs {

struct LeavesResult {
    uint64_t length = 0;
    std::vector<Digest> leaves;
};

class SubscriptionStream {
public:
    virtual ~SubscriptionStream() = default;
    virtual std::optional<SubEvent> next(int timeout_ms) = 0;
    virtual void close() = 0;
};

class CapsuleService {
public:
    virtual ~CapsuleService() = default;
    virtual Digest capsule_id() = 0;
    virtual uint32_t block_size() = 0;
    virtual Result<Receipt> append(ByteSpan encrypted, const SignedRoot& root) = 0;
    virtual Result<std::pair<Bytes, MerkleProof>> get(const Digest& digest) = 0;
    virtual Result<LeavesResult> leaves() = 0;
    virtual Result<MerkleProof> proof(const Digest& digest) = 0;
    virtual Result<CapsuleRecord> record(uint64_t sequence) = 0;
    virtual Result<std::unique_ptr<SubscriptionStream>> subscribe(uint64_t from_sequence) = 0;
};

// ---------------------------------------------------------------------------
// Middleware put protocol

enum class PutStatus : uint8_t {
    accepted = 0,
    bad_signature = 1,
    revoked = 2,
    forbidden = 3,
    stale_inode = 4,
    bad_request = 5,
    server_error = 6,
    unavailable = 7,
};

inline const char* put_status_name(PutStatus s) {
    switch (s) {
        case PutStatus::accepted: return "accepted";
        case PutStatus::bad_signature: return "bad-signature";
        case PutStatus::revoked: return "revoked";
        case PutStatus::forbidden: return "forbidden";
        case PutStatus::stale_inode: return "stale-inode";
        case PutStatus::bad_request: return "bad-request";
        case PutStatus::server_error: return "server-error";
        case PutStatus::unavailable: return "unavailable";
    }
    return "?";
}

struct PutRequest {
    Digest capsule_id;
    Bytes cfs_bytes; // canonical CfsBlock bytes, opaque to the transport
    uint64_t claimed_inode = 0;
    std::optional<Digest> expected_version; // inode-block CAS; nullopt = first version
};

struct PutResult {
    PutStatus status = PutStatus::unavailable;
    Digest digest;          // final outer digest when accepted
    uint64_t timestamp = 0; // middleware-assigned when accepted
    std::optional<Digest> current_version; // populated on stale_inode
    std::string message;

    bool ok() const { return status == PutStatus::accepted; }
};

class MiddlewareService {
public:
    virtual ~MiddlewareService() = default;
    virtual PutResult put(const PutRequest& req) = 0;
    virtual Status revoke(const Digest& key_id) = 0;
};

// ---------------------------------------------------------------------------
// Local (in-process) implementations

class LocalCapsule final : public CapsuleService {
public:
    explicit LocalCapsule(std::shared_ptr<CapsuleStore> store) : store_(std::move(store)) {}

    Digest capsule_id() override { return store_->capsule_id(); }
    uint32_t block_size() override { return store_->block_size(); }

    Result<Receipt> append(ByteSpan encrypted, const SignedRoot& root) override {
        return store_->append(encrypted, root);
    }

    Result<std::pair<Bytes, MerkleProof>> get(const Digest& digest) override {
        return store_->get(digest);
    }

    Result<LeavesResult> leaves() override {
        LeavesResult r;
        r.leaves = store_->leaves();
        r.length = store_->length();
        return r;
    }

    Result<MerkleProof> proof(const Digest& digest) override { return store_->proof(digest); }

    Result<CapsuleRecord> record(uint64_t sequence) override {
        return store_->record(sequence);
    }

    Result<std::unique_ptr<SubscriptionStream>> subscribe(uint64_t from_sequence) override {
        auto sub = store_->subscribe(from_sequence);
        if (!sub)
            return Result<std::unique_ptr<SubscriptionStream>>::err(sub.error().code,
                                                                    sub.error().message);
        class Local final : public SubscriptionStream {
        public:
            explicit Local(std::shared_ptr<Subscription> s) : s_(std::move(s)) {}
            ~Local() override { s_->close(); }
            std::optional<SubEvent> next(int timeout_ms) override { return s_->next(timeout_ms); }
            void close() override { s_->close(); }

        private:
            std::shared_ptr<Subscription> s_;
        };
        return std::unique_ptr<SubscriptionStream>(new Local(sub.take()));
    }

    std::shared_ptr<CapsuleStore> store() { return store_; }

private:
    std::shared_ptr<CapsuleStore> store_;
};

// ---------------------------------------------------------------------------
// Attack-simulation wrappers. Each forwards to the wrapped service after an
// optional byte-level mutation, standing in for an on-path attacker.

class TamperedMiddleware final : public MiddlewareService {
public:
    using Hook = std::function<void(PutRequest&)>;

    TamperedMiddleware(std::shared_ptr<MiddlewareService> inner, Hook hook)
        : inner_(std::move(inner)), hook_(std::move(hook)) {}

    PutResult put(const PutRequest& req) override {
        PutRequest mutated = req;
        if (hook_) hook_(mutated);
        return inner_->put(mutated);
    }

    Status revoke(const Digest& key_id) override { return inner_->revoke(key_id); }

private:
    std::shared_ptr<MiddlewareService> inner_;
    Hook hook_;
};

class TamperedCapsule final : public CapsuleService {
public:
    using AppendHook = std::function<void(Bytes&)>;

    TamperedCapsule(std::shared_ptr<CapsuleService> inner, AppendHook hook)
        : inner_(std::move(inner)), hook_(std::move(hook)) {}

    Digest capsule_id() override { return inner_->capsule_id(); }
    uint32_t block_size() override { return inner_->block_size(); }

    Result<Receipt> append(ByteSpan encrypted, const SignedRoot& root) override {
        Bytes mutated(encrypted.begin(), encrypted.end());
        if (hook_) hook_(mutated);
        return inner_->append(mutated, root);
    }

    Result<std::pair<Bytes, MerkleProof>> get(const Digest& d) override { return inner_->get(d); }
    Result<LeavesResult> leaves() override { return inner_->leaves(); }
    Result<MerkleProof> proof(const Digest& d) override { return inner_->proof(d); }
    Result<CapsuleRecord> record(uint64_t s) override { return inner_->record(s); }
    Result<std::unique_ptr<SubscriptionStream>> subscribe(uint64_t from) override {
        return inner_->subscribe(from);
    }

private:
    std::shared_ptr<CapsuleService> inner_;
    AppendHook hook_;
};

// ---------------------------------------------------------------------------
// Shared verified-read path: fetch a block by digest and establish that the
// bytes are authentic before anyone looks inside them.

struct VerifiedFetch {
    OuterBlock outer;
    Bytes plaintext;
    MerkleProof proof;
};

inline Result<VerifiedFetch> fetch_verified(CapsuleService& capsule,
                                            const CapsuleReadKey& read_key,
                                            const Digest& digest, bool crypto) {
    auto got = capsule.get(digest);
    if (!got) return Result<VerifiedFetch>::err(got.error().code, got.error().message);
    auto& [bytes, proof] = got.value();

    auto verified = unwrap_outer_block(read_key, bytes, crypto);
    if (!verified)
        return Result<VerifiedFetch>::err(verified.error().code, verified.error().message);
    if (verified.value().digest != digest)
        return Result<VerifiedFetch>::err(Errc::integrity,
                                          "served bytes hash to a different digest");
    if (crypto &&
        !verify_proof(digest, proof, read_key.capsule_id, read_key.verify_key, crypto))
        return Result<VerifiedFetch>::err(Errc::integrity, "merkle proof invalid");

    VerifiedFetch out;
    out.outer = std::move(verified.value().outer);
    out.plaintext = std::move(verified.value().plaintext);
    out.proof = std::move(proof);
    return out;
}

} // namespace cfs
