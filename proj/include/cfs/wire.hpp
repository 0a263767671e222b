#pragma once

// Wire protocol: length-prefixed frames over TCP. Signed payloads travel as
// opaque byte fields and are never re-encoded by this layer.

#include "cfs/service.hpp"

namespace cfs {

enum class MsgType : uint8_t {
    append_req = 1,
    append_resp = 2,
    get_req = 3,
    get_resp = 4,
    leaves_req = 5,
    leaves_resp = 6,
    proof_req = 7,
    proof_resp = 8,
    subscribe_req = 9,
    subscribe_resp = 10,
    sub_event = 11,
    record_req = 12,
    record_resp = 13,
    put_req = 20,
    put_resp = 21,
    revoke_req = 22,
    revoke_resp = 23,
};

struct Frame {
    MsgType type;
    Bytes body;
};

// Every response body begins with a status byte (Errc); zero means the
// payload follows, anything else is followed by a message string.
inline void encode_error(Encoder& e, const Error& err) {
    e.u8(static_cast<uint8_t>(err.code));
    e.str(err.message);
}

inline std::optional<Error> decode_status(Decoder& d) {
    uint8_t code = d.u8();
    if (code == 0) return std::nullopt;
    return Error{static_cast<Errc>(code), d.str()};
}

inline void encode_receipt(Encoder& e, const Receipt& r) {
    encode_digest(e, r.digest);
    e.u64(r.sequence);
    r.proof.encode(e);
}

inline Receipt decode_receipt(Decoder& d) {
    Receipt r;
    r.digest = decode_digest(d);
    r.sequence = d.u64();
    r.proof = MerkleProof::decode(d);
    return r;
}

inline void encode_signed_root(Encoder& e, const SignedRoot& r) { r.encode(e); }

inline void encode_put_request(Encoder& e, const PutRequest& req) {
    encode_digest(e, req.capsule_id);
    e.bytes(req.cfs_bytes);
    e.u64(req.claimed_inode);
    encode_opt_digest(e, req.expected_version);
}

inline PutRequest decode_put_request(Decoder& d) {
    PutRequest req;
    req.capsule_id = decode_digest(d);
    req.cfs_bytes = d.bytes();
    req.claimed_inode = d.u64();
    req.expected_version = decode_opt_digest(d);
    return req;
}

inline void encode_put_result(Encoder& e, const PutResult& r) {
    e.u8(static_cast<uint8_t>(r.status));
    encode_digest(e, r.digest);
    e.u64(r.timestamp);
    encode_opt_digest(e, r.current_version);
    e.str(r.message);
}

inline PutResult decode_put_result(Decoder& d) {
    PutResult r;
    r.status = static_cast<PutStatus>(d.u8());
    r.digest = decode_digest(d);
    r.timestamp = d.u64();
    r.current_version = decode_opt_digest(d);
    r.message = d.str();
    return r;
}

inline void encode_capsule_record(Encoder& e, const CapsuleRecord& rec) {
    e.u64(rec.sequence);
    e.bytes(rec.encrypted);
    rec.root.encode(e);
}

inline CapsuleRecord decode_capsule_record(Decoder& d) {
    CapsuleRecord rec;
    rec.sequence = d.u64();
    rec.encrypted = d.bytes();
    rec.root = SignedRoot::decode(d);
    return rec;
}

} // namespace cfs
