#pragma once

// Hashing, signatures and the capsule write/read key material.
//
// Concrete scheme choices (recorded in every generated config so all three
// roles agree): SHA-256 digests, Ed25519 detached signatures over canonical
// bytes, XChaCha20-Poly1305 for the outer block encryption. The signature
// and AEAD layers can be disabled per deployment ("crypto: off") for
// measurement runs; digests are structural and always on.

#include "cfs/codec.hpp"
#include "cfs/common.hpp"

#include <sodium.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>

namespace cfs {

inline void crypto_init() {
    static const int rc = sodium_init();
    if (rc < 0) throw std::runtime_error("libsodium initialization failed");
}

// ---------------------------------------------------------------------------
// Digest

struct Digest {
    std::array<uint8_t, 32> v{};

    static constexpr size_t size = 32;

    bool is_zero() const {
        for (uint8_t b : v)
            if (b) return false;
        return true;
    }

    std::string hex() const { return hex_encode(v); }

    static std::optional<Digest> from_hex(std::string_view h) {
        auto raw = hex_decode(h);
        if (!raw || raw->size() != size) return std::nullopt;
        Digest d;
        std::memcpy(d.v.data(), raw->data(), size);
        return d;
    }

    static Digest from_raw(ByteSpan b) {
        Digest d;
        if (b.size() == size) std::memcpy(d.v.data(), b.data(), size);
        return d;
    }

    ByteSpan span() const { return ByteSpan(v.data(), v.size()); }

    auto operator<=>(const Digest&) const = default;
};

// The chain-genesis sentinel: the all-zero digest.
inline const Digest kGenesisHash{};

struct DigestHash {
    size_t operator()(const Digest& d) const {
        size_t h;
        std::memcpy(&h, d.v.data(), sizeof(h));
        return h;
    }
};

inline Digest sha256(ByteSpan data) {
    crypto_init();
    Digest d;
    crypto_hash_sha256(d.v.data(), data.data(), data.size());
    return d;
}

inline void encode_digest(Encoder& e, const Digest& d) { e.raw(d.span()); }

inline Digest decode_digest(Decoder& d) { return Digest::from_raw(d.raw(32)); }

inline void encode_opt_digest(Encoder& e, const std::optional<Digest>& d) {
    e.u8(d.has_value() ? 1 : 0);
    if (d) e.raw(d->span());
}

inline std::optional<Digest> decode_opt_digest(Decoder& d) {
    if (d.u8() == 0) return std::nullopt;
    return decode_digest(d);
}

// ---------------------------------------------------------------------------
// Signing keys (Ed25519)

// key_id is the digest of the canonical encoding of the public key (length
// prefix included), so identities survive any future key-size change.
inline Digest key_id_of(ByteSpan public_key) {
    Encoder e;
    e.bytes(public_key);
    return sha256(e.view());
}

struct KeyPair {
    Bytes public_key;  // 32 bytes
    Bytes private_key; // 64 bytes (libsodium secret key format)
    Digest key_id;

    static KeyPair generate() {
        crypto_init();
        KeyPair kp;
        kp.public_key.resize(crypto_sign_PUBLICKEYBYTES);
        kp.private_key.resize(crypto_sign_SECRETKEYBYTES);
        crypto_sign_keypair(kp.public_key.data(), kp.private_key.data());
        kp.key_id = key_id_of(kp.public_key);
        return kp;
    }

    // Deterministic derivation, used by test corpora that must reproduce
    // identical keys across independent processes.
    static KeyPair from_seed(ByteSpan seed32) {
        crypto_init();
        if (seed32.size() != crypto_sign_SEEDBYTES)
            throw std::invalid_argument("keypair seed must be 32 bytes");
        KeyPair kp;
        kp.public_key.resize(crypto_sign_PUBLICKEYBYTES);
        kp.private_key.resize(crypto_sign_SECRETKEYBYTES);
        crypto_sign_seed_keypair(kp.public_key.data(), kp.private_key.data(), seed32.data());
        kp.key_id = key_id_of(kp.public_key);
        return kp;
    }
};

struct Signature {
    Bytes bytes;
    Digest signer_key_id;

    void encode(Encoder& e) const {
        e.bytes(bytes);
        encode_digest(e, signer_key_id);
    }

    static Signature decode(Decoder& d) {
        Signature s;
        s.bytes = d.bytes();
        s.signer_key_id = decode_digest(d);
        return s;
    }

    bool operator==(const Signature&) const = default;
};

inline Result<Signature> sign_payload(const KeyPair& kp, ByteSpan payload) {
    crypto_init();
    if (kp.private_key.size() != crypto_sign_SECRETKEYBYTES)
        return Result<Signature>::err(Errc::bad_request, "malformed signing key");
    Signature s;
    s.bytes.resize(crypto_sign_BYTES);
    crypto_sign_detached(s.bytes.data(), nullptr, payload.data(), payload.size(),
                         kp.private_key.data());
    s.signer_key_id = kp.key_id;
    return s;
}

inline bool verify_payload(ByteSpan public_key, ByteSpan payload, const Signature& sig) {
    crypto_init();
    if (public_key.size() != crypto_sign_PUBLICKEYBYTES) return false;
    if (sig.bytes.size() != crypto_sign_BYTES) return false;
    return crypto_sign_verify_detached(sig.bytes.data(), payload.data(), payload.size(),
                                       public_key.data()) == 0;
}

// ---------------------------------------------------------------------------
// Outer-block encryption (XChaCha20-Poly1305 with the capsule id as
// associated data, so a block cannot be replayed into another capsule).

inline constexpr size_t kSymKeyBytes = crypto_aead_xchacha20poly1305_ietf_KEYBYTES;

inline Bytes aead_encrypt(ByteSpan sym_key, ByteSpan plaintext, ByteSpan ad) {
    crypto_init();
    if (sym_key.size() != kSymKeyBytes) throw std::invalid_argument("bad sym key size");
    Bytes out(crypto_aead_xchacha20poly1305_ietf_NPUBBYTES + plaintext.size() +
              crypto_aead_xchacha20poly1305_ietf_ABYTES);
    randombytes_buf(out.data(), crypto_aead_xchacha20poly1305_ietf_NPUBBYTES);
    unsigned long long clen = 0;
    crypto_aead_xchacha20poly1305_ietf_encrypt(
        out.data() + crypto_aead_xchacha20poly1305_ietf_NPUBBYTES, &clen, plaintext.data(),
        plaintext.size(), ad.data(), ad.size(), nullptr, out.data(), sym_key.data());
    out.resize(crypto_aead_xchacha20poly1305_ietf_NPUBBYTES + clen);
    return out;
}

inline std::optional<Bytes> aead_decrypt(ByteSpan sym_key, ByteSpan ciphertext, ByteSpan ad) {
    crypto_init();
    if (sym_key.size() != kSymKeyBytes) return std::nullopt;
    if (ciphertext.size() <
        crypto_aead_xchacha20poly1305_ietf_NPUBBYTES + crypto_aead_xchacha20poly1305_ietf_ABYTES)
        return std::nullopt;
    const uint8_t* nonce = ciphertext.data();
    const uint8_t* ct = ciphertext.data() + crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
    size_t ct_len = ciphertext.size() - crypto_aead_xchacha20poly1305_ietf_NPUBBYTES;
    Bytes out(ct_len);
    unsigned long long mlen = 0;
    if (crypto_aead_xchacha20poly1305_ietf_decrypt(out.data(), &mlen, nullptr, ct, ct_len,
                                                   ad.data(), ad.size(), nonce,
                                                   sym_key.data()) != 0)
        return std::nullopt;
    out.resize(mlen);
    return out;
}

// ---------------------------------------------------------------------------
// Capsule key bundles
//
// Write key: symmetric key plus the middleware signing keypair. Held only by
// the middleware (and the init tool that mints it).
// Read key: symmetric key plus the middleware verification key. Shared with
// every client and with the storage server, whose admission checks need it.

struct CapsuleWriteKey {
    Digest capsule_id;
    Bytes sym_key;
    KeyPair signer;
};

struct CapsuleReadKey {
    Digest capsule_id;
    Bytes sym_key;
    Bytes verify_key; // middleware public key
    Digest verify_key_id;
};

inline CapsuleReadKey read_key_of(const CapsuleWriteKey& wk) {
    return CapsuleReadKey{wk.capsule_id, wk.sym_key, wk.signer.public_key, wk.signer.key_id};
}

// ---------------------------------------------------------------------------
// Key files: 4-byte magic + kind byte + length-prefixed fields.

inline constexpr char kKeyFileMagic[4] = {'C', 'F', 'S', 'K'};

enum class KeyFileKind : uint8_t { keypair = 1, capsule_write = 2, capsule_read = 3 };

namespace detail {

inline Status write_file_atomic(const std::filesystem::path& path, ByteSpan data) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) return Status::err(Errc::io, "cannot open " + tmp.string());
        f.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size()));
        if (!f) return Status::err(Errc::io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) return Status::err(Errc::io, "rename failed: " + ec.message());
    return ok_status();
}

inline Result<Bytes> read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return Result<Bytes>::err(Errc::not_found, "cannot open " + path.string());
    Bytes data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return data;
}

} // namespace detail

inline Status save_keypair(const std::filesystem::path& path, const KeyPair& kp) {
    Encoder e;
    e.raw(ByteSpan(reinterpret_cast<const uint8_t*>(kKeyFileMagic), 4));
    e.u8(static_cast<uint8_t>(KeyFileKind::keypair));
    e.bytes(kp.public_key);
    e.bytes(kp.private_key);
    return detail::write_file_atomic(path, e.view());
}

inline Status save_write_key(const std::filesystem::path& path, const CapsuleWriteKey& wk) {
    Encoder e;
    e.raw(ByteSpan(reinterpret_cast<const uint8_t*>(kKeyFileMagic), 4));
    e.u8(static_cast<uint8_t>(KeyFileKind::capsule_write));
    encode_digest(e, wk.capsule_id);
    e.bytes(wk.sym_key);
    e.bytes(wk.signer.public_key);
    e.bytes(wk.signer.private_key);
    return detail::write_file_atomic(path, e.view());
}

inline Status save_read_key(const std::filesystem::path& path, const CapsuleReadKey& rk) {
    Encoder e;
    e.raw(ByteSpan(reinterpret_cast<const uint8_t*>(kKeyFileMagic), 4));
    e.u8(static_cast<uint8_t>(KeyFileKind::capsule_read));
    encode_digest(e, rk.capsule_id);
    e.bytes(rk.sym_key);
    e.bytes(rk.verify_key);
    return detail::write_file_atomic(path, e.view());
}

namespace detail {

inline Result<Decoder> open_key_file(const Bytes& data, KeyFileKind want) {
    Decoder d(data);
    auto magic = d.raw(4);
    if (!d.valid() || std::memcmp(magic.data(), kKeyFileMagic, 4) != 0)
        return Result<Decoder>::err(Errc::bad_request, "not a key file");
    if (d.u8() != static_cast<uint8_t>(want))
        return Result<Decoder>::err(Errc::bad_request, "wrong key file kind");
    return d;
}

} // namespace detail

inline Result<KeyPair> load_keypair(const std::filesystem::path& path) {
    auto data = detail::read_file(path);
    if (!data) return Result<KeyPair>::err(data.error().code, data.error().message);
    auto d = detail::open_key_file(data.value(), KeyFileKind::keypair);
    if (!d) return Result<KeyPair>::err(d.error().code, d.error().message);
    KeyPair kp;
    kp.public_key = d.value().bytes();
    kp.private_key = d.value().bytes();
    if (!d.value().valid())
        return Result<KeyPair>::err(Errc::bad_request, "truncated key file");
    kp.key_id = key_id_of(kp.public_key);
    return kp;
}

inline Result<CapsuleWriteKey> load_write_key(const std::filesystem::path& path) {
    auto data = detail::read_file(path);
    if (!data) return Result<CapsuleWriteKey>::err(data.error().code, data.error().message);
    auto d = detail::open_key_file(data.value(), KeyFileKind::capsule_write);
    if (!d) return Result<CapsuleWriteKey>::err(d.error().code, d.error().message);
    CapsuleWriteKey wk;
    wk.capsule_id = decode_digest(d.value());
    wk.sym_key = d.value().bytes();
    wk.signer.public_key = d.value().bytes();
    wk.signer.private_key = d.value().bytes();
    if (!d.value().valid())
        return Result<CapsuleWriteKey>::err(Errc::bad_request, "truncated key file");
    wk.signer.key_id = key_id_of(wk.signer.public_key);
    return wk;
}

inline Result<CapsuleReadKey> load_read_key(const std::filesystem::path& path) {
    auto data = detail::read_file(path);
    if (!data) return Result<CapsuleReadKey>::err(data.error().code, data.error().message);
    auto d = detail::open_key_file(data.value(), KeyFileKind::capsule_read);
    if (!d) return Result<CapsuleReadKey>::err(d.error().code, d.error().message);
    CapsuleReadKey rk;
    rk.capsule_id = decode_digest(d.value());
    rk.sym_key = d.value().bytes();
    rk.verify_key = d.value().bytes();
    if (!d.value().valid())
        return Result<CapsuleReadKey>::err(Errc::bad_request, "truncated key file");
    rk.verify_key_id = key_id_of(rk.verify_key);
    return rk;
}

} // namespace cfs
