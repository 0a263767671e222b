#pragma once

// Canonical byte encoding. Every structure that is hashed or signed goes
// through this encoder, never through the wire framing, so the bytes a
// signature covers are identical on every platform and in every process.
//
// Grammar (see docs/encoding.md): little-endian fixed-width integers,
// u32 length prefixes for variable data, fixed field order, no maps.

#include "cfs/common.hpp"

#include <array>

namespace cfs {

class Encoder {
public:
    void u8(uint8_t v) { out_.push_back(v); }

    void u16(uint16_t v) {
        out_.push_back(static_cast<uint8_t>(v));
        out_.push_back(static_cast<uint8_t>(v >> 8));
    }

    void u32(uint32_t v) {
        for (int i = 0; i < 4; i++) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void u64(uint64_t v) {
        for (int i = 0; i < 8; i++) out_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }

    void raw(ByteSpan b) { out_.insert(out_.end(), b.begin(), b.end()); }

    void bytes(ByteSpan b) {
        u32(static_cast<uint32_t>(b.size()));
        raw(b);
    }

    void str(std::string_view s) {
        u32(static_cast<uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }

    const Bytes& view() const { return out_; }
    Bytes take() { return std::move(out_); }
    size_t size() const { return out_.size(); }

private:
    Bytes out_;
};

// Sticky-failure decoder for untrusted input: after the first short read or
// bound violation every accessor returns zero values and valid() is false.
class Decoder {
public:
    explicit Decoder(ByteSpan data) : data_(data) {}

    uint8_t u8() {
        if (!need(1)) return 0;
        return data_[pos_++];
    }

    uint16_t u16() {
        if (!need(2)) return 0;
        uint16_t v = static_cast<uint16_t>(data_[pos_]) |
                     static_cast<uint16_t>(data_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }

    uint32_t u32() {
        if (!need(4)) return 0;
        uint32_t v = 0;
        for (int i = 0; i < 4; i++) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    uint64_t u64() {
        if (!need(8)) return 0;
        uint64_t v = 0;
        for (int i = 0; i < 8; i++) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    Bytes bytes() {
        uint32_t n = u32();
        if (!need(n)) return {};
        Bytes out(data_.begin() + pos_, data_.begin() + pos_ + n);
        pos_ += n;
        return out;
    }

    std::string str() {
        uint32_t n = u32();
        if (!need(n)) return {};
        std::string out(reinterpret_cast<const char*>(data_.data()) + pos_, n);
        pos_ += n;
        return out;
    }

    ByteSpan raw(size_t n) {
        if (!need(n)) return {};
        ByteSpan out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    bool valid() const { return ok_; }
    bool at_end() const { return ok_ && pos_ == data_.size(); }
    size_t remaining() const { return ok_ ? data_.size() - pos_ : 0; }
    void fail() { ok_ = false; }

private:
    bool need(size_t n) {
        if (!ok_ || data_.size() - pos_ < n) {
            ok_ = false;
            return false;
        }
        return true;
    }

    ByteSpan data_;
    size_t pos_ = 0;
    bool ok_ = true;
};

} // namespace cfs
