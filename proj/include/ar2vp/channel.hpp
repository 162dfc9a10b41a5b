#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "ar2vp/geometry.hpp"
#include "ar2vp/model.hpp"

namespace ar2vp {

enum class PayloadKind : int { pose = 0, feature = 1, compressed_feature = 2 };
inline constexpr int kNumPayloadKinds = 3;

enum class WirePrecision : int { f32 = 4, f64 = 8 };

// Wire header, 20 bytes little-endian:
//   u32 magic 'AR2P' | u16 version | u16 kind | i32 sender | u16 h | u16 w |
//   u16 c | u8 bytes-per-float | u8 reserved
inline constexpr std::uint32_t kWireMagic = 0x50325241;  // "AR2P"
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kWireHeaderBytes = 20;

struct Message {
    int sender = -1;
    PayloadKind kind = PayloadKind::feature;
    std::vector<std::uint8_t> payload;  // full wire bytes, header included

    std::size_t byte_count() const { return payload.size(); }
    std::size_t payload_bytes() const { return payload.size() - kWireHeaderBytes; }
};

namespace detail {

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
    const std::size_t off = buf.size();
    buf.resize(off + sizeof(T));
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& buf, std::size_t& off) {
    if (off + sizeof(T) > buf.size()) throw std::runtime_error("wire: truncated buffer");
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace detail

inline Message serialize_feature(const FeatureMap& m, int sender, PayloadKind kind,
                                 WirePrecision prec = WirePrecision::f64) {
    Message msg;
    msg.sender = sender;
    msg.kind = kind;
    auto& buf = msg.payload;
    buf.reserve(kWireHeaderBytes + m.size() * static_cast<std::size_t>(prec));
    detail::put<std::uint32_t>(buf, kWireMagic);
    detail::put<std::uint16_t>(buf, kWireVersion);
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(kind));
    detail::put<std::int32_t>(buf, sender);
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(m.h));
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(m.w));
    detail::put<std::uint16_t>(buf, static_cast<std::uint16_t>(m.c));
    detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(prec));
    detail::put<std::uint8_t>(buf, 0);
    if (prec == WirePrecision::f64) {
        for (double x : m.v) detail::put<double>(buf, x);
    } else {
        for (double x : m.v) detail::put<float>(buf, static_cast<float>(x));
    }
    return msg;
}

inline FeatureMap deserialize_feature(const Message& msg) {
    std::size_t off = 0;
    const auto& buf = msg.payload;
    if (detail::get<std::uint32_t>(buf, off) != kWireMagic)
        throw std::runtime_error("wire: bad magic");
    if (detail::get<std::uint16_t>(buf, off) != kWireVersion)
        throw std::runtime_error("wire: unsupported version");
    detail::get<std::uint16_t>(buf, off);  // kind, carried in the Message as well
    detail::get<std::int32_t>(buf, off);   // sender
    const int h = detail::get<std::uint16_t>(buf, off);
    const int w = detail::get<std::uint16_t>(buf, off);
    const int c = detail::get<std::uint16_t>(buf, off);
    const int prec = detail::get<std::uint8_t>(buf, off);
    detail::get<std::uint8_t>(buf, off);  // reserved
    if (prec != 4 && prec != 8) throw std::runtime_error("wire: bad float width");
    const std::size_t count = static_cast<std::size_t>(h) * w * c;
    if (buf.size() != kWireHeaderBytes + count * static_cast<std::size_t>(prec))
        throw std::runtime_error("wire: payload length mismatch");
    FeatureMap m(h, w, c, msg.sender);
    if (prec == 8) {
        for (std::size_t i = 0; i < count; ++i) m.v[i] = detail::get<double>(buf, off);
    } else {
        for (std::size_t i = 0; i < count; ++i) m.v[i] = detail::get<float>(buf, off);
    }
    return m;
}

inline Message serialize_pose(const Pose& p, int sender) {
    FeatureMap m(1, 1, 6, sender);
    m.v = {p.position.x, p.position.y, p.rotation.a, p.rotation.b, p.rotation.c, p.rotation.d};
    return serialize_feature(m, sender, PayloadKind::pose, WirePrecision::f64);
}

inline Pose deserialize_pose(const Message& msg) {
    const FeatureMap m = deserialize_feature(msg);
    if (m.h != 1 || m.w != 1 || m.c != 6) throw std::runtime_error("wire: bad pose payload shape");
    Pose p;
    p.position = {m.v[0], m.v[1]};
    p.rotation = {m.v[2], m.v[3], m.v[4], m.v[5]};
    return p;
}

struct KindTotals {
    std::uint64_t payload_bytes = 0;
    std::uint64_t header_bytes = 0;
    std::uint64_t messages = 0;

    std::uint64_t bytes() const { return payload_bytes + header_bytes; }

    KindTotals& operator+=(const KindTotals& o) {
        payload_bytes += o.payload_bytes;
        header_bytes += o.header_bytes;
        messages += o.messages;
        return *this;
    }
};

// Pipeline-level accounting delta: what one simulation step transmitted.
struct ChannelUsage {
    std::array<KindTotals, kNumPayloadKinds> by_kind{};
    std::map<int, std::uint64_t> by_sender;

    void record(const Message& msg) {
        auto& k = by_kind[static_cast<int>(msg.kind)];
        k.payload_bytes += msg.payload_bytes();
        k.header_bytes += kWireHeaderBytes;
        k.messages += 1;
        by_sender[msg.sender] += msg.byte_count();
    }

    ChannelUsage& operator+=(const ChannelUsage& o) {
        for (int i = 0; i < kNumPayloadKinds; ++i) by_kind[i] += o.by_kind[i];
        for (const auto& [s, b] : o.by_sender) by_sender[s] += b;
        return *this;
    }

    std::uint64_t total_bytes() const {
        std::uint64_t t = 0;
        for (const auto& k : by_kind) t += k.bytes();
        return t;
    }

    std::uint64_t feature_payload_bytes() const {
        return by_kind[static_cast<int>(PayloadKind::feature)].payload_bytes +
               by_kind[static_cast<int>(PayloadKind::compressed_feature)].payload_bytes;
    }

    std::uint64_t feature_messages() const {
        return by_kind[static_cast<int>(PayloadKind::feature)].messages +
               by_kind[static_cast<int>(PayloadKind::compressed_feature)].messages;
    }
};

// Per-step and cumulative byte totals for the simulated broadcast channel.
// A send is counted once regardless of the recipient count.
struct BandwidthLedger {
    ChannelUsage cumulative;
    ChannelUsage current_step;
    std::vector<ChannelUsage> completed_steps;

    void record(const Message& msg) {
        cumulative.record(msg);
        current_step.record(msg);
    }

    void merge(const ChannelUsage& delta) {
        cumulative += delta;
        current_step += delta;
    }

    void end_step() {
        completed_steps.push_back(current_step);
        current_step = ChannelUsage{};
    }
};

// Lossless zero-latency delivery: every recipient gets an identical copy;
// the ledger is charged once for the send.
inline std::vector<Message> broadcast(const Message& msg, const std::set<int>& recipients,
                                      BandwidthLedger& ledger) {
    ledger.record(msg);
    return std::vector<Message>(recipients.size(), msg);
}

}  // namespace ar2vp
