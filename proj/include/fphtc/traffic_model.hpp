#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace fphtc {

enum class AppType : std::uint8_t { CHAT, VOIP, AUDIO, VIDEO, FTP, MAIL, P2P, WEB };

inline constexpr std::size_t kAppCount = 8;
inline constexpr std::array<AppType, kAppCount> kAllApps{AppType::CHAT, AppType::VOIP,  AppType::AUDIO,
                                                         AppType::VIDEO, AppType::FTP,  AppType::MAIL,
                                                         AppType::P2P,  AppType::WEB};

/// Class of service. The underlying value is the stable integer encoding.
enum class CoSLabel : std::uint8_t { DelaySensitive = 0, DelayModerate = 1, DelayTolerant = 2 };

inline constexpr std::size_t kClassCount = 3;
inline constexpr std::array<CoSLabel, kClassCount> kAllClasses{CoSLabel::DelaySensitive, CoSLabel::DelayModerate,
                                                               CoSLabel::DelayTolerant};

constexpr int encode(CoSLabel c) noexcept { return static_cast<int>(c); }
CoSLabel decode_cos(int code);

/// CHAT, VOIP -> sensitive; AUDIO, VIDEO -> moderate; FTP, MAIL, P2P, WEB -> tolerant.
constexpr CoSLabel cos_of_app(AppType app) noexcept {
    switch (app) {
    case AppType::CHAT:
    case AppType::VOIP: return CoSLabel::DelaySensitive;
    case AppType::AUDIO:
    case AppType::VIDEO: return CoSLabel::DelayModerate;
    default: return CoSLabel::DelayTolerant;
    }
}

std::string_view to_string(AppType app) noexcept;
std::string_view to_string(CoSLabel label) noexcept;
std::optional<AppType> parse_app(std::string_view name) noexcept;
std::optional<CoSLabel> parse_cos(std::string_view name) noexcept;

using Ipv4 = std::uint32_t; // host byte order, a.b.c.d == a<<24 | b<<16 | c<<8 | d

std::string format_ipv4(Ipv4 ip);
std::optional<Ipv4> parse_ipv4(std::string_view text) noexcept;

enum class Direction : std::uint8_t { Forward, Backward };

namespace tcp_flag {
inline constexpr std::uint8_t FIN = 0x01;
inline constexpr std::uint8_t SYN = 0x02;
inline constexpr std::uint8_t RST = 0x04;
inline constexpr std::uint8_t PSH = 0x08;
inline constexpr std::uint8_t ACK = 0x10;
} // namespace tcp_flag

inline constexpr std::uint8_t kProtoTcp = 6;

struct Packet {
    double timestamp = 0.0; // seconds
    Ipv4 src_ip = 0;
    Ipv4 dst_ip = 0;
    std::uint16_t src_port = 0;
    std::uint16_t dst_port = 0;
    std::uint32_t payload_len = 0;
    std::uint8_t tcp_flags = 0;
    std::uint8_t protocol = kProtoTcp;
    Direction direction = Direction::Forward;

    friend bool operator==(const Packet&, const Packet&) = default;
};

Packet reversed(const Packet& p);

struct Endpoint {
    Ipv4 ip = 0;
    std::uint16_t port = 0;

    friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

/// Canonical bidirectional key: endpoint `a` orders at or before endpoint `b`.
struct FlowKey {
    Endpoint a;
    Endpoint b;
    std::uint8_t protocol = kProtoTcp;

    friend auto operator<=>(const FlowKey&, const FlowKey&) = default;
};

struct FlowKeyHash {
    std::size_t operator()(const FlowKey& k) const noexcept;
};

/// Throws DataError for non-TCP packets.
FlowKey canonical_flow_key(const Packet& p);

struct Flow {
    FlowKey key;
    std::vector<Packet> packets;
    std::optional<AppType> true_app;
    std::optional<CoSLabel> teacher_label;

    std::optional<CoSLabel> true_cos() const {
        return true_app ? std::optional<CoSLabel>(cos_of_app(*true_app)) : std::nullopt;
    }
    /// Endpoint that sent the first packet.
    Endpoint initiator() const;
    std::uint64_t total_payload() const;

    friend bool operator==(const Flow&, const Flow&) = default;
};

/// Throws InvariantError if the flow breaks the nonempty / ordered / same-key rules.
void validate_flow(const Flow& flow);

enum class LabelKind : std::uint8_t { Truth, TeacherPredicted };

struct FlowDataset {
    std::vector<Flow> flows;
    LabelKind label_kind = LabelKind::Truth;

    /// Label demanded by label_kind; throws DataError when missing.
    CoSLabel label_of(const Flow& f) const;
    std::array<std::size_t, kClassCount> class_counts() const;
};

struct AssemblyOptions {
    double idle_timeout = 600.0; // seconds
    bool drop_empty_payload = true;
};

struct AssemblyResult {
    std::vector<Flow> flows;
    std::size_t skipped_packets = 0;    // non-TCP or otherwise unusable
    std::size_t dropped_flows = 0;      // flows removed for having no payload
    std::size_t dropped_packets = 0;    // packets belonging to dropped flows
};

/// Groups packets into bidirectional flows. Packets are stably sorted by time
/// first. A flow closes on RST or FIN; a closed flow keeps absorbing teardown
/// segments until a new SYN or the idle timeout starts a fresh flow on that key.
AssemblyResult assemble_flows(std::vector<Packet> packets, const AssemblyOptions& opts = {});

/// Upsamples every class to the majority count (sampling with replacement).
FlowDataset balance_dataset(const FlowDataset& ds, std::uint64_t seed);

/// Disjoint train/test partition with |test| = round(test_fraction * |ds|).
std::pair<FlowDataset, FlowDataset> split_dataset(const FlowDataset& ds, double test_fraction, std::uint64_t seed);

/// Index form of balancing, shared by the flow and packet-record paths.
/// `class_of[i]` is the class code of item i. With `require_all_classes` a
/// missing class is a DataError; otherwise only present classes are equalized.
std::vector<std::size_t> balanced_indices(const std::vector<int>& class_of, std::uint64_t seed,
                                          bool require_all_classes = true);

} // namespace fphtc
