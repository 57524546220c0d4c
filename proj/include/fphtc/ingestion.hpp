#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fphtc/traffic_model.hpp"

namespace fphtc {

// ---- pcap ----------------------------------------------------------------

enum class LinkType : std::uint32_t { Ethernet = 1, RawIpv4 = 101 };

struct PcapReadResult {
    std::vector<Packet> packets;  // TCP/IPv4 packets, file order
    std::size_t records = 0;      // complete records seen
    std::size_t skipped = 0;      // records that were not usable TCP/IPv4
    std::size_t truncated = 0;    // partial trailing record (0 or 1)
    LinkType link_type = LinkType::Ethernet;
};

/// Classic pcap, either byte order, microsecond or nanosecond magic.
/// Throws FormatError on a bad global header.
PcapReadResult read_pcap(const std::string& path);
PcapReadResult read_pcap(std::istream& is);

/// Writes headers only (IPv4 + TCP, no payload bytes); orig_len and the IP
/// total length carry the payload size. Timestamps are written at 1 us.
void write_pcap(const std::string& path, std::span<const Packet> packets, LinkType link = LinkType::Ethernet);
void write_pcap(std::ostream& os, std::span<const Packet> packets, LinkType link = LinkType::Ethernet);

// ---- manifest ------------------------------------------------------------

struct CaptureManifest {
    std::vector<std::pair<std::string, AppType>> entries; // resolved path -> app

    /// Throws DataError when the path is not listed.
    AppType app_for(const std::string& path) const;
};

/// `path<TAB>APPTYPE` rows; relative paths resolve against the manifest's
/// directory. Throws FormatError (with line) or DataError (missing file).
CaptureManifest load_manifest(const std::string& manifest_path);
void write_manifest(const std::string& manifest_path, const CaptureManifest& manifest);

struct CaptureReadResult {
    std::vector<Flow> flows;
    std::size_t packets = 0;
    std::size_t skipped_packets = 0;
    std::size_t truncated_records = 0;
    std::size_t dropped_flows = 0;
};

/// Reads one capture and assembles flows tagged with the manifest's app.
CaptureReadResult read_capture(const std::string& path, const CaptureManifest& manifest);

/// Reads every capture listed in the manifest, in manifest order.
CaptureReadResult read_corpus(const CaptureManifest& manifest);

// ---- synthetic traffic ---------------------------------------------------

struct LogNormalParams {
    double mu = 0.0;
    double sigma = 1.0;
};

struct NormalParams {
    double mean = 0.0;
    double stddev = 1.0;
};

struct SyntheticProfile {
    LogNormalParams packet_count;
    NormalParams fwd_payload;          // bytes, clamped to [1, 1460]
    NormalParams bwd_payload;
    double inter_arrival_rate = 1.0;   // exponential rate, 1/s
    double forward_fraction = 0.5;     // probability a packet after the first is forward
    std::vector<std::uint16_t> port_pool;   // server (responder) ports
    std::vector<Ipv4> subnet_pool;          // client /24 prefixes, most popular first
    double subnet_skew = 0.0;               // client prefix i drawn with weight (i+1)^-skew
    std::vector<Ipv4> server_subnet_pool;   // server /24 prefixes

    /// Throws ConfigError naming the app and field.
    void validate(std::string_view app) const;
};

/// Header pools used by every app with probability `probability`; flows drawn
/// from here carry no header signal about their class.
struct SharedHeaderPool {
    double probability = 0.0;
    std::vector<Ipv4> client_subnets;
    std::vector<Ipv4> server_subnets;
    std::vector<std::uint16_t> ports;
};

struct SyntheticPreset {
    std::string name;
    std::map<AppType, SyntheticProfile> profiles;
    SharedHeaderPool shared;

    void validate() const;
};

std::vector<std::string> preset_names();
/// Throws ConfigError listing the valid names.
SyntheticPreset preset(std::string_view name);

using AppMix = std::map<AppType, double>;

/// Uniform weight over `apps`.
AppMix uniform_mix(std::span<const AppType> apps);

/// Exactly n_flows flows, apps drawn from `app_mix`, structure from the app's
/// profile. Flow keys are unique within the result. Deterministic per seed.
std::vector<Flow> generate_synthetic(const SyntheticPreset& preset, const AppMix& app_mix, std::size_t n_flows,
                                     std::uint64_t seed);
std::vector<Flow> generate_synthetic(const std::map<AppType, SyntheticProfile>& profiles, const AppMix& app_mix,
                                     std::size_t n_flows, std::uint64_t seed);

/// JSON form of a preset (schema in docs/config.md). Errors carry a JSON
/// pointer to the offending field.
SyntheticPreset preset_from_json(const nlohmann::json& j, const std::string& where = "");
nlohmann::json preset_to_json(const SyntheticPreset& p);

// ---- DPI stand-in --------------------------------------------------------

/// Reveals a flow's ground truth and accounts a fixed cost per call.
class DpiOracle {
public:
    explicit DpiOracle(double cost_per_flow = 1.0) : cost_per_flow_(cost_per_flow) {}

    /// Throws DataError when the flow has no ground truth.
    AppType label(const Flow& flow);

    std::size_t flows_labeled() const noexcept { return flows_labeled_; }
    double cost() const noexcept { return static_cast<double>(flows_labeled_) * cost_per_flow_; }

private:
    double cost_per_flow_;
    std::size_t flows_labeled_ = 0;
};

/// Stateless form of the oracle.
AppType dpi_label(const Flow& flow);

} // namespace fphtc
