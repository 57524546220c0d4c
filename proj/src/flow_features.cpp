#include "fphtc/flow_features.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "fphtc/error.hpp"
#include "fphtc/numfmt.hpp"

namespace fphtc {

namespace {

// Order of the per-group block; must match GroupStats::write.
constexpr std::array<std::pair<std::string_view, std::string_view>, 11> kGroupStats{{
    {"pkt_count", "packets"},
    {"payload_bytes", "bytes"},
    {"payload_len_min", "bytes"},
    {"payload_len_max", "bytes"},
    {"payload_len_mean", "bytes"},
    {"payload_len_var", "bytes^2"},
    {"payload_len_std", "bytes"},
    {"iat_min", "s"},
    {"iat_max", "s"},
    {"iat_mean", "s"},
    {"iat_var", "s^2"},
}};

FeatureSchema build_schema() {
    FeatureSchema s;
    s.version = std::string(kSchemaVersion);
    const std::array<std::pair<std::string_view, std::string_view>, 3> groups{{
        {"fwd_", "forward packets"}, {"bwd_", "backward packets"}, {"", "all packets"}}};
    for (const auto& [prefix, who] : groups)
        for (const auto& [stat, unit] : kGroupStats)
            s.features.push_back({std::string(prefix) + std::string(stat), std::string(stat) + " over " + std::string(who),
                                  std::string(unit)});
    s.features.push_back({"duration", "last minus first packet timestamp", "s"});
    s.features.push_back({"pkts_per_s", "packet count / duration (0 if duration is 0)", "1/s"});
    s.features.push_back({"bytes_per_s", "payload bytes / duration (0 if duration is 0)", "bytes/s"});
    s.features.push_back({"down_up_pkt_ratio", "bwd packets / fwd packets (0 if no fwd)", "ratio"});
    s.features.push_back({"down_up_byte_ratio", "bwd bytes / fwd bytes (0 if no fwd bytes)", "ratio"});
    s.features.push_back({"src_ip", "initiator IPv4 as a 32-bit decimal", "address"});
    s.features.push_back({"dst_ip", "responder IPv4 as a 32-bit decimal", "address"});
    s.features.push_back({"src_port", "initiator port", "port"});
    s.features.push_back({"dst_port", "responder port", "port"});
    s.features.push_back({"fwd_present", "1 if any forward packet", "flag"});
    s.features.push_back({"bwd_present", "1 if any backward packet", "flag"});
    return s;
}

// Time differences are taken at capture (microsecond) resolution, which makes
// every timing feature exactly invariant under a shift of the time origin.
double gap_seconds(double later, double earlier) { return std::round((later - earlier) * 1e6) / 1e6; }

struct GroupStats {
    double count = 0;
    double bytes = 0;
    double len_min = 0, len_max = 0;
    double len_sum = 0, len_sumsq = 0;
    double iat_min = 0, iat_max = 0;
    double iat_sum = 0, iat_sumsq = 0;
    double iat_count = 0;
    double last_ts = 0;

    void add(const Packet& p) {
        const double len = p.payload_len;
        if (count == 0) {
            len_min = len_max = len;
        } else {
            len_min = std::min(len_min, len);
            len_max = std::max(len_max, len);
            const double gap = gap_seconds(p.timestamp, last_ts);
            if (iat_count == 0) {
                iat_min = iat_max = gap;
            } else {
                iat_min = std::min(iat_min, gap);
                iat_max = std::max(iat_max, gap);
            }
            iat_sum += gap;
            iat_sumsq += gap * gap;
            ++iat_count;
        }
        ++count;
        bytes += len;
        len_sum += len;
        len_sumsq += len * len;
        last_ts = p.timestamp;
    }

    // population variance, 0 for n <= 1
    static double variance(double sum, double sumsq, double n) {
        if (n <= 1) return 0.0;
        const double mean = sum / n;
        return std::max(0.0, sumsq / n - mean * mean);
    }

    double* write(double* out) const {
        const double len_mean = count > 0 ? len_sum / count : 0.0;
        const double len_var = variance(len_sum, len_sumsq, count);
        *out++ = count;
        *out++ = bytes;
        *out++ = len_min;
        *out++ = len_max;
        *out++ = len_mean;
        *out++ = len_var;
        *out++ = std::sqrt(len_var);
        *out++ = iat_min;
        *out++ = iat_max;
        *out++ = iat_count > 0 ? iat_sum / iat_count : 0.0;
        *out++ = variance(iat_sum, iat_sumsq, iat_count);
        return out;
    }
};

} // namespace

bool FeatureSchema::contains(std::string_view name) const noexcept {
    return std::any_of(features.begin(), features.end(), [&](const FeatureInfo& f) { return f.name == name; });
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features.size(); ++i)
        if (features[i].name == name) return i;
    throw ConfigError("unknown feature '" + std::string(name) + "'");
}

const FeatureSchema& schema() {
    static const FeatureSchema s = build_schema();
    return s;
}

void extract_features_into(const Flow& flow, std::span<double> out) {
    if (out.size() != kFeatureDim) throw InvariantError("feature row has wrong dimension");
    GroupStats fwd, bwd, all;
    for (const auto& p : flow.packets) {
        (p.direction == Direction::Forward ? fwd : bwd).add(p);
        all.add(p);
    }
    double* w = out.data();
    w = fwd.write(w);
    w = bwd.write(w);
    w = all.write(w);

    const double duration =
        flow.packets.empty() ? 0.0 : gap_seconds(flow.packets.back().timestamp, flow.packets.front().timestamp);
    *w++ = duration;
    *w++ = duration > 0 ? all.count / duration : 0.0;
    *w++ = duration > 0 ? all.bytes / duration : 0.0;
    *w++ = fwd.count > 0 ? bwd.count / fwd.count : 0.0;
    *w++ = fwd.bytes > 0 ? bwd.bytes / fwd.bytes : 0.0;

    // Initiator is the sender of forward-tagged packets.
    Endpoint src = flow.key.a, dst = flow.key.b;
    for (const auto& p : flow.packets) {
        if (p.direction == Direction::Forward) {
            src = {p.src_ip, p.src_port};
            dst = {p.dst_ip, p.dst_port};
        } else {
            src = {p.dst_ip, p.dst_port};
            dst = {p.src_ip, p.src_port};
        }
        break;
    }
    *w++ = static_cast<double>(src.ip);
    *w++ = static_cast<double>(dst.ip);
    *w++ = static_cast<double>(src.port);
    *w++ = static_cast<double>(dst.port);
    *w++ = fwd.count > 0 ? 1.0 : 0.0;
    *w++ = bwd.count > 0 ? 1.0 : 0.0;
}

FeatureVector extract_features(const Flow& flow) {
    FeatureVector v(kFeatureDim, 0.0);
    extract_features_into(flow, v);
    return v;
}

void write_feature_csv(std::ostream& os, std::span<const Flow> flows, std::span<const CoSLabel> labels) {
    if (flows.size() != labels.size()) throw DataError("write_feature_csv: flows and labels differ in length");
    const auto& s = schema();
    for (const auto& f : s.features) os << f.name << ',';
    os << "label\n";
    FeatureVector row(kFeatureDim);
    for (std::size_t i = 0; i < flows.size(); ++i) {
        extract_features_into(flows[i], row);
        for (double v : row) os << format_double(v) << ',';
        os << to_string(labels[i]) << '\n';
    }
}

} // namespace fphtc
