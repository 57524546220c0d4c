#include "fphtc/traffic_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>

#include "fphtc/error.hpp"
#include "fphtc/rng.hpp"

namespace fphtc {

namespace {

constexpr std::array<std::string_view, kAppCount> kAppNames{"CHAT", "VOIP", "AUDIO", "VIDEO",
                                                            "FTP",  "MAIL", "P2P",   "WEB"};
constexpr std::array<std::string_view, kClassCount> kCosNames{"DelaySensitive", "DelayModerate", "DelayTolerant"};

} // namespace

CoSLabel decode_cos(int code) {
    if (code < 0 || code >= static_cast<int>(kClassCount))
        throw DataError("invalid CoS encoding " + std::to_string(code));
    return static_cast<CoSLabel>(code);
}

std::string_view to_string(AppType app) noexcept { return kAppNames[static_cast<std::size_t>(app)]; }
std::string_view to_string(CoSLabel label) noexcept { return kCosNames[static_cast<std::size_t>(label)]; }

std::optional<AppType> parse_app(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kAppCount; ++i)
        if (kAppNames[i] == name) return static_cast<AppType>(i);
    return std::nullopt;
}

std::optional<CoSLabel> parse_cos(std::string_view name) noexcept {
    for (std::size_t i = 0; i < kClassCount; ++i)
        if (kCosNames[i] == name) return static_cast<CoSLabel>(i);
    return std::nullopt;
}

std::string format_ipv4(Ipv4 ip) {
    return std::to_string(ip >> 24) + '.' + std::to_string((ip >> 16) & 0xFF) + '.' +
           std::to_string((ip >> 8) & 0xFF) + '.' + std::to_string(ip & 0xFF);
}

std::optional<Ipv4> parse_ipv4(std::string_view text) noexcept {
    Ipv4 out = 0;
    const char* p = text.data();
    const char* end = text.data() + text.size();
    for (int octet = 0; octet < 4; ++octet) {
        if (octet > 0) {
            if (p == end || *p != '.') return std::nullopt;
            ++p;
        }
        unsigned v = 0;
        auto [next, ec] = std::from_chars(p, end, v);
        if (ec != std::errc{} || next == p || v > 255 || next - p > 3) return std::nullopt;
        out = (out << 8) | v;
        p = next;
    }
    if (p != end) return std::nullopt;
    return out;
}

Packet reversed(const Packet& p) {
    Packet r = p;
    std::swap(r.src_ip, r.dst_ip);
    std::swap(r.src_port, r.dst_port);
    r.direction = p.direction == Direction::Forward ? Direction::Backward : Direction::Forward;
    return r;
}

std::size_t FlowKeyHash::operator()(const FlowKey& k) const noexcept {
    std::uint64_t h = (std::uint64_t{k.a.ip} << 32) | (std::uint64_t{k.a.port} << 16) | k.protocol;
    std::uint64_t l = (std::uint64_t{k.b.ip} << 32) | k.b.port;
    return static_cast<std::size_t>(mix64(h ^ mix64(l)));
}

FlowKey canonical_flow_key(const Packet& p) {
    if (p.protocol != kProtoTcp)
        throw DataError("canonical_flow_key: protocol " + std::to_string(p.protocol) + " is not TCP");
    Endpoint s{p.src_ip, p.src_port};
    Endpoint d{p.dst_ip, p.dst_port};
    if (d < s) std::swap(s, d);
    return FlowKey{s, d, kProtoTcp};
}

Endpoint Flow::initiator() const {
    if (packets.empty()) return key.a;
    return {packets.front().src_ip, packets.front().src_port};
}

std::uint64_t Flow::total_payload() const {
    std::uint64_t sum = 0;
    for (const auto& p : packets) sum += p.payload_len;
    return sum;
}

void validate_flow(const Flow& flow) {
    if (flow.packets.empty()) throw InvariantError("flow has no packets");
    double last = flow.packets.front().timestamp;
    for (const auto& p : flow.packets) {
        if (!std::isfinite(p.timestamp) || p.timestamp < last)
            throw InvariantError("flow packets are not ordered by timestamp");
        last = p.timestamp;
        if (canonical_flow_key(p) != flow.key) throw InvariantError("flow packet does not share the flow key");
    }
}

CoSLabel FlowDataset::label_of(const Flow& f) const {
    if (label_kind == LabelKind::Truth) {
        if (!f.true_app) throw DataError("flow has no ground-truth application label");
        return cos_of_app(*f.true_app);
    }
    if (!f.teacher_label) throw DataError("flow has no teacher label");
    return *f.teacher_label;
}

std::array<std::size_t, kClassCount> FlowDataset::class_counts() const {
    std::array<std::size_t, kClassCount> counts{};
    for (const auto& f : flows) ++counts[static_cast<std::size_t>(encode(label_of(f)))];
    return counts;
}

AssemblyResult assemble_flows(std::vector<Packet> packets, const AssemblyOptions& opts) {
    std::stable_sort(packets.begin(), packets.end(),
                     [](const Packet& x, const Packet& y) { return x.timestamp < y.timestamp; });

    struct Open {
        std::size_t flow_index;
        bool closed;
    };
    AssemblyResult result;
    std::vector<Flow> flows;
    std::unordered_map<FlowKey, Open, FlowKeyHash> open;

    for (auto& p : packets) {
        if (p.protocol != kProtoTcp || !std::isfinite(p.timestamp)) {
            ++result.skipped_packets;
            continue;
        }
        const FlowKey key = canonical_flow_key(p);
        auto it = open.find(key);
        bool start_new = it == open.end();
        if (!start_new) {
            const Flow& f = flows[it->second.flow_index];
            const double idle = p.timestamp - f.packets.back().timestamp;
            if (idle > opts.idle_timeout) start_new = true;
            else if (it->second.closed && (p.tcp_flags & tcp_flag::SYN)) start_new = true;
        }
        if (start_new) {
            Flow f;
            f.key = key;
            flows.push_back(std::move(f));
            it = open.insert_or_assign(key, Open{flows.size() - 1, false}).first;
        }
        Flow& f = flows[it->second.flow_index];
        const Endpoint init = f.packets.empty() ? Endpoint{p.src_ip, p.src_port} : f.initiator();
        p.direction = (Endpoint{p.src_ip, p.src_port} == init) ? Direction::Forward : Direction::Backward;
        f.packets.push_back(p);
        if (p.tcp_flags & (tcp_flag::FIN | tcp_flag::RST)) it->second.closed = true;
    }

    for (auto& f : flows) {
        if (opts.drop_empty_payload && f.total_payload() == 0) {
            ++result.dropped_flows;
            result.dropped_packets += f.packets.size();
            continue;
        }
        result.flows.push_back(std::move(f));
    }
    return result;
}

std::vector<std::size_t> balanced_indices(const std::vector<int>& class_of, std::uint64_t seed,
                                          bool require_all_classes) {
    std::array<std::vector<std::size_t>, kClassCount> members;
    for (std::size_t i = 0; i < class_of.size(); ++i) {
        const int c = class_of[i];
        if (c < 0 || c >= static_cast<int>(kClassCount)) throw DataError("invalid class code in balance");
        members[static_cast<std::size_t>(c)].push_back(i);
    }
    std::size_t target = 0;
    for (std::size_t c = 0; c < kClassCount; ++c) {
        if (members[c].empty() && require_all_classes)
            throw DataError("cannot balance: class " + std::string(to_string(static_cast<CoSLabel>(c))) +
                            " has no samples");
        target = std::max(target, members[c].size());
    }
    Rng rng = make_rng(seed, 0xBA1A);
    std::vector<std::size_t> out;
    out.reserve(target * kClassCount);
    for (const auto& m : members) {
        if (m.empty()) continue;
        out.insert(out.end(), m.begin(), m.end());
        std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
        for (std::size_t extra = m.size(); extra < target; ++extra) out.push_back(m[pick(rng)]);
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
}

FlowDataset balance_dataset(const FlowDataset& ds, std::uint64_t seed) {
    if (ds.flows.empty()) throw DataError("cannot balance an empty dataset");
    std::vector<int> cls;
    cls.reserve(ds.flows.size());
    for (const auto& f : ds.flows) cls.push_back(encode(ds.label_of(f)));
    FlowDataset out;
    out.label_kind = ds.label_kind;
    for (std::size_t i : balanced_indices(cls, seed)) out.flows.push_back(ds.flows[i]);
    return out;
}

std::pair<FlowDataset, FlowDataset> split_dataset(const FlowDataset& ds, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("split_dataset: test_fraction must lie in (0,1)");
    if (ds.flows.size() < 2) throw DataError("split_dataset: need at least 2 flows");
    std::vector<std::size_t> order(ds.flows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = make_rng(seed, 0x5B1D);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.flows.size())));

    FlowDataset train{{}, ds.label_kind};
    FlowDataset test{{}, ds.label_kind};
    for (std::size_t i = 0; i < order.size(); ++i)
        (i < n_test ? test : train).flows.push_back(ds.flows[order[i]]);
    return {std::move(train), std::move(test)};
}

} // namespace fphtc
