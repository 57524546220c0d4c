#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "fphtc/error.hpp"
#include "fphtc/ingestion.hpp"
#include "fphtc/rng.hpp"

namespace fphtc {

namespace {

constexpr std::uint32_t kMaxPayload = 1460;
constexpr std::size_t kMaxPacketsPerFlow = 4000;
constexpr std::int64_t kCaptureSpanUs = 3600LL * 1000000LL;

struct FlowShape {
    AppType app;
    double count_median, count_sigma;
    double fwd_mean, fwd_sd, bwd_mean, bwd_sd;
    double rate, fwd_fraction;
    std::vector<std::uint16_t> ports;
};

// Per-app flow statistics for the separable preset.
const std::vector<FlowShape>& base_shapes() {
    static const std::vector<FlowShape> shapes{
        {AppType::CHAT, 12, 0.4, 120, 20, 150, 25, 2, 0.5, {5222, 6667, 443}},
        {AppType::VOIP, 60, 0.3, 180, 10, 170, 10, 50, 0.5, {5060, 3478, 443}},
        {AppType::AUDIO, 40, 0.3, 80, 15, 900, 60, 20, 0.2, {1935, 8000, 443}},
        {AppType::VIDEO, 50, 0.3, 90, 15, 1300, 50, 40, 0.15, {554, 1935, 443}},
        {AppType::FTP, 30, 0.4, 1400, 30, 60, 10, 80, 0.85, {21, 990, 443}},
        {AppType::MAIL, 15, 0.4, 600, 60, 200, 30, 5, 0.6, {25, 587, 993, 443}},
        {AppType::P2P, 35, 0.4, 700, 80, 700, 80, 15, 0.5, {6881, 51413, 443}},
        {AppType::WEB, 20, 0.5, 350, 40, 1000, 100, 10, 0.3, {80, 8080, 443}},
    };
    return shapes;
}

/// Distinct /24 prefixes a.b.c.0 drawn from `first_octet`.x.y, never reusing `taken`.
std::vector<Ipv4> draw_prefixes(Rng& rng, Ipv4 first_octet, std::size_t n, std::set<Ipv4>& taken) {
    std::uniform_int_distribution<Ipv4> mid(0, 0xFFFF);
    std::vector<Ipv4> out;
    while (out.size() < n) {
        const Ipv4 p = (first_octet << 24) | (mid(rng) << 8);
        if (taken.insert(p).second) out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    return out;
}

/// Header layout shared by both presets. It is fixed (not seed dependent):
/// per-app client subnets scattered over 10/8, server subnets drawn with
/// overlap from a common 172/8 pool, and a shared NAT/CDN pool.
void assign_headers(SyntheticPreset& p) {
    Rng layout(0x5EED0F1A7C0DEull);
    std::set<Ipv4> taken_clients, taken_servers;
    const auto server_pool = draw_prefixes(layout, 172, 64, taken_servers);
    for (const auto& s : base_shapes()) {
        auto& prof = p.profiles[s.app];
        prof.port_pool = s.ports;
        for (std::uint16_t common : {80, 443})
            if (std::find(prof.port_pool.begin(), prof.port_pool.end(), common) == prof.port_pool.end())
                prof.port_pool.push_back(common);
        prof.subnet_pool = draw_prefixes(layout, 10, 800, taken_clients);
        std::shuffle(prof.subnet_pool.begin(), prof.subnet_pool.end(), layout);
        prof.subnet_skew = 1.0;
        std::vector<Ipv4> servers = server_pool;
        std::shuffle(servers.begin(), servers.end(), layout);
        servers.resize(12);
        std::sort(servers.begin(), servers.end());
        prof.server_subnet_pool = servers;
    }
    p.shared.probability = 0.15;
    p.shared.client_subnets = draw_prefixes(layout, 10, 64, taken_clients);
    p.shared.server_subnets = draw_prefixes(layout, 172, 16, taken_servers);
    p.shared.ports = {443};
}

SyntheticPreset make_separable() {
    SyntheticPreset p;
    p.name = "separable";
    for (const auto& s : base_shapes()) {
        auto& prof = p.profiles[s.app];
        prof.packet_count = {std::log(s.count_median), s.count_sigma};
        prof.fwd_payload = {s.fwd_mean, s.fwd_sd};
        prof.bwd_payload = {s.bwd_mean, s.bwd_sd};
        prof.inter_arrival_rate = s.rate;
        prof.forward_fraction = s.fwd_fraction;
    }
    assign_headers(p);
    return p;
}

// Means pulled a quarter of the way to the grand mean, spreads widened so
// neighbouring apps sit within one standard deviation of each other.
SyntheticPreset make_overlapping() {
    SyntheticPreset p;
    p.name = "overlapping";
    const auto& shapes = base_shapes();
    double fwd = 0, bwd = 0, cnt = 0, rate = 0;
    for (const auto& s : shapes) {
        fwd += s.fwd_mean;
        bwd += s.bwd_mean;
        cnt += std::log(s.count_median);
        rate += std::log(s.rate);
    }
    const auto n = static_cast<double>(shapes.size());
    fwd /= n, bwd /= n, cnt /= n, rate /= n;
    // pull toward the grand mean until every pairwise gap fits inside one stddev
    constexpr double kPull = 0.18;
    for (const auto& s : shapes) {
        auto& prof = p.profiles[s.app];
        prof.packet_count = {cnt + kPull * (std::log(s.count_median) - cnt), 0.8};
        prof.fwd_payload = {fwd + kPull * (s.fwd_mean - fwd), 250};
        prof.bwd_payload = {bwd + kPull * (s.bwd_mean - bwd), 300};
        prof.inter_arrival_rate = std::exp(rate + kPull * (std::log(s.rate) - rate));
        prof.forward_fraction = 0.5 + kPull * (s.fwd_fraction - 0.5);
    }
    assign_headers(p);
    return p;
}

std::uint32_t draw_payload(Rng& rng, const NormalParams& np) {
    std::normal_distribution<double> d(np.mean, np.stddev);
    const double v = std::round(d(rng));
    return static_cast<std::uint32_t>(std::clamp(v, 1.0, static_cast<double>(kMaxPayload)));
}

template <class T>
const T& pick(Rng& rng, const std::vector<T>& v) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
}

std::discrete_distribution<std::size_t> popularity(const SyntheticProfile& prof) {
    std::vector<double> w(prof.subnet_pool.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::pow(static_cast<double>(i + 1), -prof.subnet_skew);
    return {w.begin(), w.end()};
}

Flow make_flow(Rng& rng, AppType app, const SyntheticProfile& prof, std::discrete_distribution<std::size_t>& client_d,
               const SharedHeaderPool& shared, std::unordered_set<FlowKey, FlowKeyHash>& used) {
    const bool from_shared = shared.probability > 0 && std::bernoulli_distribution(shared.probability)(rng);
    const auto& servers = from_shared ? shared.server_subnets : prof.server_subnet_pool;
    const auto& ports = from_shared ? shared.ports : prof.port_pool;

    std::uniform_int_distribution<Ipv4> client_host(1, 254), server_host(1, 32);
    std::uniform_int_distribution<int> ephemeral(32768, 60999);
    const Ipv4 client = (from_shared ? pick(rng, shared.client_subnets) : prof.subnet_pool[client_d(rng)]) |
                        client_host(rng);
    const Ipv4 server = pick(rng, servers) | server_host(rng);
    const std::uint16_t sport_server = pick(rng, ports);

    Packet first;
    first.src_ip = client;
    first.dst_ip = server;
    first.dst_port = sport_server;
    FlowKey key;
    do {
        first.src_port = static_cast<std::uint16_t>(ephemeral(rng));
        key = canonical_flow_key(first);
    } while (!used.insert(key).second);

    std::lognormal_distribution<double> count_d(prof.packet_count.mu, prof.packet_count.sigma);
    const auto count = static_cast<std::size_t>(
        std::clamp(std::round(count_d(rng)), 1.0, static_cast<double>(kMaxPacketsPerFlow)));
    std::uniform_int_distribution<std::int64_t> start_d(0, kCaptureSpanUs);
    std::exponential_distribution<double> gap_d(prof.inter_arrival_rate);
    std::bernoulli_distribution fwd_d(prof.forward_fraction);

    Flow f;
    f.key = key;
    f.true_app = app;
    f.packets.reserve(count);
    std::int64_t t_us = start_d(rng);
    for (std::size_t i = 0; i < count; ++i) {
        if (i > 0) t_us += static_cast<std::int64_t>(std::llround(gap_d(rng) * 1e6));
        const bool forward = i == 0 || fwd_d(rng);
        Packet p = first;
        if (!forward) p = reversed(first);
        p.direction = forward ? Direction::Forward : Direction::Backward;
        p.timestamp = static_cast<double>(t_us) / 1e6;
        p.payload_len = draw_payload(rng, forward ? prof.fwd_payload : prof.bwd_payload);
        p.tcp_flags = tcp_flag::ACK | tcp_flag::PSH;
        if (i == 0) p.tcp_flags = tcp_flag::SYN;
        if (i + 1 == count && i > 0) p.tcp_flags = tcp_flag::ACK | tcp_flag::FIN;
        f.packets.push_back(p);
    }
    return f;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

} // namespace

void SyntheticProfile::validate(std::string_view app) const {
    const std::string at = "profile " + std::string(app) + ": ";
    require(std::isfinite(packet_count.mu) && std::isfinite(packet_count.sigma) && packet_count.sigma > 0,
            at + "packet_count needs finite mu and sigma > 0");
    for (const auto* np : {&fwd_payload, &bwd_payload})
        require(std::isfinite(np->mean) && std::isfinite(np->stddev) && np->stddev > 0,
                at + "payload distributions need finite mean and stddev > 0");
    require(std::isfinite(inter_arrival_rate) && inter_arrival_rate > 0, at + "inter_arrival_rate must be > 0");
    require(forward_fraction > 0 && forward_fraction < 1, at + "forward_fraction must lie in (0,1)");
    require(std::isfinite(subnet_skew) && subnet_skew >= 0, at + "subnet_skew must be >= 0");
    require(!port_pool.empty(), at + "port_pool is empty");
    require(!subnet_pool.empty(), at + "subnet_pool is empty");
    require(!server_subnet_pool.empty(), at + "server_subnet_pool is empty");
    for (Ipv4 s : subnet_pool) require((s & 0xFF) == 0, at + "subnet_pool entries must be /24 prefixes");
    for (Ipv4 s : server_subnet_pool) require((s & 0xFF) == 0, at + "server_subnet_pool entries must be /24 prefixes");
}

void SyntheticPreset::validate() const {
    for (const auto& [app, prof] : profiles) prof.validate(to_string(app));
    require(shared.probability >= 0 && shared.probability < 1, "shared.probability must lie in [0,1)");
    if (shared.probability > 0)
        require(!shared.client_subnets.empty() && !shared.server_subnets.empty() && !shared.ports.empty(),
                "shared pools must be nonempty when shared.probability > 0");
}

std::vector<std::string> preset_names() { return {"separable", "overlapping"}; }

SyntheticPreset preset(std::string_view name) {
    if (name == "separable") return make_separable();
    if (name == "overlapping") return make_overlapping();
    std::string msg = "unknown synthetic preset '" + std::string(name) + "' (available:";
    for (const auto& n : preset_names()) msg += " " + n;
    throw ConfigError(msg + ")");
}

AppMix uniform_mix(std::span<const AppType> apps) {
    AppMix m;
    for (AppType a : apps) m[a] = 1.0;
    return m;
}

std::vector<Flow> generate_synthetic(const SyntheticPreset& preset, const AppMix& app_mix, std::size_t n_flows,
                                     std::uint64_t seed) {
    if (n_flows < 1) throw ConfigError("generate_synthetic: n_flows must be >= 1");
    std::vector<AppType> apps;
    std::vector<double> weights;
    std::vector<std::discrete_distribution<std::size_t>> client_d;
    for (const auto& [app, w] : app_mix) {
        if (!(w >= 0) || !std::isfinite(w)) throw ConfigError("generate_synthetic: app weights must be finite and >= 0");
        if (w == 0) continue;
        auto it = preset.profiles.find(app);
        if (it == preset.profiles.end())
            throw ConfigError("generate_synthetic: no profile for weighted app " + std::string(to_string(app)));
        it->second.validate(to_string(app));
        apps.push_back(app);
        weights.push_back(w);
        client_d.push_back(popularity(it->second));
    }
    if (apps.empty()) throw ConfigError("generate_synthetic: app weights sum to zero");
    if (preset.shared.probability > 0) preset.validate();

    Rng rng = make_rng(seed, 0x5C0FFEE);
    std::discrete_distribution<std::size_t> app_d(weights.begin(), weights.end());
    std::unordered_set<FlowKey, FlowKeyHash> used;
    used.reserve(n_flows * 2);
    std::vector<Flow> flows;
    flows.reserve(n_flows);
    for (std::size_t i = 0; i < n_flows; ++i) {
        const std::size_t a = app_d(rng);
        flows.push_back(make_flow(rng, apps[a], preset.profiles.at(apps[a]), client_d[a], preset.shared, used));
    }
    return flows;
}

std::vector<Flow> generate_synthetic(const std::map<AppType, SyntheticProfile>& profiles, const AppMix& app_mix,
                                     std::size_t n_flows, std::uint64_t seed) {
    SyntheticPreset p;
    p.name = "custom";
    p.profiles = profiles;
    return generate_synthetic(p, app_mix, n_flows, seed);
}

// ---- JSON ----------------------------------------------------------------

namespace {

using nlohmann::json;

[[noreturn]] void json_fail(const std::string& where, const std::string& msg) {
    throw ConfigError((where.empty() ? std::string("/") : where) + ": " + msg);
}

const json& member(const json& j, const std::string& where, const char* key) {
    if (!j.is_object()) json_fail(where, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) json_fail(where + "/" + key, "missing required field");
    return *it;
}

double number(const json& j, const std::string& where) {
    if (!j.is_number()) json_fail(where, "expected a number");
    return j.get<double>();
}

std::vector<std::uint16_t> ports_from(const json& j, const std::string& where) {
    if (!j.is_array()) json_fail(where, "expected an array of ports");
    std::vector<std::uint16_t> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number_integer() || j[i].get<long long>() < 0 || j[i].get<long long>() > 65535)
            json_fail(where + "/" + std::to_string(i), "port must be an integer in [0,65535]");
        out.push_back(static_cast<std::uint16_t>(j[i].get<long long>()));
    }
    return out;
}

std::vector<Ipv4> subnets_from(const json& j, const std::string& where) {
    if (!j.is_array()) json_fail(where, "expected an array of a.b.c.0/24 prefixes");
    std::vector<Ipv4> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string at = where + "/" + std::to_string(i);
        if (!j[i].is_string()) json_fail(at, "expected a string");
        const auto s = j[i].get<std::string>();
        const auto slash = s.find('/');
        auto ip = parse_ipv4(std::string_view(s).substr(0, slash));
        if (!ip || slash == std::string::npos || s.substr(slash + 1) != "24" || (*ip & 0xFF) != 0)
            json_fail(at, "expected a /24 prefix like 10.1.2.0/24");
        out.push_back(*ip);
    }
    return out;
}

json subnets_to(const std::vector<Ipv4>& v) {
    json a = json::array();
    for (Ipv4 ip : v) a.push_back(format_ipv4(ip) + "/24");
    return a;
}

} // namespace

SyntheticPreset preset_from_json(const json& j, const std::string& where) {
    SyntheticPreset p;
    if (!j.is_object()) json_fail(where, "expected an object");
    p.name = j.value("name", std::string("custom"));
    const json& profs = member(j, where, "profiles");
    if (!profs.is_object()) json_fail(where + "/profiles", "expected an object keyed by application type");
    for (const auto& [name, pj] : profs.items()) {
        const std::string at = where + "/profiles/" + name;
        auto app = parse_app(name);
        if (!app) json_fail(at, "unknown application type");
        SyntheticProfile prof;
        const json& pc = member(pj, at, "packet_count");
        prof.packet_count = {number(member(pc, at + "/packet_count", "mu"), at + "/packet_count/mu"),
                             number(member(pc, at + "/packet_count", "sigma"), at + "/packet_count/sigma")};
        for (auto [key, dst] : {std::pair{"fwd_payload", &prof.fwd_payload}, std::pair{"bwd_payload", &prof.bwd_payload}}) {
            const std::string pat = at + "/" + key;
            const json& np = member(pj, at, key);
            *dst = {number(member(np, pat, "mean"), pat + "/mean"), number(member(np, pat, "stddev"), pat + "/stddev")};
        }
        prof.inter_arrival_rate = number(member(pj, at, "inter_arrival_rate"), at + "/inter_arrival_rate");
        prof.forward_fraction = number(member(pj, at, "forward_fraction"), at + "/forward_fraction");
        prof.port_pool = ports_from(member(pj, at, "port_pool"), at + "/port_pool");
        prof.subnet_pool = subnets_from(member(pj, at, "subnet_pool"), at + "/subnet_pool");
        prof.server_subnet_pool = subnets_from(member(pj, at, "server_subnet_pool"), at + "/server_subnet_pool");
        if (pj.contains("subnet_skew")) prof.subnet_skew = number(pj["subnet_skew"], at + "/subnet_skew");
        try {
            prof.validate(name);
        } catch (const ConfigError& e) {
            json_fail(at, e.what());
        }
        p.profiles[*app] = std::move(prof);
    }
    if (auto it = j.find("shared"); it != j.end()) {
        const std::string at = where + "/shared";
        p.shared.probability = number(member(*it, at, "probability"), at + "/probability");
        p.shared.client_subnets = subnets_from(member(*it, at, "client_subnets"), at + "/client_subnets");
        p.shared.server_subnets = subnets_from(member(*it, at, "server_subnets"), at + "/server_subnets");
        p.shared.ports = ports_from(member(*it, at, "ports"), at + "/ports");
        try {
            p.validate();
        } catch (const ConfigError& e) {
            json_fail(at, e.what());
        }
    }
    return p;
}

json preset_to_json(const SyntheticPreset& p) {
    json j;
    j["name"] = p.name;
    json profs = json::object();
    for (const auto& [app, prof] : p.profiles) {
        json pj;
        pj["packet_count"] = {{"mu", prof.packet_count.mu}, {"sigma", prof.packet_count.sigma}};
        pj["fwd_payload"] = {{"mean", prof.fwd_payload.mean}, {"stddev", prof.fwd_payload.stddev}};
        pj["bwd_payload"] = {{"mean", prof.bwd_payload.mean}, {"stddev", prof.bwd_payload.stddev}};
        pj["inter_arrival_rate"] = prof.inter_arrival_rate;
        pj["forward_fraction"] = prof.forward_fraction;
        pj["port_pool"] = prof.port_pool;
        pj["subnet_pool"] = subnets_to(prof.subnet_pool);
        pj["subnet_skew"] = prof.subnet_skew;
        pj["server_subnet_pool"] = subnets_to(prof.server_subnet_pool);
        profs[std::string(to_string(app))] = std::move(pj);
    }
    j["profiles"] = std::move(profs);
    j["shared"] = {{"probability", p.shared.probability},
                   {"client_subnets", subnets_to(p.shared.client_subnets)},
                   {"server_subnets", subnets_to(p.shared.server_subnets)},
                   {"ports", p.shared.ports}};
    return j;
}

} // namespace fphtc
