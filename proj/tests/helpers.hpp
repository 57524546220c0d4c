#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fphtc/traffic_model.hpp"

namespace testutil {

using namespace fphtc;

inline Packet pkt(double t, const char* src, std::uint16_t sport, const char* dst, std::uint16_t dport,
                  std::uint32_t payload = 100, std::uint8_t flags = tcp_flag::ACK) {
    Packet p;
    p.timestamp = t;
    p.src_ip = *parse_ipv4(src);
    p.dst_ip = *parse_ipv4(dst);
    p.src_port = sport;
    p.dst_port = dport;
    p.payload_len = payload;
    p.tcp_flags = flags;
    return p;
}

/// Flow from (time, forward?, payload) triples between 10.0.0.1:5000 and 10.0.0.2:80.
struct Spec {
    double t;
    bool forward;
    std::uint32_t payload;
};

inline Flow make_flow(const std::vector<Spec>& specs, std::optional<AppType> app = AppType::WEB) {
    Flow f;
    for (const auto& s : specs) {
        Packet p = s.forward ? pkt(s.t, "10.0.0.1", 5000, "10.0.0.2", 80, s.payload)
                             : pkt(s.t, "10.0.0.2", 80, "10.0.0.1", 5000, s.payload);
        p.direction = s.forward ? Direction::Forward : Direction::Backward;
        f.packets.push_back(p);
    }
    f.key = canonical_flow_key(f.packets.front());
    f.true_app = app;
    return f;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto d = std::filesystem::temp_directory_path() / ("fphtc_test_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

} // namespace testutil
