#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fphtc/error.hpp"
#include "fphtc/ingestion.hpp"
#include "helpers.hpp"

using namespace fphtc;
using testutil::pkt;

namespace {

void le32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void be32(std::string& s, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void be16(std::string& s, std::uint16_t v) {
    s.push_back(static_cast<char>(v >> 8));
    s.push_back(static_cast<char>(v & 0xFF));
}

/// Raw-IPv4 frame with a 20-byte transport header stub.
std::string ipv4_frame(std::uint8_t proto, const char* src, const char* dst, std::uint16_t sport, std::uint16_t dport,
                       std::uint16_t payload) {
    std::string f;
    f.push_back(0x45);
    f.push_back(0);
    be16(f, static_cast<std::uint16_t>(20 + (proto == 17 ? 8 : 20) + payload));
    be16(f, 0);
    be16(f, 0);
    f.push_back(64);
    f.push_back(static_cast<char>(proto));
    be16(f, 0);
    be32(f, *parse_ipv4(src));
    be32(f, *parse_ipv4(dst));
    be16(f, sport);
    be16(f, dport);
    for (int i = 0; i < 16; ++i) f.push_back(i == 8 ? 0x50 : 0);
    return f;
}

std::string pcap_header(bool big_endian, std::uint32_t magic, std::uint32_t link) {
    std::string s;
    auto w32 = [&](std::uint32_t v) { big_endian ? be32(s, v) : le32(s, v); };
    auto w16 = [&](std::uint16_t v) {
        if (big_endian) be16(s, v);
        else s.push_back(static_cast<char>(v & 0xFF)), s.push_back(static_cast<char>(v >> 8));
    };
    w32(magic);
    w16(2);
    w16(4);
    w32(0);
    w32(0);
    w32(65535);
    w32(link);
    return s;
}

std::string record(bool big_endian, std::uint32_t sec, std::uint32_t frac, const std::string& frame) {
    std::string s;
    auto w32 = [&](std::uint32_t v) { big_endian ? be32(s, v) : le32(s, v); };
    w32(sec);
    w32(frac);
    w32(static_cast<std::uint32_t>(frame.size()));
    w32(static_cast<std::uint32_t>(frame.size()));
    return s + frame;
}

std::vector<Packet> all_packets(const std::vector<Flow>& flows) {
    std::vector<Packet> ps;
    for (const auto& f : flows) ps.insert(ps.end(), f.packets.begin(), f.packets.end());
    std::stable_sort(ps.begin(), ps.end(), [](const Packet& a, const Packet& b) { return a.timestamp < b.timestamp; });
    return ps;
}

} // namespace

TEST_SUITE("ingestion") {

TEST_CASE("pcap round trip of a synthetic corpus") {
    const auto flows = generate_synthetic(preset("separable"), uniform_mix(kAllApps), 300, 17);
    const auto ps = all_packets(flows);
    for (LinkType link : {LinkType::Ethernet, LinkType::RawIpv4}) {
        std::stringstream ss;
        write_pcap(ss, ps, link);
        const auto back = read_pcap(ss);
        CHECK(back.link_type == link);
        CHECK(back.skipped == 0);
        CHECK(back.truncated == 0);
        REQUIRE(back.packets.size() == ps.size());
        for (std::size_t i = 0; i < ps.size(); ++i) {
            CHECK(back.packets[i].timestamp == ps[i].timestamp);
            CHECK(back.packets[i].src_ip == ps[i].src_ip);
            CHECK(back.packets[i].dst_ip == ps[i].dst_ip);
            CHECK(back.packets[i].src_port == ps[i].src_port);
            CHECK(back.packets[i].dst_port == ps[i].dst_port);
            CHECK(back.packets[i].payload_len == ps[i].payload_len);
            CHECK(back.packets[i].tcp_flags == ps[i].tcp_flags);
        }
    }
}

TEST_CASE("capture round trip reassembles the same flows") {
    const auto dir = testutil::scratch_dir("capture_rt");
    const auto flows = generate_synthetic(preset("separable"), uniform_mix(std::array{AppType::MAIL}), 50, 4);
    const auto path = (dir / "mail.pcap").string();
    write_pcap(path, all_packets(flows));
    CaptureManifest m;
    m.entries.emplace_back(path, AppType::MAIL);
    write_manifest((dir / "manifest.tsv").string(), m);
    const auto loaded = load_manifest((dir / "manifest.tsv").string());
    const auto res = read_corpus(loaded);
    REQUIRE(res.flows.size() == flows.size());
    std::set<FlowKey> want, got;
    for (const auto& f : flows) want.insert(f.key);
    for (const auto& f : res.flows) {
        got.insert(f.key);
        CHECK(f.true_app == AppType::MAIL);
    }
    CHECK(want == got);
}

TEST_CASE("big-endian and nanosecond captures") {
    const auto frame = ipv4_frame(6, "10.0.0.1", "10.0.0.2", 5000, 80, 33);
    for (bool big : {false, true}) {
        std::stringstream ss(pcap_header(big, 0xA1B23C4D, 101) + record(big, 7, 250000000, frame));
        const auto r = read_pcap(ss);
        REQUIRE(r.packets.size() == 1);
        CHECK(r.packets[0].timestamp == doctest::Approx(7.25));
        CHECK(r.packets[0].payload_len == 33);
        CHECK(r.packets[0].src_port == 5000);
    }
    std::stringstream ss(pcap_header(true, 0xA1B2C3D4, 101) + record(true, 3, 500000, frame));
    const auto r = read_pcap(ss);
    REQUIRE(r.packets.size() == 1);
    CHECK(r.packets[0].timestamp == 3.5);
}

TEST_CASE("pcap errors and edge cases") {
    std::stringstream bad(std::string(24, '\x11'));
    CHECK_THROWS_AS(read_pcap(bad), FormatError);
    std::stringstream short_file("abc");
    CHECK_THROWS_AS(read_pcap(short_file), FormatError);

    std::stringstream empty(pcap_header(false, 0xA1B2C3D4, 1));
    const auto e = read_pcap(empty);
    CHECK(e.packets.empty());
    CHECK(e.records == 0);

    const auto frame = ipv4_frame(6, "10.0.0.1", "10.0.0.2", 5000, 80, 10);
    std::string full = pcap_header(false, 0xA1B2C3D4, 101) + record(false, 1, 0, frame) + record(false, 2, 0, frame);
    std::stringstream cut(full.substr(0, full.size() - 5));
    const auto t = read_pcap(cut);
    CHECK(t.packets.size() == 1);
    CHECK(t.truncated == 1);
}

TEST_CASE("udp-only capture yields no flows") {
    const auto dir = testutil::scratch_dir("udp");
    std::string data = pcap_header(false, 0xA1B2C3D4, 101);
    for (int i = 0; i < 4; ++i) data += record(false, static_cast<std::uint32_t>(i), 0, ipv4_frame(17, "10.0.0.1", "10.0.0.2", 53, 53, 12));
    const auto path = (dir / "udp.pcap").string();
    std::ofstream(path, std::ios::binary) << data;
    CaptureManifest m;
    m.entries.emplace_back(path, AppType::CHAT);
    const auto res = read_capture(path, m);
    CHECK(res.flows.empty());
    CHECK(res.skipped_packets == 4);
}

TEST_CASE("handshake capture becomes one labeled flow") {
    const auto dir = testutil::scratch_dir("handshake");
    std::vector<Packet> ps{pkt(0.0, "10.0.0.1", 5000, "10.0.0.2", 5060, 0, tcp_flag::SYN),
                           pkt(0.1, "10.0.0.2", 5060, "10.0.0.1", 5000, 0, tcp_flag::SYN | tcp_flag::ACK),
                           pkt(0.2, "10.0.0.1", 5000, "10.0.0.2", 5060, 120, tcp_flag::ACK | tcp_flag::PSH)};
    const auto path = (dir / "voip.pcap").string();
    write_pcap(path, ps);
    std::ofstream(dir / "m.tsv") << "voip.pcap\tVOIP\n";
    const auto m = load_manifest((dir / "m.tsv").string());
    const auto res = read_capture(m.entries[0].first, m);
    REQUIRE(res.flows.size() == 1);
    CHECK(res.flows[0].packets.size() == 3);
    CHECK(res.flows[0].true_app == AppType::VOIP);
    CHECK(dpi_label(res.flows[0]) == AppType::VOIP);
}

TEST_CASE("manifest errors") {
    const auto dir = testutil::scratch_dir("manifest");
    std::ofstream(dir / "a.pcap") << pcap_header(false, 0xA1B2C3D4, 1);
    std::ofstream(dir / "bad_row.tsv") << "# comment\na.pcap VOIP\n";
    CHECK_THROWS_WITH_AS(load_manifest((dir / "bad_row.tsv").string()), doctest::Contains("line 2"), FormatError);
    std::ofstream(dir / "bad_app.tsv") << "a.pcap\tSKYPE\n";
    CHECK_THROWS_AS(load_manifest((dir / "bad_app.tsv").string()), FormatError);
    std::ofstream(dir / "missing.tsv") << "nope.pcap\tWEB\n";
    CHECK_THROWS_AS(load_manifest((dir / "missing.tsv").string()), DataError);
    CHECK_THROWS_AS(load_manifest((dir / "absent.tsv").string()), DataError);
    std::ofstream(dir / "ok.tsv") << "a.pcap\tWEB\n";
    const auto m = load_manifest((dir / "ok.tsv").string());
    CHECK(m.app_for((dir / "a.pcap").string()) == AppType::WEB);
    CHECK_THROWS_AS(m.app_for((dir / "b.pcap").string()), DataError);
}

TEST_CASE("synthetic generation") {
    const auto p = preset("separable");
    const auto voip = generate_synthetic(p, {{AppType::VOIP, 1.0}}, 100, 1);
    CHECK(voip.size() == 100);
    for (const auto& f : voip) CHECK(f.true_app == AppType::VOIP);

    const auto mixed = generate_synthetic(p, {{AppType::VOIP, 1.0}, {AppType::FTP, 1.0}}, 10000, 9);
    std::size_t n_voip = 0;
    for (const auto& f : mixed) n_voip += f.true_app == AppType::VOIP;
    const double sigma = std::sqrt(10000 * 0.5 * 0.5);
    CHECK(std::abs(static_cast<double>(n_voip) - 5000.0) <= 3 * sigma);

    std::unordered_set<FlowKey, FlowKeyHash> keys;
    for (const auto& f : mixed) {
        CHECK_NOTHROW(validate_flow(f));
        CHECK(f.total_payload() > 0);
        keys.insert(f.key);
    }
    CHECK(keys.size() == mixed.size());

    CHECK(generate_synthetic(p, uniform_mix(kAllApps), 500, 3) == generate_synthetic(p, uniform_mix(kAllApps), 500, 3));
    CHECK(generate_synthetic(p, uniform_mix(kAllApps), 50, 3) != generate_synthetic(p, uniform_mix(kAllApps), 50, 4));
}

TEST_CASE("synthetic generation errors") {
    auto p = preset("separable");
    CHECK_THROWS_AS(generate_synthetic(p, uniform_mix(kAllApps), 0, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(p, {{AppType::WEB, 0.0}}, 10, 1), ConfigError);
    CHECK_THROWS_AS(generate_synthetic(p, {{AppType::WEB, -1.0}}, 10, 1), ConfigError);
    p.profiles.erase(AppType::WEB);
    CHECK_THROWS_AS(generate_synthetic(p, {{AppType::WEB, 1.0}}, 10, 1), ConfigError);
    CHECK_NOTHROW(generate_synthetic(p, {{AppType::WEB, 0.0}, {AppType::MAIL, 1.0}}, 10, 1));
    auto q = preset("separable");
    q.profiles[AppType::MAIL].port_pool.clear();
    CHECK_THROWS_WITH_AS(generate_synthetic(q, {{AppType::MAIL, 1.0}}, 10, 1), doctest::Contains("MAIL"), ConfigError);
}

TEST_CASE("presets and their json form") {
    CHECK(preset_names() == std::vector<std::string>{"separable", "overlapping"});
    CHECK_THROWS_WITH_AS(preset("nope"), doctest::Contains("separable overlapping"), ConfigError);
    for (const auto& name : preset_names()) {
        const auto p = preset(name);
        CHECK_NOTHROW(p.validate());
        CHECK(p.profiles.size() == kAppCount);
        const auto j = preset_to_json(p);
        const auto back = preset_from_json(j);
        CHECK(preset_to_json(back) == j);
        CHECK(generate_synthetic(back, uniform_mix(kAllApps), 200, 8) ==
              generate_synthetic(p, uniform_mix(kAllApps), 200, 8));
    }
    auto j = preset_to_json(preset("separable"));
    j["profiles"]["VOIP"]["forward_fraction"] = 1.5;
    CHECK_THROWS_WITH_AS(preset_from_json(j), doctest::Contains("/profiles/VOIP"), ConfigError);
    j = preset_to_json(preset("separable"));
    j["profiles"]["VOIP"].erase("port_pool");
    CHECK_THROWS_WITH_AS(preset_from_json(j), doctest::Contains("/profiles/VOIP/port_pool"), ConfigError);
    j = preset_to_json(preset("separable"));
    j["profiles"]["VOIP"]["subnet_pool"][0] = "10.1.2.3/24";
    CHECK_THROWS_WITH_AS(preset_from_json(j), doctest::Contains("/profiles/VOIP/subnet_pool/0"), ConfigError);
}

TEST_CASE("overlapping preset keeps neighbouring means within one stddev") {
    const auto p = preset("overlapping");
    for (const auto& [a, pa] : p.profiles)
        for (const auto& [b, pb] : p.profiles) {
            CHECK(std::abs(pa.fwd_payload.mean - pb.fwd_payload.mean) <= std::max(pa.fwd_payload.stddev, pb.fwd_payload.stddev));
            CHECK(std::abs(pa.bwd_payload.mean - pb.bwd_payload.mean) <= std::max(pa.bwd_payload.stddev, pb.bwd_payload.stddev));
            CHECK(std::abs(pa.packet_count.mu - pb.packet_count.mu) <= std::max(pa.packet_count.sigma, pb.packet_count.sigma));
        }
}

TEST_CASE("dpi oracle") {
    const auto flows = generate_synthetic(preset("separable"), {{AppType::VOIP, 1.0}}, 3, 2);
    DpiOracle dpi(2.5);
    for (const auto& f : flows) CHECK(dpi.label(f) == AppType::VOIP);
    CHECK(dpi.flows_labeled() == 3);
    CHECK(dpi.cost() == 7.5);
    Flow unlabeled = flows[0];
    unlabeled.true_app.reset();
    CHECK_THROWS_AS(dpi.label(unlabeled), DataError);
    CHECK_THROWS_AS(dpi_label(unlabeled), DataError);
    CHECK(dpi.flows_labeled() == 3);
}

}
