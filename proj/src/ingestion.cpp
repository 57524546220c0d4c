#include "fphtc/ingestion.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "fphtc/error.hpp"

namespace fphtc {

namespace {

constexpr std::uint32_t kMagicMicro = 0xA1B2C3D4;
constexpr std::uint32_t kMagicNano = 0xA1B23C4D;
constexpr std::size_t kIpHeader = 20;
constexpr std::size_t kTcpHeader = 20;
constexpr std::size_t kEthHeader = 14;

std::uint32_t bswap32(std::uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}

std::uint16_t be16(const unsigned char* p) { return static_cast<std::uint16_t>((p[0] << 8) | p[1]); }
std::uint32_t be32(const unsigned char* p) {
    return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

struct ByteOrder {
    bool swapped = false;
    std::uint32_t u32(const unsigned char* p) const {
        std::uint32_t v;
        std::memcpy(&v, p, 4);
        return swapped ? bswap32(v) : v;
    }
};

/// Decodes one captured frame into a TCP packet; false when unusable.
bool decode_frame(const unsigned char* data, std::size_t caplen, LinkType link, Packet& out) {
    std::size_t off = 0;
    if (link == LinkType::Ethernet) {
        if (caplen < kEthHeader) return false;
        std::uint16_t ethertype = be16(data + 12);
        off = kEthHeader;
        while (ethertype == 0x8100 || ethertype == 0x88A8) { // VLAN tags
            if (caplen < off + 4) return false;
            ethertype = be16(data + off + 2);
            off += 4;
        }
        if (ethertype != 0x0800) return false;
    }
    if (caplen < off + kIpHeader) return false;
    const unsigned char* ip = data + off;
    if ((ip[0] >> 4) != 4) return false;
    const std::size_t ihl = static_cast<std::size_t>(ip[0] & 0x0F) * 4;
    if (ihl < kIpHeader || caplen < off + ihl) return false;
    const std::uint16_t total_len = be16(ip + 2);
    const std::uint16_t frag = be16(ip + 6);
    if ((frag & 0x1FFF) != 0) return false; // non-first fragment
    out.protocol = ip[9];
    out.src_ip = be32(ip + 12);
    out.dst_ip = be32(ip + 16);
    if (out.protocol != kProtoTcp) return false;
    if (caplen < off + ihl + kTcpHeader) return false;
    const unsigned char* tcp = ip + ihl;
    out.src_port = be16(tcp);
    out.dst_port = be16(tcp + 2);
    const std::size_t thl = static_cast<std::size_t>(tcp[12] >> 4) * 4;
    out.tcp_flags = tcp[13];
    if (thl < kTcpHeader || total_len < ihl + thl) return false;
    out.payload_len = static_cast<std::uint32_t>(total_len - ihl - thl);
    return true;
}

void put16(std::vector<unsigned char>& b, std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v & 0xFF));
}
void put32(std::vector<unsigned char>& b, std::uint32_t v) {
    put16(b, static_cast<std::uint16_t>(v >> 16));
    put16(b, static_cast<std::uint16_t>(v & 0xFFFF));
}
void put_le32(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                static_cast<char>((v >> 16) & 0xFF), static_cast<char>(v >> 24)};
    os.write(b.data(), 4);
}
void put_le16(std::ostream& os, std::uint16_t v) {
    const std::array<char, 2> b{static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    os.write(b.data(), 2);
}

std::uint16_t ip_checksum(const unsigned char* hdr) {
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i < kIpHeader; i += 2) sum += be16(hdr + i);
    while (sum >> 16) sum = (sum & 0xFFFF) + (sum >> 16);
    return static_cast<std::uint16_t>(~sum);
}

} // namespace

PcapReadResult read_pcap(std::istream& is) {
    std::array<unsigned char, 24> gh{};
    if (!is.read(reinterpret_cast<char*>(gh.data()), gh.size())) throw FormatError("pcap: file shorter than global header");
    std::uint32_t magic;
    std::memcpy(&magic, gh.data(), 4);
    ByteOrder bo;
    bool nano = false;
    if (magic == kMagicMicro || magic == kMagicNano) {
        nano = magic == kMagicNano;
    } else if (bswap32(magic) == kMagicMicro || bswap32(magic) == kMagicNano) {
        bo.swapped = true;
        nano = bswap32(magic) == kMagicNano;
    } else {
        throw FormatError("pcap: bad magic number (pcapng and other formats are not supported)");
    }
    PcapReadResult res;
    const std::uint32_t link = bo.u32(gh.data() + 20) & 0x0FFFFFFF;
    if (link != static_cast<std::uint32_t>(LinkType::Ethernet) && link != static_cast<std::uint32_t>(LinkType::RawIpv4))
        throw FormatError("pcap: unsupported link type " + std::to_string(link));
    res.link_type = static_cast<LinkType>(link);

    std::array<unsigned char, 16> rh{};
    std::vector<unsigned char> buf;
    const double frac_scale = nano ? 1e9 : 1e6;
    while (true) {
        is.read(reinterpret_cast<char*>(rh.data()), rh.size());
        if (is.gcount() == 0) break;
        if (is.gcount() < static_cast<std::streamsize>(rh.size())) {
            ++res.truncated;
            break;
        }
        const std::uint32_t sec = bo.u32(rh.data());
        const std::uint32_t frac = bo.u32(rh.data() + 4);
        const std::uint32_t caplen = bo.u32(rh.data() + 8);
        if (caplen > (1u << 26)) throw FormatError("pcap: implausible record length");
        buf.resize(caplen);
        is.read(reinterpret_cast<char*>(buf.data()), caplen);
        if (is.gcount() < static_cast<std::streamsize>(caplen)) {
            ++res.truncated;
            break;
        }
        ++res.records;
        Packet p;
        p.timestamp = (static_cast<double>(sec) * frac_scale + static_cast<double>(frac)) / frac_scale;
        if (decode_frame(buf.data(), caplen, res.link_type, p)) res.packets.push_back(p);
        else ++res.skipped;
    }
    return res;
}

PcapReadResult read_pcap(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open capture " + path);
    return read_pcap(is);
}

void write_pcap(std::ostream& os, std::span<const Packet> packets, LinkType link) {
    put_le32(os, kMagicMicro);
    put_le16(os, 2);
    put_le16(os, 4);
    put_le32(os, 0);
    put_le32(os, 0);
    put_le32(os, 65535);
    put_le32(os, static_cast<std::uint32_t>(link));

    std::vector<unsigned char> frame;
    for (const auto& p : packets) {
        if (p.protocol != kProtoTcp) throw DataError("write_pcap: only TCP packets can be written");
        if (p.payload_len > 65535 - kIpHeader - kTcpHeader) throw DataError("write_pcap: payload too large for IPv4");
        frame.clear();
        if (link == LinkType::Ethernet) {
            for (int i = 0; i < 12; ++i) frame.push_back(i < 6 ? 0x02 : 0x04); // locally administered MACs
            put16(frame, 0x0800);
        }
        const std::size_t ip_at = frame.size();
        frame.push_back(0x45);
        frame.push_back(0);
        put16(frame, static_cast<std::uint16_t>(kIpHeader + kTcpHeader + p.payload_len));
        put16(frame, 0);      // id
        put16(frame, 0x4000); // DF
        frame.push_back(64);
        frame.push_back(kProtoTcp);
        put16(frame, 0);
        put32(frame, p.src_ip);
        put32(frame, p.dst_ip);
        const std::uint16_t csum = ip_checksum(frame.data() + ip_at);
        frame[ip_at + 10] = static_cast<unsigned char>(csum >> 8);
        frame[ip_at + 11] = static_cast<unsigned char>(csum & 0xFF);
        put16(frame, p.src_port);
        put16(frame, p.dst_port);
        put32(frame, 0); // seq
        put32(frame, 0); // ack
        frame.push_back(0x50);
        frame.push_back(p.tcp_flags);
        put16(frame, 65535);
        put16(frame, 0);
        put16(frame, 0);

        const auto us = static_cast<std::int64_t>(std::llround(p.timestamp * 1e6));
        if (us < 0) throw DataError("write_pcap: negative timestamp");
        put_le32(os, static_cast<std::uint32_t>(us / 1000000));
        put_le32(os, static_cast<std::uint32_t>(us % 1000000));
        put_le32(os, static_cast<std::uint32_t>(frame.size()));
        put_le32(os, static_cast<std::uint32_t>(frame.size() + p.payload_len));
        os.write(reinterpret_cast<const char*>(frame.data()), static_cast<std::streamsize>(frame.size()));
    }
}

void write_pcap(const std::string& path, std::span<const Packet> packets, LinkType link) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write capture " + path);
    write_pcap(os, packets, link);
    if (!os) throw DataError("error writing capture " + path);
}

// ---- manifest ------------------------------------------------------------

AppType CaptureManifest::app_for(const std::string& path) const {
    const auto want = std::filesystem::path(path).lexically_normal();
    for (const auto& [p, app] : entries)
        if (std::filesystem::path(p).lexically_normal() == want) return app;
    throw DataError("capture " + path + " is not listed in the manifest");
}

CaptureManifest load_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw DataError("cannot open manifest " + manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    CaptureManifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError("manifest row must be 'path<TAB>APPTYPE'", line_no);
        const std::string rel = line.substr(0, tab);
        const auto app = parse_app(line.substr(tab + 1));
        if (!app) throw FormatError("unknown application type '" + line.substr(tab + 1) + "'", line_no);
        auto p = std::filesystem::path(rel);
        if (p.is_relative()) p = base / p;
        if (!std::filesystem::exists(p))
            throw DataError("manifest line " + std::to_string(line_no) + ": capture " + p.string() + " does not exist");
        m.entries.emplace_back(p.lexically_normal().string(), *app);
    }
    return m;
}

void write_manifest(const std::string& manifest_path, const CaptureManifest& manifest) {
    std::ofstream os(manifest_path, std::ios::binary);
    if (!os) throw DataError("cannot write manifest " + manifest_path);
    const auto base = std::filesystem::path(manifest_path).parent_path();
    for (const auto& [p, app] : manifest.entries) {
        auto rel = std::filesystem::path(p).lexically_relative(base.empty() ? "." : base);
        os << (rel.empty() ? p : rel.string()) << '\t' << to_string(app) << '\n';
    }
}

CaptureReadResult read_capture(const std::string& path, const CaptureManifest& manifest) {
    const AppType app = manifest.app_for(path);
    PcapReadResult raw = read_pcap(path);
    CaptureReadResult out;
    out.packets = raw.records;
    out.truncated_records = raw.truncated;
    AssemblyResult asm_res = assemble_flows(std::move(raw.packets));
    out.skipped_packets = raw.skipped + asm_res.skipped_packets;
    out.dropped_flows = asm_res.dropped_flows;
    out.flows = std::move(asm_res.flows);
    for (auto& f : out.flows) f.true_app = app;
    return out;
}

CaptureReadResult read_corpus(const CaptureManifest& manifest) {
    CaptureReadResult all;
    for (const auto& [path, app] : manifest.entries) {
        auto one = read_capture(path, manifest);
        all.packets += one.packets;
        all.skipped_packets += one.skipped_packets;
        all.truncated_records += one.truncated_records;
        all.dropped_flows += one.dropped_flows;
        for (auto& f : one.flows) all.flows.push_back(std::move(f));
    }
    return all;
}

// ---- DPI stand-in --------------------------------------------------------

AppType dpi_label(const Flow& flow) {
    if (!flow.true_app) throw DataError("flow has no ground truth; it cannot be labeled by the DPI oracle");
    return *flow.true_app;
}

AppType DpiOracle::label(const Flow& flow) {
    const AppType app = dpi_label(flow);
    ++flows_labeled_;
    return app;
}

} // namespace fphtc
