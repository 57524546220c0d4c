#pragma once

// Line/token reader shared by the model and policy file formats.

#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fphtc/error.hpp"
#include "fphtc/numfmt.hpp"

namespace fphtc::textio {

inline constexpr std::string_view kModelMagic = "fphtc-model";
inline constexpr int kModelFormatVersion = 1;

class LineReader {
public:
    explicit LineReader(std::istream& is) : is_(is) {}

    /// Next non-empty line split on whitespace; throws FormatError at EOF.
    std::vector<std::string> next(std::string_view what) {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_no_;
            std::istringstream ss(line);
            std::vector<std::string> toks;
            for (std::string t; ss >> t;) toks.push_back(std::move(t));
            if (!toks.empty()) return toks;
        }
        throw FormatError("unexpected end of file, expected " + std::string(what), line_no_);
    }

    /// Next line, checking its leading keyword and token count.
    std::vector<std::string> expect(std::string_view keyword, std::size_t n_tokens) {
        auto t = next(keyword);
        if (t[0] != keyword) fail("expected '" + std::string(keyword) + "', got '" + t[0] + "'");
        if (t.size() != n_tokens) fail("'" + std::string(keyword) + "' line has wrong token count");
        return t;
    }

    [[noreturn]] void fail(const std::string& msg) const { throw FormatError(msg, line_no_); }

    double real(const std::string& s) const {
        auto v = parse_double(s);
        if (!v) fail("bad number '" + s + "'");
        return *v;
    }
    template <class Int>
    Int integer(const std::string& s) const {
        auto v = parse_int<Int>(s);
        if (!v) fail("bad integer '" + s + "'");
        return *v;
    }

    /// Parses `key=value`, checking the key.
    std::string keyed(const std::string& tok, std::string_view key) const {
        const auto eq = tok.find('=');
        if (eq == std::string::npos || std::string_view(tok).substr(0, eq) != key)
            fail("expected '" + std::string(key) + "=...', got '" + tok + "'");
        return tok.substr(eq + 1);
    }

    std::size_t line() const noexcept { return line_no_; }

private:
    std::istream& is_;
    std::size_t line_no_ = 0;
};

/// Reads the container header and returns the kind.
inline std::string read_header(LineReader& r) {
    auto magic = r.expect(kModelMagic, 2);
    if (r.integer<int>(magic[1]) != kModelFormatVersion) r.fail("unsupported model format version " + magic[1]);
    return r.expect("kind", 2)[1];
}

inline void write_header(std::ostream& os, std::string_view kind) {
    os << kModelMagic << ' ' << kModelFormatVersion << '\n' << "kind " << kind << '\n';
}

} // namespace fphtc::textio
