#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ctxintel::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);

/// Lowercased maximal runs of ASCII alphanumerics. Bytes >= 0x80 count as
/// word characters so UTF-8 words survive intact; everything else splits.
std::vector<std::string> tokenize(std::string_view s);

/// Byte offsets of every code point start in `s`, followed by `s.size()`.
/// Invalid UTF-8 bytes are treated as one code point each.
std::vector<std::size_t> code_point_offsets(std::string_view s);

std::size_t code_point_length(std::string_view s);

/// Strict UTF-8 check: rejects overlong forms, surrogates and truncation.
bool is_valid_utf8(std::string_view s);

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a. Stable across platforms and process restarts.
constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ctxintel::text
