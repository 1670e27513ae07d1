#pragma once

// Text round-tripping for numbers in config, manifest, and trace files.

#include <cstdint>
#include <string>
#include <string_view>

namespace gcpmd {

/// Shortest text that parses back to the same double; "nan", "inf", "-inf" for non-finite.
std::string format_double(double value);

/// Whole-string parses; ConfigError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_uint(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

std::string_view trim(std::string_view text) noexcept;

}  // namespace gcpmd
