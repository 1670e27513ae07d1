#include "gcpmd/format.hpp"

#include "gcpmd/errors.hpp"

#include <charconv>
#include <cmath>

namespace gcpmd {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  if (text == "nan") return std::nan("");
  if (text == "inf") return INFINITY;
  if (text == "-inf") return -INFINITY;
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw ConfigError("invalid number for " + std::string(what) + ": '" + std::string(text) + "'");
  return value;
}

std::uint64_t parse_uint(std::string_view text, std::string_view what) {
  text = trim(text);
  std::uint64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc{} || res.ptr != text.data() + text.size())
    throw ConfigError("invalid non-negative integer for " + std::string(what) + ": '" + std::string(text) + "'");
  return value;
}

bool parse_bool(std::string_view text, std::string_view what) {
  text = trim(text);
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("invalid boolean for " + std::string(what) + ": '" + std::string(text) + "'");
}

std::string_view trim(std::string_view text) noexcept {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

}  // namespace gcpmd
