#pragma once

// Small helpers for emitting JSON text with a fixed number format, so that
// identical values always serialize to identical bytes.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include <json.hpp>

namespace actionsieve::json_text {

// Nine significant digits, shortest of fixed/exponent notation.
inline void append_number(std::string& out, double v) {
  if (!std::isfinite(v)) {
    out += "null";
    return;
  }
  if (v == 0.0) v = 0.0;  // drop the sign of -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  out += buf;
}

inline void append_integer(std::string& out, std::int64_t v) {
  out += std::to_string(v);
}

inline void append_bool(std::string& out, bool v) { out += v ? "true" : "false"; }

inline void append_string(std::string& out, std::string_view s) {
  out += nlohmann::json(std::string(s)).dump();
}

inline void append_key(std::string& out, std::string_view key) {
  append_string(out, key);
  out += ':';
}

}  // namespace actionsieve::json_text
