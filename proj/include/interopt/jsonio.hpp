#pragma once

#include <string>

#include "interopt/common.hpp"
#include "json.hpp"

namespace interopt {

inline nlohmann::json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::parse, what + ": " + e.what());
  }
}

inline nlohmann::json load_json_file(const std::string& path) {
  return parse_json_text(read_file(path), path);
}

}  // namespace interopt
