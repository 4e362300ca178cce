#pragma once

#include <string>

#include "json.hpp"

namespace stormdispatch {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

/// Parses a JSON document; syntax errors report line and column.
nlohmann::json parse_json(const std::string& text, const std::string& origin);
nlohmann::json read_json_file(const std::string& path);

/// Canonical serialisation used for every structured-text artifact:
/// two-space indent, keys in sorted order, trailing newline.
std::string dump_canonical(const nlohmann::json& doc);

}  // namespace stormdispatch
