#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace zerolight {

/// Parses the TOML subset used by the config files into a JSON object:
/// [table] / [a.b] headers, bare, quoted and dotted keys, basic and literal
/// strings, integers, floats (including inf/nan), booleans, arrays (may span
/// lines) and inline tables. Dates and multi-line strings are not supported.
/// Errors raise ParseError with the line number.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json read_toml_file(const std::filesystem::path& path);

}  // namespace zerolight
