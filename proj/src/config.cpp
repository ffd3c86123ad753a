#include "zerolight/config.hpp"

#include "zerolight/errors.hpp"
#include "zerolight/tensor_archive.hpp"

#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace zerolight {

namespace {

class TomlParser {
 public:
  explicit TomlParser(const std::string& text) : s_(text) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++i_;
        if (peek() == '[') fail("arrays of tables are not supported");
        skip_ws();
        std::vector<std::string> path = key_path();
        skip_ws();
        expect(']');
        std::string joined;
        for (const auto& k : path) joined += k + '\x1f';
        if (!headers_.insert(joined).second) fail("table defined twice");
        table = &root;
        for (const auto& k : path) {
          nlohmann::json& next = (*table)[k];
          if (next.is_null()) next = nlohmann::json::object();
          if (!next.is_object()) fail("'" + k + "' is not a table");
          table = &next;
        }
      } else {
        key_value(*table);
      }
      end_of_line();
    }
    return root;
  }

 private:
  std::set<std::string> headers_;

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("config line " + std::to_string(line_) + ": " + msg);
  }
  bool eof() const { return i_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[i_]; }
  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++i_;
  }
  void skip_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++i_;
  }
  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++i_;
  }
  void skip_blank_lines() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\r') ++i_;
      if (peek() != '\n') return;
      ++i_;
      ++line_;
    }
  }
  // Whitespace, comments and newlines inside arrays.
  void skip_array_space() {
    while (!eof()) {
      skip_ws();
      skip_comment();
      if (peek() == '\r') ++i_;
      if (peek() != '\n') return;
      ++i_;
      ++line_;
    }
  }
  void end_of_line() {
    skip_ws();
    skip_comment();
    if (peek() == '\r') ++i_;
    if (eof()) return;
    if (peek() != '\n') fail("unexpected trailing characters");
    ++i_;
    ++line_;
  }

  static bool bare_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
  }

  std::string simple_key() {
    if (peek() == '"') return basic_string();
    if (peek() == '\'') return literal_string();
    const std::size_t start = i_;
    while (!eof() && bare_char(peek())) ++i_;
    if (i_ == start) fail("expected a key");
    return s_.substr(start, i_ - start);
  }

  std::vector<std::string> key_path() {
    std::vector<std::string> path{simple_key()};
    skip_ws();
    while (peek() == '.') {
      ++i_;
      skip_ws();
      path.push_back(simple_key());
      skip_ws();
    }
    return path;
  }

  void key_value(nlohmann::json& table) {
    std::vector<std::string> path = key_path();
    skip_ws();
    expect('=');
    skip_ws();
    nlohmann::json* t = &table;
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      nlohmann::json& next = (*t)[path[k]];
      if (next.is_null()) next = nlohmann::json::object();
      if (!next.is_object()) fail("'" + path[k] + "' is not a table");
      t = &next;
    }
    if (t->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*t)[path.back()] = value();
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[i_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (eof()) fail("unterminated escape");
      c = s_[i_++];
      switch (c) {
        case 'b': out.push_back('\b'); break;
        case 't': out.push_back('\t'); break;
        case 'n': out.push_back('\n'); break;
        case 'f': out.push_back('\f'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case 'u':
        case 'U': {
          const std::size_t n = c == 'u' ? 4 : 8;
          if (i_ + n > s_.size()) fail("truncated unicode escape");
          unsigned long cp = 0;
          try {
            cp = std::stoul(s_.substr(i_, n), nullptr, 16);
          } catch (const std::exception&) {
            fail("bad unicode escape");
          }
          i_ += n;
          append_utf8(out, cp);
          break;
        }
        default: fail(std::string("unknown escape \\") + c);
      }
    }
    return out;
  }

  static void append_utf8(std::string& out, unsigned long cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }

  std::string literal_string() {
    expect('\'');
    const std::size_t start = i_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++i_;
    if (peek() != '\'') fail("unterminated string");
    std::string out = s_.substr(start, i_ - start);
    ++i_;
    return out;
  }

  nlohmann::json value() {
    const char c = peek();
    if (c == '"') {
      if (s_.compare(i_, 3, "\"\"\"") == 0) fail("multi-line strings are not supported");
      return basic_string();
    }
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (c == '{') return inline_table();
    const std::size_t start = i_;
    while (!eof() && peek() != ',' && peek() != ']' && peek() != '}' && peek() != '#' && peek() != '\n' &&
           peek() != '\r' && peek() != ' ' && peek() != '\t')
      ++i_;
    const std::string tok = s_.substr(start, i_ - start);
    if (tok.empty()) fail("expected a value");
    if (tok == "true") return true;
    if (tok == "false") return false;
    return number(tok);
  }

  nlohmann::json number(std::string tok) {
    std::string digits;
    for (std::size_t k = 0; k < tok.size(); ++k) {
      if (tok[k] == '_') {
        if (k == 0 || k + 1 == tok.size() || !std::isdigit(static_cast<unsigned char>(tok[k - 1])) ||
            !std::isdigit(static_cast<unsigned char>(tok[k + 1]))) {
          fail("misplaced underscore in '" + tok + "'");
        }
        continue;
      }
      digits.push_back(tok[k]);
    }
    std::string body = digits;
    bool negative = false;
    if (!body.empty() && (body[0] == '+' || body[0] == '-')) {
      negative = body[0] == '-';
      body.erase(0, 1);
    }
    if (body == "inf") return negative ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (body.empty()) fail("bad value '" + tok + "'");
    const bool is_float = body.find_first_of(".eE") != std::string::npos;
    std::size_t used = 0;
    try {
      if (is_float) {
        if (body.front() == '.' || body.back() == '.') fail("bad float '" + tok + "'");
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      } else if (body.size() > 2 && body[0] == '0' && (body[1] == 'x' || body[1] == 'o' || body[1] == 'b')) {
        const int base = body[1] == 'x' ? 16 : body[1] == 'o' ? 8 : 2;
        if (digits[0] == '+' || digits[0] == '-') fail("signed prefixed integer '" + tok + "'");
        const auto v = std::stoull(body.substr(2), &used, base);
        if (used == body.size() - 2) return v;
      } else {
        if (body.size() > 1 && body[0] == '0') fail("leading zero in '" + tok + "'");
        if (negative) {
          const long long v = std::stoll(digits, &used);
          if (used == digits.size()) return v;
        } else {
          const unsigned long long v = std::stoull(body, &used);
          if (used == body.size()) return v;
        }
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      fail("bad value '" + tok + "'");
    }
    fail("bad value '" + tok + "'");
  }

  nlohmann::json array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_array_space();
      if (peek() == ']') {
        ++i_;
        return arr;
      }
      arr.push_back(value());
      skip_array_space();
      if (peek() == ',') {
        ++i_;
        continue;
      }
      if (peek() == ']') {
        ++i_;
        return arr;
      }
      fail("expected ',' or ']' in array");
    }
  }

  nlohmann::json inline_table() {
    expect('{');
    nlohmann::json t = nlohmann::json::object();
    skip_ws();
    if (peek() == '}') {
      ++i_;
      return t;
    }
    while (true) {
      skip_ws();
      key_value(t);
      skip_ws();
      if (peek() == ',') {
        ++i_;
        continue;
      }
      expect('}');
      return t;
    }
  }

  const std::string& s_;
  std::size_t i_ = 0;
  std::size_t line_ = 1;
};

}  // namespace

nlohmann::json parse_toml(const std::string& text) { return TomlParser(text).parse(); }

nlohmann::json read_toml_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception&) {
    throw ConfigError("cannot read config " + path.string());
  }
  try {
    return parse_toml(text);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace zerolight
