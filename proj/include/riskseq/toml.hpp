#ifndef RISKSEQ_TOML_HPP
#define RISKSEQ_TOML_HPP

// Reader for the TOML subset used by riskseq configs, producing nlohmann::json.
//
// Supported: comments, [tables], [[arrays of tables]], bare/quoted/dotted keys,
// basic and literal strings, integers, floats (inf/nan), booleans, multi-line
// arrays and inline tables. Dates are not supported; write them as strings.

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "riskseq/error.hpp"

namespace riskseq::toml {

class Parser {
 public:
  explicit Parser(std::string text, std::string origin = "toml") : s_(std::move(text)), origin_(std::move(origin)) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* current = &root;
    while (true) {
      skip_ws_comments_newlines();
      if (eof()) break;
      if (peek() == '[') {
        const bool array = s_.compare(pos_, 2, "[[") == 0;
        pos_ += array ? 2 : 1;
        skip_inline_ws();
        std::vector<std::string> path = parse_key_path();
        skip_inline_ws();
        expect(']');
        if (array) expect(']');
        current = array ? &append_array_table(root, path) : &open_table(root, path);
        end_of_line();
        continue;
      }
      std::vector<std::string> path = parse_key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      nlohmann::json value = parse_value();
      assign(*current, path, std::move(value));
      end_of_line();
    }
    return root;
  }

 private:
  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return eof() ? '\0' : s_[pos_]; }

  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < s_.size(); ++i) line += s_[i] == '\n';
    throw ConfigError(origin_ + ":" + std::to_string(line) + ": " + what);
  }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_inline_ws() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (peek() == '#')
      while (!eof() && peek() != '\n') ++pos_;
  }

  void skip_ws_comments_newlines() {
    while (!eof()) {
      const char c = peek();
      if (c == ' ' || c == '\t' || c == '\r' || c == '\n') ++pos_;
      else if (c == '#') skip_comment();
      else break;
    }
  }

  void end_of_line() {
    skip_inline_ws();
    skip_comment();
    if (peek() == '\r') ++pos_;
    if (!eof() && peek() != '\n') fail("unexpected trailing characters");
  }

  std::string parse_key() {
    if (peek() == '"' || peek() == '\'') return parse_string();
    std::string k;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) k += s_[pos_++];
    if (k.empty()) fail("expected a key");
    return k;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path{parse_key()};
    skip_inline_ws();
    while (peek() == '.') {
      ++pos_;
      skip_inline_ws();
      path.push_back(parse_key());
      skip_inline_ws();
    }
    return path;
  }

  std::string parse_string() {
    const char q = peek();
    ++pos_;
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') fail("unterminated string");
      char c = s_[pos_++];
      if (c == q) break;
      if (q == '"' && c == '\\') {
        if (eof()) fail("unterminated escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case 'r': out += '\r'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
        continue;
      }
      out += c;
    }
    return out;
  }

  nlohmann::json parse_value() {
    const char c = peek();
    if (c == '"' || c == '\'') return parse_string();
    if (c == '[') return parse_array();
    if (c == '{') return parse_inline_table();
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return parse_number();
  }

  nlohmann::json parse_number() {
    std::string tok;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_'))
      tok += s_[pos_++];
    if (tok.empty()) fail("expected a value");
    std::string clean;
    for (char ch : tok)
      if (ch != '_') clean += ch;
    std::string body = clean;
    double sign = 1.0;
    if (!body.empty() && (body[0] == '+' || body[0] == '-')) {
      sign = body[0] == '-' ? -1.0 : 1.0;
      body = body.substr(1);
    }
    if (body == "inf") return sign * std::numeric_limits<double>::infinity();
    if (body == "nan") return std::numeric_limits<double>::quiet_NaN();
    const bool is_float = clean.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double v = std::stod(clean, &used);
        if (used != clean.size()) fail("malformed number '" + tok + "'");
        return v;
      }
      const long long v = std::stoll(clean, &used);
      if (used != clean.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("malformed value '" + tok + "'");
    }
  }

  nlohmann::json parse_array() {
    expect('[');
    nlohmann::json arr = nlohmann::json::array();
    while (true) {
      skip_ws_comments_newlines();
      if (peek() == ']') {
        ++pos_;
        return arr;
      }
      arr.push_back(parse_value());
      skip_ws_comments_newlines();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws_comments_newlines();
      expect(']');
      return arr;
    }
  }

  nlohmann::json parse_inline_table() {
    expect('{');
    nlohmann::json obj = nlohmann::json::object();
    skip_inline_ws();
    if (peek() == '}') {
      ++pos_;
      return obj;
    }
    while (true) {
      skip_inline_ws();
      std::vector<std::string> path = parse_key_path();
      skip_inline_ws();
      expect('=');
      skip_inline_ws();
      assign(obj, path, parse_value());
      skip_inline_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return obj;
    }
  }

  nlohmann::json& open_table(nlohmann::json& root, const std::vector<std::string>& path) {
    nlohmann::json* t = &root;
    for (const auto& k : path) {
      if (!t->contains(k)) (*t)[k] = nlohmann::json::object();
      t = &(*t)[k];
      if (t->is_array()) t = &t->back();
      if (!t->is_object()) fail("key '" + k + "' is not a table");
    }
    return *t;
  }

  nlohmann::json& append_array_table(nlohmann::json& root, const std::vector<std::string>& path) {
    std::vector<std::string> parent(path.begin(), path.end() - 1);
    nlohmann::json& p = open_table(root, parent);
    nlohmann::json& arr = p[path.back()];
    if (arr.is_null()) arr = nlohmann::json::array();
    if (!arr.is_array()) fail("key '" + path.back() + "' is not an array of tables");
    arr.push_back(nlohmann::json::object());
    return arr.back();
  }

  void assign(nlohmann::json& table, const std::vector<std::string>& path, nlohmann::json value) {
    nlohmann::json* t = &table;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!t->contains(path[i])) (*t)[path[i]] = nlohmann::json::object();
      t = &(*t)[path[i]];
      if (!t->is_object()) fail("key '" + path[i] + "' is not a table");
    }
    if (t->contains(path.back())) fail("duplicate key '" + path.back() + "'");
    (*t)[path.back()] = std::move(value);
  }

  std::string s_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline nlohmann::json parse(const std::string& text, const std::string& origin = "toml") {
  return Parser(text, origin).parse();
}

inline nlohmann::json parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

}  // namespace riskseq::toml

#endif  // RISKSEQ_TOML_HPP
