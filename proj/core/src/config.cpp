// SPDX-License-Identifier: Apache-2.0
#include "forge/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "forge/error.hpp"

namespace forge {
namespace {

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : s_(text) {}

  nlohmann::json parse() {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    while (true) {
      skip_blank_lines();
      if (pos_ >= s_.size()) break;
      if (s_[pos_] == '[') {
        const bool array = pos_ + 1 < s_.size() && s_[pos_ + 1] == '[';
        pos_ += array ? 2 : 1;
        const auto path = parse_key_path();
        expect(']');
        if (array) expect(']');
        table = &open_table(root, path, array);
      } else {
        const auto path = parse_key_path();
        expect('=');
        nlohmann::json* target = table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) target = &(*target)[path[i]];
        if (target->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*target)[path.back()] = parse_value();
      }
      end_of_line();
    }
    return root;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw ParseError("toml: " + msg, pos_); }

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
  }

  void skip_blank_lines() {
    while (pos_ < s_.size()) {
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == '#')
        while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
      if (pos_ < s_.size() && (s_[pos_] == '\n' || s_[pos_] == '\r'))
        ++pos_;
      else
        break;
    }
  }

  void end_of_line() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '#')
      while (pos_ < s_.size() && s_[pos_] != '\n') ++pos_;
    if (pos_ < s_.size() && s_[pos_] == '\r') ++pos_;
    if (pos_ < s_.size() && s_[pos_] != '\n') fail("expected end of line");
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= s_.size() || s_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::vector<std::string> parse_key_path() {
    std::vector<std::string> path;
    while (true) {
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == '"') {
        path.push_back(parse_string());
      } else {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_' || s_[pos_] == '-'))
          ++pos_;
        if (pos_ == start) fail("expected key");
        path.emplace_back(s_.substr(start, pos_ - start));
      }
      skip_ws();
      if (pos_ < s_.size() && s_[pos_] == '.') {
        ++pos_;
        continue;
      }
      return path;
    }
  }

  nlohmann::json& open_table(nlohmann::json& root, const std::vector<std::string>& path, bool array) {
    nlohmann::json* node = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      node = &(*node)[path[i]];
      if (node->is_array()) node = &node->back();
    }
    nlohmann::json& leaf = (*node)[path.back()];
    if (!array) {
      if (leaf.is_null()) leaf = nlohmann::json::object();
      return leaf;
    }
    if (leaf.is_null()) leaf = nlohmann::json::array();
    if (!leaf.is_array()) fail("'" + path.back() + "' is not an array of tables");
    leaf.push_back(nlohmann::json::object());
    return leaf.back();
  }

  std::string parse_string() {
    ++pos_;  // opening quote
    std::string out;
    while (pos_ < s_.size() && s_[pos_] != '"') {
      char c = s_[pos_++];
      if (c == '\n') fail("newline in string");
      if (c == '\\') {
        if (pos_ >= s_.size()) fail("dangling escape");
        const char e = s_[pos_++];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '"': c = '"'; break;
          case '\\': c = '\\'; break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
      out.push_back(c);
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }

  nlohmann::json parse_value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("expected value");
    const char c = s_[pos_];
    if (c == '"') return parse_string();
    if (c == '[') {
      ++pos_;
      nlohmann::json arr = nlohmann::json::array();
      while (true) {
        skip_blank_lines();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return arr;
        }
        arr.push_back(parse_value());
        skip_blank_lines();
        if (pos_ < s_.size() && s_[pos_] == ',') {
          ++pos_;
          continue;
        }
        skip_blank_lines();
        expect(']');
        return arr;
      }
    }
    const std::size_t start = pos_;
    while (pos_ < s_.size() && !std::isspace(static_cast<unsigned char>(s_[pos_])) && s_[pos_] != ',' && s_[pos_] != ']' &&
           s_[pos_] != '#')
      ++pos_;
    const std::string word(s_.substr(start, pos_ - start));
    if (word == "true") return true;
    if (word == "false") return false;
    std::string digits;
    for (char ch : word)
      if (ch != '_') digits.push_back(ch);
    try {
      std::size_t used = 0;
      if (digits.find_first_of(".eE") == std::string::npos) {
        const long long v = std::stoll(digits, &used);
        if (used == digits.size()) return v;
      } else {
        const double v = std::stod(digits, &used);
        if (used == digits.size()) return v;
      }
    } catch (const std::exception&) {
    }
    pos_ = start;
    fail("unsupported value '" + word + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

nlohmann::json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() == ".toml") return parse_toml(buf.str());
  try {
    return nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what(), e.byte);
  }
}

}  // namespace forge
