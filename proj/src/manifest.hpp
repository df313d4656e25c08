#pragma once

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "oocmice/error.hpp"

namespace oocmice {

/// key=value text file. Values are percent-encoded so that any byte
/// sequence survives a round trip; list items are comma-separated.
class Manifest {
 public:
  void set(const std::string& key, const std::string& value) { entries_[key] = value; }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw Error("chunkstore", ErrorCode::Format, "manifest lacks key '" + key + "'");
    return it->second;
  }

  std::size_t get_size(const std::string& key) const {
    const std::string& v = get(key);
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw Error("chunkstore", ErrorCode::Format, "manifest key '" + key + "' is not a count");
    }
    return out;
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << '=' << encode(v) << '\n';
  }

  static Manifest read(std::istream& in) {
    Manifest m;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw Error("chunkstore", ErrorCode::Format, "malformed manifest line");
      m.entries_[line.substr(0, eq)] = decode(line.substr(eq + 1));
    }
    return m;
  }

  static std::string encode(const std::string& raw) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    for (unsigned char ch : raw) {
      if (ch == '%' || ch == '\n' || ch == '\r' || ch < 0x20) {
        out += '%';
        out += hex[ch >> 4];
        out += hex[ch & 15];
      } else {
        out += static_cast<char>(ch);
      }
    }
    return out;
  }

  static std::string decode(const std::string& text) {
    std::string out;
    for (std::size_t i = 0; i < text.size(); ++i) {
      if (text[i] == '%' && i + 2 < text.size()) {
        out += static_cast<char>(std::stoi(text.substr(i + 1, 2), nullptr, 16));
        i += 2;
      } else {
        out += text[i];
      }
    }
    return out;
  }

 private:
  std::map<std::string, std::string> entries_;
};

/// Joins items with ',' after escaping '%' and ','.
inline std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    for (char ch : items[i]) {
      if (ch == '%') out += "%25";
      else if (ch == ',') out += "%2C";
      else out += ch;
    }
  }
  return out;
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (text[i] == '%' && i + 2 < text.size()) {
      cur += static_cast<char>(std::stoi(text.substr(i + 1, 2), nullptr, 16));
      i += 2;
    } else {
      cur += text[i];
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace oocmice
