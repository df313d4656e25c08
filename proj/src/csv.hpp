#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "oocmice/error.hpp"

namespace oocmice {

/// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF, embedded
/// newlines inside quotes. A UTF-8 byte order mark on the first line is skipped.
class CsvReader {
 public:
  explicit CsvReader(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw Error("chunkstore", ErrorCode::Io, "cannot open " + path.string());
    in_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (in_.peek() == 0xEF) {
      char bom[3];
      in_.read(bom, 3);
      if (!(bom[1] == '\xBB' && bom[2] == '\xBF')) in_.seekg(0);
    }
  }

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    if (!std::getline(in_, line_)) return false;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    while (true) {
      for (; i < line_.size(); ++i) {
        const char ch = line_[i];
        if (quoted) {
          if (ch == '"') {
            if (i + 1 < line_.size() && line_[i + 1] == '"') {
              field += '"';
              ++i;
            } else {
              quoted = false;
            }
          } else {
            field += ch;
          }
        } else if (ch == '"') {
          quoted = true;
        } else if (ch == ',') {
          fields.push_back(std::move(field));
          field.clear();
        } else if (ch == '\r' && i + 1 == line_.size()) {
          // CRLF
        } else {
          field += ch;
        }
      }
      if (!quoted) break;
      std::string more;
      if (!std::getline(in_, more)) break;
      field += '\n';
      line_ = std::move(more);
      i = 0;
    }
    fields.push_back(std::move(field));
    return true;
  }

 private:
  std::ifstream in_;
  std::string line_;
  std::vector<char> buffer_ = std::vector<char>(1 << 16);
};

inline std::string csv_quote(const std::string& text) {
  if (text.find_first_of(",\"\n\r") == std::string::npos) return text;
  std::string out = "\"";
  for (char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

}  // namespace oocmice
