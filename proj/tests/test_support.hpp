#pragma once

#include <cstring>
#include <filesystem>
#include <vector>
#include <fstream>
#include <random>
#include <string>

#include "oocmice/chunkstore.hpp"
#include "oocmice/error.hpp"

namespace oocmice::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("oocmice_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  return path;
}

inline std::size_t count_files(const std::filesystem::path& dir) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) n += e.is_regular_file() ? 1 : 0;
  return n;
}

/// Bitwise equality, so NaN sentinels compare equal to themselves.
inline bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}


inline oocmice::TableOptions table_options(const TempDir& dir, std::size_t chunk_rows, std::size_t budget = std::size_t{1} << 28,
                                           const std::string& sub = "spill") {
  oocmice::TableOptions o;
  o.chunk_rows = chunk_rows;
  o.cache_budget_bytes = budget;
  o.spill_dir = dir / sub;
  return o;
}

/// Code of the oocmice::Error thrown by fn, or Usage when nothing is thrown.
template <typename Fn>
oocmice::ErrorCode error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const oocmice::Error& e) {
    return e.code();
  }
  return oocmice::ErrorCode::Usage;
}

}  // namespace oocmice::testing
