#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "oocmice/error.hpp"

namespace oocmice {

using RowId = std::uint64_t;

enum class StorageKind : std::uint8_t { Float64, Int64, Category };

const char* to_string(StorageKind kind) noexcept;
StorageKind storage_kind_from_string(const std::string& text);

inline constexpr std::int64_t kMissingInt = std::numeric_limits<std::int64_t>::min();
inline constexpr std::size_t kDefaultChunkRows = 65536;

struct ColumnDecl {
  std::string name;
  StorageKind kind = StorageKind::Float64;
};

struct ColumnDescriptor {
  std::string name;
  StorageKind kind = StorageKind::Float64;
  /// Category labels indexed by code; empty for numeric columns.
  std::vector<std::string> categories;
};

struct MemoryStats {
  std::size_t peak_resident_bytes = 0;
  std::size_t spill_events = 0;
  std::size_t checkpoint_events = 0;
  std::size_t bytes_spilled = 0;
};

/// Process-wide accounting of resident chunk bytes. Several tables may
/// report into one tracker so that the high-water mark covers all of them.
class MemoryTracker {
 public:
  void acquire(std::size_t bytes) noexcept;
  void release(std::size_t bytes) noexcept;
  void note_spill(std::size_t bytes) noexcept;
  void note_checkpoint() noexcept;

  std::size_t resident_bytes() const noexcept { return resident_.load(); }
  MemoryStats snapshot() const noexcept;

 private:
  std::atomic<std::size_t> resident_{0};
  std::atomic<std::size_t> peak_{0};
  std::atomic<std::size_t> spills_{0};
  std::atomic<std::size_t> checkpoints_{0};
  std::atomic<std::size_t> spilled_bytes_{0};
};

/// One column's values for one row range, with the original-missingness
/// bitmap (bit set = missing at ingest).
struct Chunk {
  StorageKind kind = StorageKind::Float64;
  std::size_t rows = 0;
  std::vector<double> reals;
  std::vector<std::int64_t> ints;
  std::vector<std::uint8_t> mask;

  static Chunk make(StorageKind kind, std::size_t rows);
  static std::size_t bytes_for(std::size_t rows) noexcept { return rows * 8 + (rows + 7) / 8; }
  std::size_t bytes() const noexcept { return bytes_for(rows); }

  bool missing(std::size_t i) const noexcept { return (mask[i >> 3] >> (i & 7)) & 1U; }
  void set_missing(std::size_t i) noexcept { mask[i >> 3] |= static_cast<std::uint8_t>(1U << (i & 7)); }
};

/// Read-only window onto one column of a chunk.
class ColumnSlice {
 public:
  ColumnSlice() = default;
  explicit ColumnSlice(const Chunk* chunk) : chunk_(chunk) {}

  StorageKind kind() const noexcept { return chunk_->kind; }
  std::size_t size() const noexcept { return chunk_->rows; }
  bool missing(std::size_t i) const noexcept { return chunk_->missing(i); }
  std::span<const double> reals() const noexcept { return chunk_->reals; }
  std::span<const std::int64_t> ints() const noexcept { return chunk_->ints; }

  double as_double(std::size_t i) const noexcept {
    return chunk_->kind == StorageKind::Float64 ? chunk_->reals[i]
                                                : static_cast<double>(chunk_->ints[i]);
  }
  std::int64_t as_int(std::size_t i) const noexcept { return chunk_->ints[i]; }

 private:
  const Chunk* chunk_ = nullptr;
};

/// A pinned row range across a set of columns. While a view is alive its
/// chunks cannot be evicted.
class ChunkView {
 public:
  RowId begin() const noexcept { return begin_; }
  RowId end() const noexcept { return end_; }
  std::size_t rows() const noexcept { return static_cast<std::size_t>(end_ - begin_); }
  std::size_t chunk_index() const noexcept { return chunk_index_; }
  std::size_t width() const noexcept { return slices_.size(); }
  const ColumnSlice& column(std::size_t k) const { return slices_.at(k); }

 private:
  friend class ChunkedTable;
  RowId begin_ = 0;
  RowId end_ = 0;
  std::size_t chunk_index_ = 0;
  std::vector<std::shared_ptr<const Chunk>> pins_;
  std::vector<ColumnSlice> slices_;
};

struct CheckpointToken {
  std::filesystem::path manifest;
};

class CheckpointError : public Error {
 public:
  CheckpointError(const std::string& what, std::size_t flushed, std::size_t remaining)
      : Error("chunkstore", ErrorCode::Checkpoint, what), flushed_(flushed), remaining_(remaining) {}
  std::size_t flushed() const noexcept { return flushed_; }
  std::size_t remaining() const noexcept { return remaining_; }

 private:
  std::size_t flushed_;
  std::size_t remaining_;
};

struct TableOptions {
  std::size_t chunk_rows = kDefaultChunkRows;
  std::size_t cache_budget_bytes = std::size_t{1} << 30;
  std::filesystem::path spill_dir;
  std::shared_ptr<MemoryTracker> tracker;
};

struct IngestOptions {
  std::vector<std::string> missing_tokens{"NA", ""};
  TableOptions table;
};

class ScanStream;

/// Column names from the first record of a CSV file.
std::vector<std::string> read_csv_header(const std::filesystem::path& path);

/// Disk-backed columnar table split into fixed-size row chunks. Chunks are
/// cached in memory under a byte budget; least-recently-used chunks are
/// evicted (and written out first when dirty) before a load would exceed it.
///
/// Row identifiers are positions 0..n_rows-1 and never change. Missingness
/// masks are fixed at ingest; write_values only touches value buffers.
///
/// Reads may run concurrently; writes need exclusive access to the table.
class ChunkedTable {
 public:
  ChunkedTable(std::vector<ColumnDescriptor> schema, std::size_t n_rows, TableOptions options);
  ~ChunkedTable();

  ChunkedTable(const ChunkedTable&) = delete;
  ChunkedTable& operator=(const ChunkedTable&) = delete;

  static std::unique_ptr<ChunkedTable> ingest_csv(const std::filesystem::path& path,
                                                  const std::vector<ColumnDecl>& schema,
                                                  const IngestOptions& options);

  /// Reopens the state captured by a checkpoint. Files referenced by the
  /// token are treated as read-only; new versions go to options.spill_dir.
  static std::unique_ptr<ChunkedTable> open(const CheckpointToken& token, TableOptions options);

  /// Builds a table from in-memory columns (tests, generators). Values for
  /// masked cells are replaced with the storage sentinel.
  static std::unique_ptr<ChunkedTable> from_columns(std::vector<ColumnDescriptor> schema,
                                                    const std::vector<std::vector<double>>& values,
                                                    const std::vector<std::vector<bool>>& missing,
                                                    TableOptions options);

  /// Streams a table to disk one chunk at a time; fill(column, chunk) must
  /// populate values and mask of the given chunk. Nothing beyond one chunk
  /// is ever resident.
  static std::unique_ptr<ChunkedTable> generate(
      std::vector<ColumnDescriptor> schema, std::size_t n_rows, TableOptions options,
      const std::function<void(std::size_t column, RowId begin, Chunk& chunk)>& fill);

  /// Copy-on-write clone: shares the on-disk chunks of this table, writes
  /// its own versions into options.spill_dir. Flushes dirty chunks first.
  std::unique_ptr<ChunkedTable> clone(TableOptions options);

  const std::vector<ColumnDescriptor>& schema() const noexcept { return schema_; }
  std::size_t column_index(const std::string& name) const;
  std::optional<std::size_t> find_column(const std::string& name) const;
  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t chunk_rows() const noexcept { return chunk_rows_; }
  std::size_t chunk_count() const noexcept { return n_chunks_; }
  std::size_t cache_budget_bytes() const noexcept { return budget_; }
  std::size_t max_chunk_bytes() const noexcept { return Chunk::bytes_for(std::min(chunk_rows_, n_rows_)); }
  std::size_t resident_bytes() const;
  const std::filesystem::path& spill_dir() const noexcept { return spill_dir_; }
  const std::shared_ptr<MemoryTracker>& tracker() const noexcept { return tracker_; }
  MemoryStats memory_stats() const noexcept { return tracker_->snapshot(); }

  std::pair<RowId, RowId> chunk_range(std::size_t chunk) const noexcept;

  ScanStream scan(const std::vector<std::string>& columns);
  ScanStream scan_indices(std::vector<std::size_t> columns);
  ChunkView view(std::size_t chunk, const std::vector<std::size_t>& columns);

  void write_values(std::size_t column, std::span<const RowId> rows, std::span<const double> values);
  void write_values(std::size_t column, std::span<const RowId> rows,
                    std::span<const std::int64_t> values);
  void write_values(const std::string& column, std::span<const RowId> rows,
                    std::span<const double> values) {
    write_values(column_index(column), rows, values);
  }

  /// Marks additional cells as missing. This is the amputation hook used to
  /// build evaluation tables; imputation never calls it.
  void ampute_cells(std::size_t column, std::span<const RowId> rows);

  CheckpointToken checkpoint();
  /// Deletes the files of the latest checkpoint that are not also live.
  void drop_checkpoint();
  /// Drops every clean unpinned chunk from the cache.
  void release_cache();

  std::size_t dirty_chunks() const;
  std::size_t masked_count(std::size_t column);
  std::vector<double> read_column(std::size_t column);
  std::vector<std::uint8_t> read_mask(std::size_t column);

  /// Writes the current values (NA for empty cells); `order` lists the
  /// columns to write, all of them in schema order when empty.
  void export_csv(const std::filesystem::path& path, std::vector<std::size_t> order = {});

 private:
  struct Slot {
    std::filesystem::path file;
    bool owned = false;
  };
  struct Entry {
    std::shared_ptr<Chunk> chunk;
    bool dirty = false;
    std::list<std::size_t>::iterator lru;
  };

  std::size_t key(std::size_t column, std::size_t chunk) const noexcept { return column * n_chunks_ + chunk; }
  std::size_t rows_in_chunk(std::size_t chunk) const noexcept;
  /// Writes a manifest of the current state; only chain checkpoints count
  /// as checkpoint events, not the snapshots taken at ingest or clone time.
  CheckpointToken seal(bool counted);
  std::shared_ptr<Chunk> acquire_locked(std::size_t column, std::size_t chunk, bool for_write);
  void make_room_locked(std::size_t needed);
  void evict_locked(std::size_t slot_key);
  std::filesystem::path write_chunk_file(std::size_t column, std::size_t chunk, const Chunk& data);
  void install_new_chunk(std::size_t column, std::size_t chunk, std::shared_ptr<Chunk> data);
  void retire_file(const Slot& slot);
  void write_manifest(const std::filesystem::path& path) const;
  void check_column(std::size_t column) const;

  std::vector<ColumnDescriptor> schema_;
  std::size_t n_rows_;
  std::size_t chunk_rows_;
  std::size_t n_chunks_;
  std::size_t budget_;
  std::filesystem::path spill_dir_;
  std::shared_ptr<MemoryTracker> tracker_;
  std::string file_prefix_;

  mutable std::mutex mutex_;
  std::vector<Slot> slots_;
  std::unordered_map<std::size_t, Entry> cache_;
  std::list<std::size_t> lru_;
  std::size_t resident_ = 0;
  std::uint64_t version_ = 0;

  std::optional<std::filesystem::path> checkpoint_manifest_;
  std::unordered_set<std::string> checkpoint_files_;
  std::uint64_t checkpoint_generation_ = 0;

  friend class ScanStream;
};

/// Yields chunk views in ascending row order.
class ScanStream {
 public:
  std::optional<ChunkView> next();
  std::size_t chunk_count() const noexcept;

 private:
  friend class ChunkedTable;
  ScanStream(ChunkedTable* table, std::vector<std::size_t> columns)
      : table_(table), columns_(std::move(columns)) {}
  ChunkedTable* table_;
  std::vector<std::size_t> columns_;
  std::size_t next_chunk_ = 0;
};

}  // namespace oocmice
