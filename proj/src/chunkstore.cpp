#include "oocmice/chunkstore.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <unistd.h>

#include "csv.hpp"
#include "manifest.hpp"

namespace oocmice {

static_assert(std::endian::native == std::endian::little,
              "chunk files are written in host order and must be little-endian");

namespace fs = std::filesystem;

namespace {

Error store_error(ErrorCode code, const std::string& what) { return Error("chunkstore", code, what); }

std::string unique_prefix() {
  static std::atomic<std::uint64_t> counter{0};
  return "p" + std::to_string(::getpid()) + "t" + std::to_string(counter.fetch_add(1));
}

void write_chunk(const fs::path& path, const Chunk& chunk) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw store_error(ErrorCode::Io, "cannot create chunk file " + path.string());
  if (chunk.kind == StorageKind::Float64) {
    out.write(reinterpret_cast<const char*>(chunk.reals.data()),
              static_cast<std::streamsize>(chunk.rows * sizeof(double)));
  } else {
    out.write(reinterpret_cast<const char*>(chunk.ints.data()),
              static_cast<std::streamsize>(chunk.rows * sizeof(std::int64_t)));
  }
  out.write(reinterpret_cast<const char*>(chunk.mask.data()),
            static_cast<std::streamsize>(chunk.mask.size()));
  out.flush();
  if (!out) throw store_error(ErrorCode::Io, "short write to chunk file " + path.string());
}

std::shared_ptr<Chunk> read_chunk(const fs::path& path, StorageKind kind, std::size_t rows) {
  auto chunk = std::make_shared<Chunk>(Chunk::make(kind, rows));
  std::ifstream in(path, std::ios::binary);
  if (!in) throw store_error(ErrorCode::Io, "cannot open chunk file " + path.string());
  if (kind == StorageKind::Float64) {
    in.read(reinterpret_cast<char*>(chunk->reals.data()),
            static_cast<std::streamsize>(rows * sizeof(double)));
  } else {
    in.read(reinterpret_cast<char*>(chunk->ints.data()),
            static_cast<std::streamsize>(rows * sizeof(std::int64_t)));
  }
  in.read(reinterpret_cast<char*>(chunk->mask.data()), static_cast<std::streamsize>(chunk->mask.size()));
  if (!in) throw store_error(ErrorCode::Io, "truncated chunk file " + path.string());
  return chunk;
}

bool parse_double(std::string_view text, double& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t')) --last;
  if (first == last) return false;
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_int(std::string_view text, std::int64_t& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  while (first < last && (*first == ' ' || *first == '\t')) ++first;
  while (last > first && (last[-1] == ' ' || last[-1] == '\t')) --last;
  if (first == last) return false;
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec == std::errc() && ptr == last) return out != kMissingInt;
  double d = 0;
  if (!parse_double(text, d) || !std::isfinite(d) || d != std::trunc(d) || std::fabs(d) > 9.0e18) {
    return false;
  }
  out = static_cast<std::int64_t>(d);
  return true;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

const char* to_string(StorageKind kind) noexcept {
  switch (kind) {
    case StorageKind::Float64: return "float64";
    case StorageKind::Int64: return "int64";
    case StorageKind::Category: return "category";
  }
  return "?";
}

StorageKind storage_kind_from_string(const std::string& text) {
  if (text == "float64") return StorageKind::Float64;
  if (text == "int64") return StorageKind::Int64;
  if (text == "category") return StorageKind::Category;
  throw store_error(ErrorCode::Schema, "unknown storage kind '" + text + "'");
}

// ---------------------------------------------------------------- tracker

void MemoryTracker::acquire(std::size_t bytes) noexcept {
  const std::size_t now = resident_.fetch_add(bytes) + bytes;
  std::size_t peak = peak_.load();
  while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
  }
}

void MemoryTracker::release(std::size_t bytes) noexcept { resident_.fetch_sub(bytes); }

void MemoryTracker::note_spill(std::size_t bytes) noexcept {
  spills_.fetch_add(1);
  spilled_bytes_.fetch_add(bytes);
}

void MemoryTracker::note_checkpoint() noexcept { checkpoints_.fetch_add(1); }

MemoryStats MemoryTracker::snapshot() const noexcept {
  return MemoryStats{peak_.load(), spills_.load(), checkpoints_.load(), spilled_bytes_.load()};
}

Chunk Chunk::make(StorageKind kind, std::size_t rows) {
  Chunk c;
  c.kind = kind;
  c.rows = rows;
  if (kind == StorageKind::Float64) {
    c.reals.assign(rows, 0.0);
  } else {
    c.ints.assign(rows, 0);
  }
  c.mask.assign((rows + 7) / 8, 0);
  return c;
}

// ---------------------------------------------------------------- table

ChunkedTable::ChunkedTable(std::vector<ColumnDescriptor> schema, std::size_t n_rows, TableOptions options)
    : schema_(std::move(schema)),
      n_rows_(n_rows),
      chunk_rows_(options.chunk_rows),
      budget_(options.cache_budget_bytes),
      spill_dir_(std::move(options.spill_dir)),
      tracker_(options.tracker ? std::move(options.tracker) : std::make_shared<MemoryTracker>()),
      file_prefix_(unique_prefix()) {
  if (chunk_rows_ < 1) throw store_error(ErrorCode::Schema, "chunk_rows must be at least 1");
  n_chunks_ = (n_rows_ + chunk_rows_ - 1) / chunk_rows_;
  if (n_rows_ > 0 && budget_ < max_chunk_bytes()) {
    throw store_error(ErrorCode::Budget, "cache budget of " + std::to_string(budget_) +
                                             " bytes cannot hold one chunk of " +
                                             std::to_string(max_chunk_bytes()) + " bytes");
  }
  if (spill_dir_.empty()) throw store_error(ErrorCode::Io, "spill directory is required");
  std::error_code ec;
  fs::create_directories(spill_dir_, ec);
  if (ec) throw store_error(ErrorCode::Io, "cannot create spill directory " + spill_dir_.string());
  spill_dir_ = fs::absolute(spill_dir_);
  std::unordered_set<std::string> names;
  for (const auto& c : schema_) {
    if (!names.insert(c.name).second) throw store_error(ErrorCode::Schema, "duplicate column '" + c.name + "'");
  }
  slots_.resize(schema_.size() * n_chunks_);
}

ChunkedTable::~ChunkedTable() {
  std::lock_guard lock(mutex_);
  for (auto& [k, entry] : cache_) tracker_->release(entry.chunk->bytes());
  cache_.clear();
  for (const auto& slot : slots_) retire_file(slot);
}

std::size_t ChunkedTable::column_index(const std::string& name) const {
  if (auto idx = find_column(name)) return *idx;
  throw store_error(ErrorCode::Schema, "unknown column '" + name + "'");
}

std::optional<std::size_t> ChunkedTable::find_column(const std::string& name) const {
  for (std::size_t i = 0; i < schema_.size(); ++i) {
    if (schema_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t ChunkedTable::resident_bytes() const {
  std::lock_guard lock(mutex_);
  return resident_;
}

std::size_t ChunkedTable::rows_in_chunk(std::size_t chunk) const noexcept {
  const std::size_t begin = chunk * chunk_rows_;
  return std::min(chunk_rows_, n_rows_ - begin);
}

std::pair<RowId, RowId> ChunkedTable::chunk_range(std::size_t chunk) const noexcept {
  const RowId begin = static_cast<RowId>(chunk) * chunk_rows_;
  return {begin, begin + rows_in_chunk(chunk)};
}

void ChunkedTable::check_column(std::size_t column) const {
  if (column >= schema_.size()) {
    throw store_error(ErrorCode::Schema, "column index " + std::to_string(column) + " out of range");
  }
}

fs::path ChunkedTable::write_chunk_file(std::size_t column, std::size_t chunk, const Chunk& data) {
  const fs::path path = spill_dir_ / (file_prefix_ + "_c" + std::to_string(column) + "_k" +
                                      std::to_string(chunk) + "_v" + std::to_string(++version_) + ".bin");
  write_chunk(path, data);
  return path;
}

void ChunkedTable::retire_file(const Slot& slot) {
  if (!slot.owned || slot.file.empty()) return;
  if (checkpoint_files_.contains(slot.file.string())) return;
  std::error_code ec;
  fs::remove(slot.file, ec);
}

void ChunkedTable::install_new_chunk(std::size_t column, std::size_t chunk, std::shared_ptr<Chunk> data) {
  Slot& slot = slots_[key(column, chunk)];
  const fs::path path = write_chunk_file(column, chunk, *data);
  retire_file(slot);
  slot.file = path;
  slot.owned = true;
}

void ChunkedTable::evict_locked(std::size_t slot_key) {
  auto it = cache_.find(slot_key);
  Entry& entry = it->second;
  const std::size_t bytes = entry.chunk->bytes();
  if (entry.dirty) {
    const std::size_t column = slot_key / n_chunks_;
    const std::size_t chunk = slot_key % n_chunks_;
    Slot& slot = slots_[slot_key];
    const fs::path path = write_chunk_file(column, chunk, *entry.chunk);
    retire_file(slot);
    slot.file = path;
    slot.owned = true;
    tracker_->note_spill(bytes);
  }
  lru_.erase(entry.lru);
  cache_.erase(it);
  resident_ -= bytes;
  tracker_->release(bytes);
}

void ChunkedTable::make_room_locked(std::size_t needed) {
  auto it = lru_.end();
  while (resident_ + needed > budget_ && it != lru_.begin()) {
    auto candidate = std::prev(it);
    if (cache_.at(*candidate).chunk.use_count() > 1) {  // pinned
      it = candidate;
      continue;
    }
    evict_locked(*candidate);
  }
  if (resident_ + needed > budget_ + max_chunk_bytes()) {
    throw store_error(ErrorCode::Budget, "pinned chunks leave no room within the cache budget");
  }
}

std::shared_ptr<Chunk> ChunkedTable::acquire_locked(std::size_t column, std::size_t chunk, bool for_write) {
  const std::size_t k = key(column, chunk);
  if (auto it = cache_.find(k); it != cache_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second.lru);
    if (for_write) it->second.dirty = true;
    return it->second.chunk;
  }
  const std::size_t rows = rows_in_chunk(chunk);
  const std::size_t bytes = Chunk::bytes_for(rows);
  make_room_locked(bytes);
  const Slot& slot = slots_[k];
  std::shared_ptr<Chunk> data;
  if (slot.file.empty()) {
    data = std::make_shared<Chunk>(Chunk::make(schema_[column].kind, rows));
  } else {
    data = read_chunk(slot.file, schema_[column].kind, rows);
  }
  lru_.push_front(k);
  cache_.emplace(k, Entry{data, for_write || slot.file.empty(), lru_.begin()});
  resident_ += bytes;
  tracker_->acquire(bytes);
  return data;
}

ChunkView ChunkedTable::view(std::size_t chunk, const std::vector<std::size_t>& columns) {
  for (auto c : columns) check_column(c);
  if (chunk >= n_chunks_) throw store_error(ErrorCode::Bounds, "chunk index out of range");
  std::lock_guard lock(mutex_);
  std::size_t distinct = std::unordered_set<std::size_t>(columns.begin(), columns.end()).size();
  if (distinct * max_chunk_bytes() > budget_ + max_chunk_bytes()) {
    throw store_error(ErrorCode::Budget, "a view over " + std::to_string(distinct) +
                                             " columns does not fit the cache budget");
  }
  ChunkView v;
  auto [begin, end] = chunk_range(chunk);
  v.begin_ = begin;
  v.end_ = end;
  v.chunk_index_ = chunk;
  v.pins_.reserve(columns.size());
  v.slices_.reserve(columns.size());
  for (auto c : columns) {
    auto data = acquire_locked(c, chunk, false);
    v.slices_.emplace_back(data.get());
    v.pins_.push_back(std::move(data));
  }
  return v;
}

ScanStream ChunkedTable::scan(const std::vector<std::string>& columns) {
  std::vector<std::size_t> idx;
  idx.reserve(columns.size());
  for (const auto& name : columns) idx.push_back(column_index(name));
  return scan_indices(std::move(idx));
}

ScanStream ChunkedTable::scan_indices(std::vector<std::size_t> columns) {
  for (auto c : columns) check_column(c);
  return ScanStream(this, std::move(columns));
}

std::optional<ChunkView> ScanStream::next() {
  if (columns_.empty() || next_chunk_ >= table_->chunk_count()) return std::nullopt;
  return table_->view(next_chunk_++, columns_);
}

std::size_t ScanStream::chunk_count() const noexcept { return columns_.empty() ? 0 : table_->chunk_count(); }

void ChunkedTable::write_values(std::size_t column, std::span<const RowId> rows, std::span<const double> values) {
  check_column(column);
  if (schema_[column].kind != StorageKind::Float64) {
    throw store_error(ErrorCode::Type, "column '" + schema_[column].name + "' does not store float64 values");
  }
  if (rows.size() != values.size()) throw store_error(ErrorCode::Contract, "rows and values differ in length");
  for (RowId r : rows) {
    if (r >= n_rows_) throw store_error(ErrorCode::Bounds, "row id " + std::to_string(r) + " out of range");
  }
  std::lock_guard lock(mutex_);
  std::shared_ptr<Chunk> current;
  std::size_t current_chunk = n_chunks_;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t c = rows[i] / chunk_rows_;
    if (c != current_chunk) {
      current.reset();
      current = acquire_locked(column, c, true);
      current_chunk = c;
    }
    current->reals[rows[i] - c * chunk_rows_] = values[i];
  }
}

void ChunkedTable::write_values(std::size_t column, std::span<const RowId> rows,
                                std::span<const std::int64_t> values) {
  check_column(column);
  const auto& desc = schema_[column];
  if (desc.kind == StorageKind::Float64) {
    throw store_error(ErrorCode::Type, "column '" + desc.name + "' does not store integer values");
  }
  if (rows.size() != values.size()) throw store_error(ErrorCode::Contract, "rows and values differ in length");
  for (RowId r : rows) {
    if (r >= n_rows_) throw store_error(ErrorCode::Bounds, "row id " + std::to_string(r) + " out of range");
  }
  if (desc.kind == StorageKind::Category) {
    const auto k = static_cast<std::int64_t>(desc.categories.size());
    for (auto v : values) {
      if (v < 0 || v >= k) {
        throw store_error(ErrorCode::Type, "category code " + std::to_string(v) + " not in dictionary of '" +
                                               desc.name + "'");
      }
    }
  }
  std::lock_guard lock(mutex_);
  std::shared_ptr<Chunk> current;
  std::size_t current_chunk = n_chunks_;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t c = rows[i] / chunk_rows_;
    if (c != current_chunk) {
      current.reset();
      current = acquire_locked(column, c, true);
      current_chunk = c;
    }
    current->ints[rows[i] - c * chunk_rows_] = values[i];
  }
}

void ChunkedTable::ampute_cells(std::size_t column, std::span<const RowId> rows) {
  check_column(column);
  for (RowId r : rows) {
    if (r >= n_rows_) throw store_error(ErrorCode::Bounds, "row id " + std::to_string(r) + " out of range");
  }
  std::lock_guard lock(mutex_);
  std::shared_ptr<Chunk> current;
  std::size_t current_chunk = n_chunks_;
  for (RowId r : rows) {
    const std::size_t c = r / chunk_rows_;
    if (c != current_chunk) {
      current.reset();
      current = acquire_locked(column, c, true);
      current_chunk = c;
    }
    const std::size_t local = r - c * chunk_rows_;
    current->set_missing(local);
    if (current->kind == StorageKind::Float64) {
      current->reals[local] = std::numeric_limits<double>::quiet_NaN();
    } else {
      current->ints[local] = kMissingInt;
    }
  }
}

std::size_t ChunkedTable::dirty_chunks() const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(
      std::count_if(cache_.begin(), cache_.end(), [](const auto& kv) { return kv.second.dirty; }));
}

void ChunkedTable::release_cache() {
  std::lock_guard lock(mutex_);
  std::vector<std::size_t> victims;
  for (const auto& [k, entry] : cache_) {
    if (!entry.dirty && entry.chunk.use_count() == 1) victims.push_back(k);
  }
  for (auto k : victims) evict_locked(k);
}

void ChunkedTable::write_manifest(const fs::path& path) const {
  Manifest m;
  m.set("oocmice_manifest", "1");
  m.set("n_rows", std::to_string(n_rows_));
  m.set("chunk_rows", std::to_string(chunk_rows_));
  m.set("n_columns", std::to_string(schema_.size()));
  for (std::size_t c = 0; c < schema_.size(); ++c) {
    const std::string p = "column." + std::to_string(c) + ".";
    m.set(p + "name", schema_[c].name);
    m.set(p + "kind", to_string(schema_[c].kind));
    m.set(p + "categories", join_list(schema_[c].categories));
    std::vector<std::string> files;
    files.reserve(n_chunks_);
    for (std::size_t k = 0; k < n_chunks_; ++k) files.push_back(slots_[key(c, k)].file.string());
    m.set(p + "chunks", join_list(files));
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw store_error(ErrorCode::Io, "cannot write manifest " + tmp.string());
    m.write(out);
    out.flush();
    if (!out) throw store_error(ErrorCode::Io, "short write to manifest " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointToken ChunkedTable::checkpoint() { return seal(true); }

CheckpointToken ChunkedTable::seal(bool counted) {
  std::lock_guard lock(mutex_);
  std::vector<std::size_t> dirty;
  for (const auto& [k, entry] : cache_) {
    if (entry.dirty) dirty.push_back(k);
  }
  if (counted) tracker_->note_checkpoint();
  if (dirty.empty() && checkpoint_manifest_ && fs::exists(*checkpoint_manifest_)) {
    return CheckpointToken{*checkpoint_manifest_};
  }
  // Slots never materialized (fresh tables) must exist on disk for a token.
  for (std::size_t k = 0; k < slots_.size(); ++k) {
    if (slots_[k].file.empty() && !cache_.contains(k)) {
      const std::size_t column = k / n_chunks_;
      const std::size_t chunk = k % n_chunks_;
      auto data = Chunk::make(schema_[column].kind, rows_in_chunk(chunk));
      slots_[k].file = write_chunk_file(column, chunk, data);
      slots_[k].owned = true;
    }
  }
  std::sort(dirty.begin(), dirty.end());
  std::size_t flushed = 0;
  for (auto k : dirty) {
    Entry& entry = cache_.at(k);
    try {
      const fs::path path = write_chunk_file(k / n_chunks_, k % n_chunks_, *entry.chunk);
      retire_file(slots_[k]);
      slots_[k].file = path;
      slots_[k].owned = true;
      entry.dirty = false;
      ++flushed;
    } catch (const Error& e) {
      throw CheckpointError(std::string("checkpoint flush failed: ") + e.what(), flushed, dirty.size() - flushed);
    }
  }
  const fs::path manifest =
      spill_dir_ / (file_prefix_ + "_checkpoint_" + std::to_string(++checkpoint_generation_) + ".manifest");
  try {
    write_manifest(manifest);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("manifest write failed: ") + e.what(), flushed, 0);
  }
  std::unordered_set<std::string> live;
  for (const auto& slot : slots_) {
    if (slot.owned) live.insert(slot.file.string());
  }
  std::error_code ec;
  for (const auto& old : checkpoint_files_) {
    if (!live.contains(old)) fs::remove(old, ec);
  }
  if (checkpoint_manifest_) fs::remove(*checkpoint_manifest_, ec);
  checkpoint_files_ = std::move(live);
  checkpoint_manifest_ = manifest;
  return CheckpointToken{manifest};
}

void ChunkedTable::drop_checkpoint() {
  std::lock_guard lock(mutex_);
  std::unordered_set<std::string> live;
  for (const auto& slot : slots_) {
    if (slot.owned) live.insert(slot.file.string());
  }
  std::error_code ec;
  for (const auto& f : checkpoint_files_) {
    if (!live.contains(f)) fs::remove(f, ec);
  }
  checkpoint_files_.clear();
  if (checkpoint_manifest_) fs::remove(*checkpoint_manifest_, ec);
  checkpoint_manifest_.reset();
}

std::unique_ptr<ChunkedTable> ChunkedTable::open(const CheckpointToken& token, TableOptions options) {
  std::ifstream in(token.manifest);
  if (!in) throw store_error(ErrorCode::Io, "cannot open manifest " + token.manifest.string());
  const Manifest m = Manifest::read(in);
  if (m.get("oocmice_manifest") != "1") throw store_error(ErrorCode::Format, "not a table manifest");
  const std::size_t n_rows = m.get_size("n_rows");
  options.chunk_rows = m.get_size("chunk_rows");
  const std::size_t n_columns = m.get_size("n_columns");
  std::vector<ColumnDescriptor> schema(n_columns);
  std::vector<std::vector<std::string>> files(n_columns);
  for (std::size_t c = 0; c < n_columns; ++c) {
    const std::string p = "column." + std::to_string(c) + ".";
    schema[c].name = m.get(p + "name");
    schema[c].kind = storage_kind_from_string(m.get(p + "kind"));
    schema[c].categories = split_list(m.get(p + "categories"));
    files[c] = split_list(m.get(p + "chunks"));
  }
  auto table = std::make_unique<ChunkedTable>(std::move(schema), n_rows, std::move(options));
  for (std::size_t c = 0; c < n_columns; ++c) {
    if (files[c].size() != table->n_chunks_) throw store_error(ErrorCode::Format, "manifest chunk list mismatch");
    for (std::size_t k = 0; k < table->n_chunks_; ++k) {
      table->slots_[table->key(c, k)] = Slot{files[c][k], false};
    }
  }
  return table;
}

std::unique_ptr<ChunkedTable> ChunkedTable::clone(TableOptions options) {
  seal(false);
  options.chunk_rows = chunk_rows_;
  auto table = std::make_unique<ChunkedTable>(schema_, n_rows_, std::move(options));
  std::lock_guard lock(mutex_);
  for (std::size_t k = 0; k < slots_.size(); ++k) table->slots_[k] = Slot{slots_[k].file, false};
  return table;
}

std::unique_ptr<ChunkedTable> ChunkedTable::from_columns(std::vector<ColumnDescriptor> schema,
                                                         const std::vector<std::vector<double>>& values,
                                                         const std::vector<std::vector<bool>>& missing,
                                                         TableOptions options) {
  if (values.size() != schema.size()) throw store_error(ErrorCode::Schema, "column count mismatch");
  const std::size_t n_rows = values.empty() ? 0 : values.front().size();
  for (std::size_t c = 0; c < values.size(); ++c) {
    if (values[c].size() != n_rows) throw store_error(ErrorCode::Schema, "ragged columns");
    if (!missing.empty() && !missing[c].empty() && missing[c].size() != n_rows) {
      throw store_error(ErrorCode::Schema, "mask length mismatch");
    }
  }
  auto table = std::make_unique<ChunkedTable>(std::move(schema), n_rows, std::move(options));
  for (std::size_t c = 0; c < table->schema_.size(); ++c) {
    const auto& desc = table->schema_[c];
    for (std::size_t k = 0; k < table->n_chunks_; ++k) {
      auto [begin, end] = table->chunk_range(k);
      auto data = std::make_shared<Chunk>(Chunk::make(desc.kind, end - begin));
      table->tracker_->acquire(data->bytes());
      for (RowId r = begin; r < end; ++r) {
        const std::size_t i = r - begin;
        const bool miss = !missing.empty() && !missing[c].empty() && missing[c][r];
        if (miss) data->set_missing(i);
        if (desc.kind == StorageKind::Float64) {
          data->reals[i] = miss ? std::numeric_limits<double>::quiet_NaN() : values[c][r];
        } else {
          data->ints[i] = miss ? kMissingInt : static_cast<std::int64_t>(std::llround(values[c][r]));
          if (!miss && desc.kind == StorageKind::Category &&
              (data->ints[i] < 0 || data->ints[i] >= static_cast<std::int64_t>(desc.categories.size()))) {
            table->tracker_->release(data->bytes());
            throw store_error(ErrorCode::Type, "category code out of dictionary in column '" + desc.name + "'");
          }
        }
      }
      table->install_new_chunk(c, k, data);
      table->tracker_->release(data->bytes());
    }
  }
  table->seal(false);
  return table;
}

std::unique_ptr<ChunkedTable> ChunkedTable::generate(
    std::vector<ColumnDescriptor> schema, std::size_t n_rows, TableOptions options,
    const std::function<void(std::size_t, RowId, Chunk&)>& fill) {
  auto table = std::make_unique<ChunkedTable>(std::move(schema), n_rows, std::move(options));
  for (std::size_t c = 0; c < table->schema_.size(); ++c) {
    for (std::size_t k = 0; k < table->n_chunks_; ++k) {
      auto [begin, end] = table->chunk_range(k);
      auto data = std::make_shared<Chunk>(Chunk::make(table->schema_[c].kind, end - begin));
      table->tracker_->acquire(data->bytes());
      try {
        fill(c, begin, *data);
        table->install_new_chunk(c, k, data);
      } catch (...) {
        table->tracker_->release(data->bytes());
        throw;
      }
      table->tracker_->release(data->bytes());
    }
  }
  table->seal(false);
  return table;
}

std::vector<std::string> read_csv_header(const fs::path& path) {
  CsvReader reader(path);
  std::vector<std::string> header;
  if (!reader.next(header) || header.empty() || (header.size() == 1 && header[0].empty())) {
    throw store_error(ErrorCode::Format, "missing header row in " + path.string());
  }
  return header;
}

std::unique_ptr<ChunkedTable> ChunkedTable::ingest_csv(const fs::path& path, const std::vector<ColumnDecl>& schema,
                                                       const IngestOptions& options) {
  const std::unordered_set<std::string> tokens(options.missing_tokens.begin(), options.missing_tokens.end());

  CsvReader header_reader(path);
  std::vector<std::string> header;
  if (!header_reader.next(header) || header.empty() || (header.size() == 1 && header[0].empty())) {
    throw store_error(ErrorCode::Format, "missing header row in " + path.string());
  }
  std::vector<std::size_t> source_index(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    auto it = std::find(header.begin(), header.end(), schema[c].name);
    if (it == header.end()) throw store_error(ErrorCode::Schema, "column '" + schema[c].name + "' not in header");
    source_index[c] = static_cast<std::size_t>(it - header.begin());
  }

  // Pass 1: validate, count rows, tally category frequencies.
  std::vector<std::map<std::string, std::size_t>> freq(schema.size());
  std::size_t n_rows = 0;
  std::vector<std::string> record;
  while (header_reader.next(record)) {
    if (record.size() == 1 && record[0].empty() && header.size() > 1) continue;  // blank line
    ++n_rows;
    if (record.size() != header.size()) {
      throw store_error(ErrorCode::Parse, "row " + std::to_string(n_rows) + " has " +
                                              std::to_string(record.size()) + " fields, expected " +
                                              std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < schema.size(); ++c) {
      const std::string& cell = record[source_index[c]];
      if (tokens.contains(cell)) continue;
      bool ok = true;
      switch (schema[c].kind) {
        case StorageKind::Float64: {
          double d;
          ok = parse_double(cell, d);
          break;
        }
        case StorageKind::Int64: {
          std::int64_t v;
          ok = parse_int(cell, v);
          break;
        }
        case StorageKind::Category: ++freq[c][cell]; break;
      }
      if (!ok) {
        throw store_error(ErrorCode::Parse, "unparseable value '" + cell + "' at row " + std::to_string(n_rows) +
                                                ", column '" + schema[c].name + "'");
      }
    }
  }

  std::vector<ColumnDescriptor> descriptors(schema.size());
  std::vector<std::unordered_map<std::string, std::int64_t>> codes(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    descriptors[c].name = schema[c].name;
    descriptors[c].kind = schema[c].kind;
    if (schema[c].kind != StorageKind::Category) continue;
    std::vector<std::pair<std::string, std::size_t>> levels(freq[c].begin(), freq[c].end());
    std::stable_sort(levels.begin(), levels.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (const auto& [label, count] : levels) {
      codes[c].emplace(label, static_cast<std::int64_t>(descriptors[c].categories.size()));
      descriptors[c].categories.push_back(label);
    }
  }

  auto table = std::make_unique<ChunkedTable>(std::move(descriptors), n_rows, options.table);
  if (n_rows == 0 || schema.empty()) {
    table->seal(false);
    return table;
  }

  // Pass 2, in column groups whose row band fits the budget.
  const std::size_t group = std::max<std::size_t>(1, table->budget_ / table->max_chunk_bytes());
  for (std::size_t first = 0; first < schema.size(); first += group) {
    const std::size_t last = std::min(schema.size(), first + group);
    CsvReader reader(path);
    reader.next(record);  // header
    std::vector<std::shared_ptr<Chunk>> band(last - first);
    std::size_t chunk = 0;
    std::size_t filled = 0;
    auto start_band = [&] {
      const std::size_t rows = table->rows_in_chunk(chunk);
      for (std::size_t c = first; c < last; ++c) {
        band[c - first] = std::make_shared<Chunk>(Chunk::make(schema[c].kind, rows));
        table->tracker_->acquire(band[c - first]->bytes());
      }
      filled = 0;
    };
    start_band();
    while (reader.next(record)) {
      if (record.size() == 1 && record[0].empty() && header.size() > 1) continue;
      for (std::size_t c = first; c < last; ++c) {
        Chunk& dst = *band[c - first];
        const std::string& cell = record[source_index[c]];
        const bool miss = tokens.contains(cell);
        if (miss) dst.set_missing(filled);
        switch (schema[c].kind) {
          case StorageKind::Float64: {
            double d = std::numeric_limits<double>::quiet_NaN();
            if (!miss) parse_double(cell, d);
            dst.reals[filled] = d;
            break;
          }
          case StorageKind::Int64: {
            std::int64_t v = kMissingInt;
            if (!miss) parse_int(cell, v);
            dst.ints[filled] = v;
            break;
          }
          case StorageKind::Category:
            dst.ints[filled] = miss ? kMissingInt : codes[c].at(cell);
            break;
        }
      }
      if (++filled == table->rows_in_chunk(chunk)) {
        for (std::size_t c = first; c < last; ++c) {
          table->install_new_chunk(c, chunk, band[c - first]);
          table->tracker_->release(band[c - first]->bytes());
          band[c - first].reset();
        }
        if (++chunk == table->n_chunks_) break;
        start_band();
      }
    }
  }
  table->seal(false);
  return table;
}

std::size_t ChunkedTable::masked_count(std::size_t column) {
  std::size_t n = 0;
  auto stream = scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) n += s.missing(i) ? 1 : 0;
  }
  return n;
}

std::vector<double> ChunkedTable::read_column(std::size_t column) {
  std::vector<double> out;
  out.reserve(n_rows_);
  auto stream = scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) out.push_back(s.as_double(i));
  }
  return out;
}

std::vector<std::uint8_t> ChunkedTable::read_mask(std::size_t column) {
  std::vector<std::uint8_t> out;
  out.reserve(n_rows_);
  auto stream = scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) out.push_back(s.missing(i) ? 1 : 0);
  }
  return out;
}

void ChunkedTable::export_csv(const fs::path& path, std::vector<std::size_t> order) {
  if (order.empty()) {
    order.resize(schema_.size());
    for (std::size_t c = 0; c < order.size(); ++c) order[c] = c;
  }
  for (auto c : order) check_column(c);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw store_error(ErrorCode::Io, "cannot write " + path.string());
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k) out << ',';
    out << csv_quote(schema_[order[k]].name);
  }
  out << '\n';
  std::vector<std::string> lines;
  for (std::size_t k = 0; k < n_chunks_; ++k) {
    auto [begin, end] = chunk_range(k);
    lines.assign(end - begin, std::string());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::size_t c = order[pos];
      const auto& desc = schema_[c];
      auto v = view(k, {c});
      const auto& s = v.column(0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        std::string& line = lines[i];
        if (pos) line += ',';
        switch (desc.kind) {
          case StorageKind::Float64: {
            const double d = s.reals()[i];
            line += std::isnan(d) ? std::string("NA") : format_real(d);
            break;
          }
          case StorageKind::Int64: {
            const auto x = s.ints()[i];
            line += x == kMissingInt ? std::string("NA") : std::to_string(x);
            break;
          }
          case StorageKind::Category: {
            const auto x = s.ints()[i];
            line += x == kMissingInt ? std::string("NA") : csv_quote(desc.categories.at(static_cast<std::size_t>(x)));
            break;
          }
        }
      }
    }
    for (const auto& line : lines) out << line << '\n';
  }
  out.flush();
  if (!out) throw store_error(ErrorCode::Io, "short write to " + path.string());
}

}  // namespace oocmice
