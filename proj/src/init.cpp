#include "oocmice/init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "oocmice/rng.hpp"

namespace oocmice {

namespace {

Error all_missing(const ChunkedTable& table, std::size_t column) {
  return Error("init", ErrorCode::AllMissing, "column '" + table.schema()[column].name + "' has no observed values");
}

struct Extent {
  std::size_t count = 0;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
};

Extent observed_extent(ChunkedTable& table, std::size_t column) {
  Extent e;
  auto stream = table.scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.missing(i)) continue;
      const double x = s.as_double(i);
      ++e.count;
      e.lo = std::min(e.lo, x);
      e.hi = std::max(e.hi, x);
    }
  }
  return e;
}

double observed_mean(ChunkedTable& table, std::size_t column) {
  double sum = 0.0;
  std::size_t n = 0;
  auto stream = table.scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.missing(i)) continue;
      sum += s.as_double(i);
      ++n;
    }
  }
  if (n == 0) throw all_missing(table, column);
  return sum / static_cast<double>(n);
}

double observed_mode(ChunkedTable& table, std::size_t column) {
  const auto& desc = table.schema()[column];
  std::size_t n = 0;
  if (desc.kind == StorageKind::Category) {
    std::vector<std::size_t> counts(desc.categories.size(), 0);
    auto stream = table.scan_indices({column});
    while (auto v = stream.next()) {
      const auto& s = v->column(0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.missing(i)) continue;
        ++counts[static_cast<std::size_t>(s.as_int(i))];
        ++n;
      }
    }
    if (n == 0) throw all_missing(table, column);
    return static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  std::map<double, std::size_t> counts;
  auto stream = table.scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.missing(i)) continue;
      ++counts[s.as_double(i)];
      ++n;
    }
  }
  if (n == 0) throw all_missing(table, column);
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

double observed_median(ChunkedTable& table, std::size_t column) {
  const Extent e = observed_extent(table, column);
  if (e.count == 0) throw all_missing(table, column);
  const std::size_t lower = (e.count - 1) / 2;
  const std::size_t upper = e.count / 2;
  const double a = observed_order_statistic(table, column, lower);
  if (lower == upper) return a;
  const double b = observed_order_statistic(table, column, upper);
  return 0.5 * (a + b);
}

std::vector<std::size_t> observed_category_counts(ChunkedTable& table, std::size_t column) {
  std::vector<std::size_t> counts(table.schema()[column].categories.size(), 0);
  auto stream = table.scan_indices({column});
  while (auto v = stream.next()) {
    const auto& s = v->column(0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!s.missing(i)) ++counts[static_cast<std::size_t>(s.as_int(i))];
    }
  }
  return counts;
}

/// Applies `value_for(row)` to every masked cell of a column, chunk by chunk.
template <typename ValueFn>
void fill_masked(ChunkedTable& table, std::size_t column, ValueFn value_for) {
  const bool real = table.schema()[column].kind == StorageKind::Float64;
  std::vector<RowId> rows;
  std::vector<double> reals;
  std::vector<std::int64_t> ints;
  for (std::size_t k = 0; k < table.chunk_count(); ++k) {
    rows.clear();
    reals.clear();
    ints.clear();
    {
      auto v = table.view(k, {column});
      const auto& s = v.column(0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (!s.missing(i)) continue;
        const RowId r = v.begin() + i;
        rows.push_back(r);
        if (real) {
          reals.push_back(value_for(r));
        } else {
          ints.push_back(static_cast<std::int64_t>(std::llround(value_for(r))));
        }
      }
    }
    if (rows.empty()) continue;
    if (real) {
      table.write_values(column, rows, reals);
    } else {
      table.write_values(column, rows, ints);
    }
  }
}

}  // namespace

double observed_order_statistic(ChunkedTable& table, std::size_t column, std::size_t k,
                                std::size_t in_memory_limit) {
  constexpr std::size_t kBins = 1024;
  Extent e = observed_extent(table, column);
  if (e.count == 0) throw all_missing(table, column);
  if (k >= e.count) throw Error("init", ErrorCode::Bounds, "order statistic rank exceeds observed count");
  double lo = e.lo;
  double hi = e.hi;
  std::size_t survivors = e.count;
  std::size_t rank = k;  // rank within survivors
  in_memory_limit = std::max<std::size_t>(in_memory_limit, 1);

  while (true) {
    if (lo == hi) return lo;
    if (survivors <= in_memory_limit) {
      std::vector<double> values;
      values.reserve(survivors);
      auto stream = table.scan_indices({column});
      while (auto v = stream.next()) {
        const auto& s = v->column(0);
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (s.missing(i)) continue;
          const double x = s.as_double(i);
          if (x >= lo && x <= hi) values.push_back(x);
        }
      }
      std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank), values.end());
      return values[rank];
    }
    // Binning is monotone in x, so every bin is a contiguous value range and
    // its own [min, max] selects exactly its members on the next pass.
    const double scale = static_cast<double>(kBins) / (hi - lo);
    std::vector<std::size_t> counts(kBins, 0);
    std::vector<double> bin_lo(kBins, std::numeric_limits<double>::infinity());
    std::vector<double> bin_hi(kBins, -std::numeric_limits<double>::infinity());
    auto stream = table.scan_indices({column});
    while (auto v = stream.next()) {
      const auto& s = v->column(0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.missing(i)) continue;
        const double x = s.as_double(i);
        if (x < lo || x > hi) continue;
        auto b = static_cast<std::size_t>((x - lo) * scale);
        b = std::min(b, kBins - 1);
        ++counts[b];
        bin_lo[b] = std::min(bin_lo[b], x);
        bin_hi[b] = std::max(bin_hi[b], x);
      }
    }
    std::size_t before = 0;
    std::size_t b = 0;
    for (; b < kBins; ++b) {
      if (rank < before + counts[b]) break;
      before += counts[b];
    }
    rank -= before;
    survivors = counts[b];
    lo = bin_lo[b];
    hi = bin_hi[b];
  }
}

double column_statistic(ChunkedTable& table, std::size_t column, Statistic stat) {
  switch (stat) {
    case Statistic::Mean: return observed_mean(table, column);
    case Statistic::Median: return observed_median(table, column);
    case Statistic::Mode: return observed_mode(table, column);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

double column_statistic(ChunkedTable& table, const std::string& column, Statistic stat) {
  return column_statistic(table, table.column_index(column), stat);
}

void impute_with_memome(ChunkedTable& table, const VariablePlan& plan) {
  for (std::size_t j = 0; j < plan.specs.size(); ++j) {
    const auto& spec = plan.specs[j];
    if (!is_imputable(spec.var_type) || plan.missing_counts[j] == 0) continue;
    InitMethod method = spec.init_method;
    if (method == InitMethod::RandomSample) method = default_init_for(spec.var_type);
    if (method == InitMethod::None) continue;
    const std::size_t column = plan.columns[j];
    Statistic stat = Statistic::Mean;
    if (method == InitMethod::Median) stat = Statistic::Median;
    if (method == InitMethod::Mode) stat = Statistic::Mode;
    try {
      const double value = column_statistic(table, column, stat);
      fill_masked(table, column, [value](RowId) { return value; });
    } catch (const Error& e) {
      if (e.code() == ErrorCode::AllMissing) throw all_missing(table, column);
      throw;
    }
  }
}

void impute_with_random_samples(ChunkedTable& table, const VariablePlan& plan, std::uint64_t seed,
                                std::uint64_t imputation) {
  constexpr std::size_t kBatch = std::size_t{1} << 20;
  for (std::size_t j = 0; j < plan.specs.size(); ++j) {
    const auto& spec = plan.specs[j];
    if (!is_imputable(spec.var_type) || plan.missing_counts[j] == 0) continue;
    const std::size_t column = plan.columns[j];
    auto key_for = [&](RowId row) { return DrawKey{seed, imputation, 0, j, row}; };

    if (table.schema()[column].kind == StorageKind::Category) {
      const auto counts = observed_category_counts(table, column);
      std::vector<std::size_t> cumulative(counts.size());
      std::size_t total = 0;
      for (std::size_t c = 0; c < counts.size(); ++c) cumulative[c] = (total += counts[c]);
      if (total == 0) throw all_missing(table, column);
      fill_masked(table, column, [&](RowId row) {
        KeyedStream stream(Stream::InitialFill, key_for(row));
        const std::size_t pick = stream.below(total);
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        return static_cast<double>(it - cumulative.begin());
      });
      continue;
    }

    // Numeric: draw an index into the observed cells (row order) for every
    // masked cell, resolve the indices in one streaming pass per batch.
    const std::size_t observed = table.n_rows() - plan.missing_counts[j];
    if (observed == 0) throw all_missing(table, column);
    const bool real = table.schema()[column].kind == StorageKind::Float64;
    struct Request {
      std::uint64_t index;
      RowId row;
      double value;
    };
    std::vector<Request> batch;
    std::size_t next_chunk = 0;
    while (next_chunk < table.chunk_count()) {
      batch.clear();
      while (next_chunk < table.chunk_count() && batch.size() < kBatch) {
        auto v = table.view(next_chunk++, {column});
        const auto& s = v.column(0);
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (!s.missing(i)) continue;
          const RowId row = v.begin() + i;
          KeyedStream stream(Stream::InitialFill, key_for(row));
          batch.push_back({stream.below(observed), row, 0.0});
        }
      }
      if (batch.empty()) continue;
      std::sort(batch.begin(), batch.end(),
                [](const Request& a, const Request& b) { return a.index < b.index || (a.index == b.index && a.row < b.row); });
      std::size_t cursor = 0;
      std::uint64_t seen = 0;
      auto stream = table.scan_indices({column});
      while (cursor < batch.size()) {
        auto v = stream.next();
        if (!v) break;
        const auto& s = v->column(0);
        for (std::size_t i = 0; i < s.size() && cursor < batch.size(); ++i) {
          if (s.missing(i)) continue;
          const double x = s.as_double(i);
          while (cursor < batch.size() && batch[cursor].index == seen) batch[cursor++].value = x;
          ++seen;
        }
      }
      std::sort(batch.begin(), batch.end(), [](const Request& a, const Request& b) { return a.row < b.row; });
      std::vector<RowId> rows(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) rows[i] = batch[i].row;
      if (real) {
        std::vector<double> values(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) values[i] = batch[i].value;
        table.write_values(column, rows, values);
      } else {
        std::vector<std::int64_t> values(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) values[i] = static_cast<std::int64_t>(batch[i].value);
        table.write_values(column, rows, values);
      }
    }
  }
}

}  // namespace oocmice
