#pragma once

#include <cstdint>
#include <string>

#include "oocmice/chunkstore.hpp"
#include "oocmice/schema.hpp"

namespace oocmice {

enum class Statistic : std::uint8_t { Mean, Median, Mode };

/// Summary of the observed (unmasked) cells of one column, computed in
/// streaming passes. Mode ties go to the smallest value; an even-count
/// median is the mean of the two central order statistics.
double column_statistic(ChunkedTable& table, std::size_t column, Statistic stat);
double column_statistic(ChunkedTable& table, const std::string& column, Statistic stat);

/// k-th smallest observed value (0-based) by histogram narrowing: each pass
/// bins the surviving value range, keeps the bin holding rank k, and stops
/// once the survivors fit in `in_memory_limit` values.
double observed_order_statistic(ChunkedTable& table, std::size_t column, std::size_t k,
                                std::size_t in_memory_limit = std::size_t{1} << 16);

/// Fills every masked cell of each imputable variable with its
/// initialization statistic (mean, median or mode).
void impute_with_memome(ChunkedTable& table, const VariablePlan& plan);

/// Fills every masked cell of each imputable variable with a uniform draw,
/// with replacement, from that column's observed cells. The draw for a cell
/// is keyed by (seed, imputation, variable, row).
void impute_with_random_samples(ChunkedTable& table, const VariablePlan& plan, std::uint64_t seed,
                                std::uint64_t imputation = 0);

}  // namespace oocmice
