#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "oocmice/chunkstore.hpp"
#include "oocmice/engine.hpp"
#include "oocmice/schema.hpp"

namespace oocmice {

/// Cells removed by an amputation, with the values they held.
struct GroundTruth {
  std::string column;
  std::vector<RowId> rows;  ///< ascending
  std::vector<double> values;
};

/// Masks exactly round(proportion * observed) of the column's observed
/// cells, chosen uniformly by selection sampling over keyed uniforms.
GroundTruth ampute_mcar(ChunkedTable& table, const std::string& column, double proportion, std::uint64_t seed);

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& truth);
GroundTruth read_ground_truth(const std::filesystem::path& path);

/// Root mean squared difference between the table's current values at the
/// ground-truth rows and the true values.
double rmse(ChunkedTable& table, const GroundTruth& truth);
double rmse(const std::vector<double>& imputed, const std::vector<double>& truth);

/// Gaussian block x1..xk with equicorrelation `correlation`, plus optional
/// derived columns:
///   y  = linear_coef[0] + sum linear_coef[j] x_j + noise_sd * e   (Continuous_float)
///   b  ~ Bernoulli(logistic(logistic_coef[0] + sum logistic_coef[j] x_j))  (Binary, no/yes)
///   g  = tercile bucket of x1 + N(0,1) at -0.5 / 0.5  (Nominal, a/b/c)
/// Each row is drawn from its own keyed stream, so any row range can be
/// regenerated independently.
struct SyntheticSpec {
  std::size_t rows = 1000;
  std::size_t gaussian = 3;
  double correlation = 0.3;
  std::vector<double> linear_coef;
  double noise_sd = 1.0;
  std::vector<double> logistic_coef;
  bool nominal = false;
  std::uint64_t seed = 1;
};

struct SyntheticData {
  std::unique_ptr<ChunkedTable> table;
  Declarations declarations;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec, TableOptions options);

/// `size` rows drawn without replacement, kept in source order.
std::unique_ptr<ChunkedTable> subsample_rows(ChunkedTable& source, std::size_t size, std::uint64_t seed,
                                             std::size_t replicate, TableOptions options);

enum class Scenario : std::uint8_t { SampleSize, VariableCount, Missingness };

const char* to_string(Scenario scenario) noexcept;
Scenario scenario_from_string(const std::string& text);

struct BenchRecord {
  Scenario scenario = Scenario::SampleSize;
  double x = 0.0;
  double runtime_seconds = 0.0;
  std::size_t peak_memory_bytes = 0;
  std::optional<double> rmse;
  std::size_t replicate = 0;
  /// RMSE of each imputation; rmse is their mean.
  std::vector<double> imputation_rmse;
};

struct BenchConfig {
  Scenario scenario = Scenario::SampleSize;
  /// Sample sizes, variable counts or proportions.
  std::vector<double> grid;
  /// Variable-count runs: replicate 0 adds variables by ascending
  /// missingness, 1 by descending, later ones in a keyed permutation.
  std::size_t replicates = 5;
  /// Variable amputated before each run: required for missingness, optional
  /// for sample_size (RMSE is recorded when set).
  std::string target;
  /// Amputation proportion for sample_size runs with a target.
  double proportion = 0.5;
  std::uint64_t seed = 1;
  RunConfig run;
  PlanOptions plan;
  /// Chunk size, budget and scratch directory for derived tables.
  TableOptions table;
  std::function<void(const std::string&)> log;
};

/// Runs every grid point `replicates` times, one run at a time. Grid points
/// the data cannot support are skipped with a log line.
std::vector<BenchRecord> run_benchmark(ChunkedTable& data, const Declarations& declarations,
                                       const Formula& analysis, const BenchConfig& config);

/// Header: scenario,x,runtime_seconds,peak_memory_bytes,rmse,replicate
std::string bench_csv(const std::vector<BenchRecord>& records);

struct BenchSummary {
  Scenario scenario = Scenario::SampleSize;
  double x = 0.0;
  std::size_t runs = 0;
  double runtime_mean = 0.0;
  double runtime_sd = 0.0;
  double memory_mean = 0.0;
  double memory_sd = 0.0;
  /// Over all per-imputation RMSE values at this grid point.
  std::size_t rmse_count = 0;
  double rmse_mean = 0.0;
  double rmse_sd = 0.0;
};

/// One row per grid point, in grid order. sd uses n-1 (0 for one value).
std::vector<BenchSummary> summarize(const std::vector<BenchRecord>& records);
std::string format_summary(const std::vector<BenchSummary>& rows);

}  // namespace oocmice
