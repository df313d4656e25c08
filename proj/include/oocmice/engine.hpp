#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "oocmice/chunkstore.hpp"
#include "oocmice/models.hpp"
#include "oocmice/pool.hpp"
#include "oocmice/schema.hpp"

namespace oocmice {

struct RunConfig {
  std::size_t m = 5;
  std::size_t maxit = 5;
  /// Absent: drawn from std::random_device and reported in the result.
  std::optional<std::uint64_t> seed;
  bool checkpointing = true;
  /// Variable updates between checkpoints of the working table.
  std::size_t checkpoint_frequency = 10;
  /// Keep each imputed table (checkpointed under dir/imputation_<i>).
  std::optional<std::filesystem::path> emit_imputations;
  bool print_progress = false;
  /// Imputations run concurrently on this many threads; the cache budget is
  /// split between them.
  std::size_t threads = 1;
  InitStrategy init = InitStrategy::RandomSample;
  ForestParams forest;
  /// Called with each completed table before its analysis fit. Calls are
  /// serialized.
  std::function<void(std::size_t imputation, ChunkedTable& table)> on_imputed;
  /// Progress and warning sink; stderr when empty.
  std::function<void(const std::string&)> log;

  void validate() const;
};

struct MiceResult {
  PooledResult pooled;
  std::vector<ParamEstimate> per_imputation;
  RunStats stats;
  std::vector<CheckpointToken> imputation_tokens;
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;
};

/// Mutable state of one imputation's chain.
struct ChainState {
  std::uint64_t seed = 0;
  std::size_t imputation = 1;
  std::size_t updates = 0;  ///< variable updates since the chain started
  std::vector<std::string> warnings;
};

/// Fits variable j's model on its observed rows and overwrites its masked
/// rows with fresh draws. Returns false when the variable was skipped.
bool impute_variable(ChunkedTable& table, const VariablePlan& plan, std::size_t j, ChainState& chain,
                     std::size_t iteration, const ForestParams& forest = {});

/// One sweep over plan.impute_order, checkpointing on the configured cadence.
void run_iteration(ChunkedTable& table, const VariablePlan& plan, const RunConfig& config, ChainState& chain,
                   std::size_t iteration);

/// Logistic analysis model fitted on the completed table.
ParamEstimate fit_analysis(ChunkedTable& table, const VariablePlan& plan);

struct ImputationOutcome {
  ParamEstimate estimate;
  double seconds = 0.0;
  std::optional<CheckpointToken> token;
  std::vector<std::string> warnings;
};

/// Initializes `work` (a private copy of the data), runs maxit sweeps and
/// fits the analysis model. Checkpoints `work` when imputations are emitted.
ImputationOutcome run_single_imputation(ChunkedTable& work, const VariablePlan& plan, const RunConfig& config,
                                        std::uint64_t seed, std::size_t imputation);

MiceResult mice_run(ChunkedTable& source, const VariablePlan& plan, const RunConfig& config);

}  // namespace oocmice
