#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oocmice/chunkstore.hpp"

namespace oocmice {

/// One imputation's analysis-model estimate.
struct ParamEstimate {
  std::vector<std::string> names;  ///< intercept first
  Eigen::VectorXd q_hat;
  Eigen::MatrixXd u;
};

/// df reported when there is no between-imputation variance.
inline constexpr double kDfCap = 999999.0;

struct Diagnostics {
  double r = 0.0;
  double lambda = 0.0;
  double df = kDfCap;
};

struct PooledResult {
  std::vector<std::string> names;
  std::size_t m = 0;
  Eigen::VectorXd q_bar;
  Eigen::MatrixXd u_bar;
  Eigen::MatrixXd b;
  Eigen::MatrixXd t;
  Eigen::VectorXd se;
  Eigen::VectorXd t_stat;
  Eigen::VectorXd r;
  Eigen::VectorXd lambda;
  Eigen::VectorXd df;
  /// False for m = 1: B and the diagnostics are NaN.
  bool between_defined = true;
  std::vector<std::string> warnings;
};

/// r, lambda and df for one parameter from diag(U_bar), diag(B) and m.
Diagnostics pooled_diagnostics(double u_bar, double b, std::size_t m);

PooledResult pool_rubin(const std::vector<ParamEstimate>& estimates);

struct RunStats {
  std::vector<double> imputation_seconds;
  double total_seconds = 0.0;
  MemoryStats memory;
  std::size_t threads = 1;
};

/// Plain-text report: header, estimate table, diagnostics, notes.
std::string format_report(const PooledResult& result, const RunStats& stats);

/// Per-imputation estimates as a table, one block per imputation.
std::string format_individual(const std::vector<ParamEstimate>& estimates);

/// Every PooledResult field (full matrices included) as a JSON document.
std::string to_json(const PooledResult& result, const RunStats& stats, int indent = 2);

}  // namespace oocmice
