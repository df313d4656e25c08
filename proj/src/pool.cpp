#include "oocmice/pool.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <json.hpp>

#include "oocmice/error.hpp"

namespace oocmice {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

/// Left-aligned name column, right-aligned value columns, one space apart.
std::string table(const std::vector<std::string>& row_names, const std::vector<std::string>& headers,
                  const std::vector<std::vector<std::string>>& cells) {
  std::size_t name_w = 0;
  for (const auto& n : row_names) name_w = std::max(name_w, n.size());
  std::vector<std::size_t> w(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) {
    w[c] = headers[c].size();
    for (const auto& row : cells) w[c] = std::max(w[c], row[c].size());
  }
  auto pad_left = [](const std::string& s, std::size_t width) { return std::string(width - s.size(), ' ') + s; };
  std::string out = std::string(name_w, ' ');
  for (std::size_t c = 0; c < headers.size(); ++c) out += " " + pad_left(headers[c], w[c]);
  out += "\n";
  for (std::size_t r = 0; r < row_names.size(); ++r) {
    out += row_names[r] + std::string(name_w - row_names[r].size(), ' ');
    for (std::size_t c = 0; c < headers.size(); ++c) out += " " + pad_left(cells[r][c], w[c]);
    out += "\n";
  }
  return out;
}

}  // namespace

Diagnostics pooled_diagnostics(double u_bar, double b, std::size_t m) {
  Diagnostics d;
  if (m < 2 || std::isnan(b)) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    return {nan, nan, nan};
  }
  const double inflation = 1.0 + 1.0 / static_cast<double>(m);
  const double dm1 = static_cast<double>(m - 1);
  if (b <= 0.0) return d;
  if (u_bar <= 0.0) {
    d.r = std::numeric_limits<double>::infinity();
    d.lambda = 1.0;
    d.df = dm1;
    return d;
  }
  d.r = inflation * b / u_bar;
  d.lambda = d.r / (1.0 + d.r);
  d.df = dm1 / (d.lambda * d.lambda);
  return d;
}

PooledResult pool_rubin(const std::vector<ParamEstimate>& estimates) {
  if (estimates.empty()) throw Error("pool", ErrorCode::Contract, "no estimates to pool");
  const auto& first = estimates.front();
  const auto d = first.q_hat.size();
  for (const auto& e : estimates) {
    if (e.names != first.names || e.q_hat.size() != d || e.u.rows() != d || e.u.cols() != d) {
      throw Error("pool", ErrorCode::Contract, "estimates do not share parameter names and dimension");
    }
  }
  const std::size_t m = estimates.size();
  const double md = static_cast<double>(m);

  PooledResult res;
  res.names = first.names;
  res.m = m;
  // Means are taken around the first estimate, so identical estimates pool
  // to exactly that estimate and B comes out exactly zero.
  Eigen::VectorXd q_shift = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd u_shift = Eigen::MatrixXd::Zero(d, d);
  for (const auto& e : estimates) {
    q_shift += e.q_hat - first.q_hat;
    u_shift += e.u - first.u;
  }
  res.q_bar = first.q_hat + q_shift / md;
  res.u_bar = first.u + u_shift / md;

  if (m == 1) {
    res.between_defined = false;
    res.b = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
    res.t = res.u_bar;
    res.warnings.push_back("only one imputation: between-imputation variance is undefined");
  } else {
    res.b = Eigen::MatrixXd::Zero(d, d);
    for (const auto& e : estimates) {
      const Eigen::VectorXd dev = e.q_hat - res.q_bar;
      res.b.noalias() += dev * dev.transpose();
    }
    res.b /= md - 1.0;
    res.t = res.u_bar + (1.0 + 1.0 / md) * res.b;
  }

  res.se.resize(d);
  res.t_stat.resize(d);
  res.r.resize(d);
  res.lambda.resize(d);
  res.df.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    res.se(k) = std::sqrt(res.t(k, k));
    res.t_stat(k) = res.q_bar(k) / res.se(k);
    const auto diag = pooled_diagnostics(res.u_bar(k, k), res.b(k, k), m);
    res.r(k) = diag.r;
    res.lambda(k) = diag.lambda;
    res.df(k) = diag.df;
  }
  return res;
}

std::string format_report(const PooledResult& result, const RunStats& stats) {
  std::string out;
  out += "Multiple Imputation Results\n";
  out += "==========================\n\n";
  const double avg = stats.imputation_seconds.empty()
                         ? 0.0
                         : stats.total_seconds / static_cast<double>(stats.imputation_seconds.size());
  out += "Number of imputations: " + std::to_string(result.m) + "\n";
  out += "Total imputation time: " + fixed(stats.total_seconds, 2) + " seconds\n";
  out += "Average time per imputation: " + fixed(avg, 2) + " seconds\n\n";
  out += "Pooled Parameter Estimates (Rubin's Rules)\n";
  out += "==========================================\n";

  std::vector<std::vector<std::string>> cells;
  for (std::size_t k = 0; k < result.names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    cells.push_back({fixed(result.q_bar(i), 4), fixed(result.u_bar(i, i), 4), fixed(result.b(i, i), 4),
                     fixed(result.t(i, i), 4), fixed(result.se(i), 4), fixed(result.t_stat(i), 4)});
  }
  out += table(result.names, {"Estimate", "Within_Var", "Between_Var", "Total_Var", "SE", "t_stat"}, cells);

  out += "\nDiagnostic Information:\n";
  out += "-----------------------\n";
  for (std::size_t k = 0; k < result.names.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    char line[512];
    std::snprintf(line, sizeof line, "%-15s: r=%.3f, lambda=%.3f, df=%.1f\n", result.names[k].c_str(), result.r(i),
                  result.lambda(i), result.df(i));
    out += line;
  }
  for (const auto& w : result.warnings) out += "Warning: " + w + "\n";

  out += "\nNotes:\n";
  out += "------\n";
  out += "- SE: Standard Error (sqrt of Total_Var)\n";
  out += "- t_stat: t-statistic for testing parameter = 0\n";
  out += "- r: Relative increase in variance due to nonresponse\n";
  out += "- lambda: Fraction of missing information\n";
  out += "- df: Degrees of freedom for t-distribution\n";
  out += "- Use --show-individual to see results from each imputation\n";
  return out;
}

std::string format_individual(const std::vector<ParamEstimate>& estimates) {
  std::string out;
  for (std::size_t l = 0; l < estimates.size(); ++l) {
    const auto& e = estimates[l];
    out += "Imputation " + std::to_string(l + 1) + "\n";
    std::vector<std::vector<std::string>> cells;
    for (Eigen::Index k = 0; k < e.q_hat.size(); ++k) {
      cells.push_back({fixed(e.q_hat(k), 4), fixed(e.u(k, k), 4), fixed(std::sqrt(e.u(k, k)), 4)});
    }
    out += table(e.names, {"Estimate", "Variance", "SE"}, cells);
    out += "\n";
  }
  return out;
}

std::string to_json(const PooledResult& result, const RunStats& stats, int indent) {
  nlohmann::json j;
  j["m"] = result.m;
  j["names"] = result.names;
  j["q_bar"] = vector_json(result.q_bar);
  j["u_bar"] = matrix_json(result.u_bar);
  j["b"] = matrix_json(result.b);
  j["t"] = matrix_json(result.t);
  j["se"] = vector_json(result.se);
  j["t_stat"] = vector_json(result.t_stat);
  j["r"] = vector_json(result.r);
  j["lambda"] = vector_json(result.lambda);
  j["df"] = vector_json(result.df);
  j["between_defined"] = result.between_defined;
  j["warnings"] = result.warnings;
  j["imputation_seconds"] = stats.imputation_seconds;
  j["total_seconds"] = stats.total_seconds;
  j["peak_resident_bytes"] = stats.memory.peak_resident_bytes;
  j["spill_events"] = stats.memory.spill_events;
  j["checkpoint_events"] = stats.memory.checkpoint_events;
  j["bytes_spilled"] = stats.memory.bytes_spilled;
  j["threads"] = stats.threads;
  return j.dump(indent);
}

}  // namespace oocmice
