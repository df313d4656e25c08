#include "oocmice/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace oocmice {

namespace {

/// Sufficient statistics are reduced over fixed blocks of filtered rows, so
/// every fit sees the same summation order whatever the chunk size.
constexpr std::size_t kBlockRows = 4096;

Error model_error(ErrorCode code, const std::string& what) { return Error("models", code, what); }

bool keep_row(const ColumnSlice& target, std::size_t i, RowFilter filter) {
  switch (filter) {
    case RowFilter::Observed: return !target.missing(i);
    case RowFilter::Missing: return target.missing(i);
    case RowFilter::All: return true;
  }
  return false;
}

/// Streams (X, y, rows) blocks of the filtered rows.
template <typename Fn>
void for_each_block(ChunkedTable& table, const DesignSpec& design, RowFilter filter, Fn&& fn) {
  const std::size_t d = design.feature_count;
  Eigen::MatrixXd X(kBlockRows, d);
  Eigen::VectorXd y(kBlockRows);
  std::vector<RowId> rows;
  rows.reserve(kBlockRows);
  std::vector<double> buf(d);
  std::size_t filled = 0;
  auto flush = [&] {
    if (filled == 0) return;
    fn(X.topRows(filled), y.head(filled), std::span<const RowId>(rows));
    filled = 0;
    rows.clear();
  };
  auto stream = table.scan_indices(design.scan_columns());
  while (auto v = stream.next()) {
    const auto& target = v->column(0);
    for (std::size_t i = 0; i < v->rows(); ++i) {
      if (!keep_row(target, i, filter)) continue;
      encode_row(*v, design, i, buf);
      for (std::size_t c = 0; c < d; ++c) X(static_cast<Eigen::Index>(filled), static_cast<Eigen::Index>(c)) = buf[c];
      y(static_cast<Eigen::Index>(filled)) = target.as_double(i);
      rows.push_back(v->begin() + i);
      if (++filled == kBlockRows) flush();
    }
  }
  flush();
}

Eigen::MatrixXd symmetric_from_lower(const Eigen::MatrixXd& lower) {
  Eigen::MatrixXd full = lower.selfadjointView<Eigen::Lower>();
  return full;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool all_finite(const Eigen::MatrixXd& m) { return m.allFinite(); }

std::size_t target_levels(const ChunkedTable& table, const DesignSpec& design) {
  const auto& desc = table.schema()[design.target];
  if (desc.kind != StorageKind::Category) {
    throw model_error(ErrorCode::Contract, "column '" + desc.name + "' is not categorical");
  }
  return desc.categories.size();
}

}  // namespace

double ridge_lambda(double gram_trace, std::size_t d) noexcept {
  return 1e-8 * gram_trace / static_cast<double>(std::max<std::size_t>(d, 1));
}

// ---------------------------------------------------------------- design

DesignSpec DesignSpec::make(const ChunkedTable& table, std::size_t target, const std::vector<std::size_t>& predictors) {
  DesignSpec d;
  d.target = target;
  d.predictors = predictors;
  d.feature_names.push_back("(Intercept)");
  std::size_t offset = 1;
  for (auto col : predictors) {
    if (col == target) throw model_error(ErrorCode::Contract, "target listed among its own predictors");
    const auto& desc = table.schema().at(col);
    FeatureBlock b;
    b.column = col;
    b.offset = offset;
    if (desc.kind == StorageKind::Category) {
      b.categorical = true;
      b.levels = desc.categories.size();
      for (std::size_t k = 1; k < b.levels; ++k) d.feature_names.push_back(desc.name + "[" + desc.categories[k] + "]");
      offset += b.levels > 0 ? b.levels - 1 : 0;
    } else {
      d.feature_names.push_back(desc.name);
      offset += 1;
    }
    d.blocks.push_back(b);
  }
  d.feature_count = offset;
  return d;
}

std::vector<std::size_t> DesignSpec::scan_columns() const {
  std::vector<std::size_t> cols;
  cols.reserve(predictors.size() + 1);
  cols.push_back(target);
  cols.insert(cols.end(), predictors.begin(), predictors.end());
  return cols;
}

void encode_row(const ChunkView& view, const DesignSpec& design, std::size_t i, std::span<double> out) {
  out[0] = 1.0;
  for (std::size_t b = 0; b < design.blocks.size(); ++b) {
    const auto& block = design.blocks[b];
    const auto& slice = view.column(b + 1);
    if (!block.categorical) {
      out[block.offset] = slice.as_double(i);
      continue;
    }
    const std::size_t width = block.levels > 0 ? block.levels - 1 : 0;
    std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(block.offset), width, 0.0);
    const std::int64_t code = slice.as_int(i);
    if (code < 0 || static_cast<std::size_t>(code) >= block.levels) {
      throw model_error(ErrorCode::Contract, "category code outside the dictionary at row " +
                                                 std::to_string(view.begin() + i));
    }
    if (code > 0) out[block.offset + static_cast<std::size_t>(code) - 1] = 1.0;
  }
}

Eigen::MatrixXd encode_features(const ChunkView& view, const DesignSpec& design) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(view.rows()), static_cast<Eigen::Index>(design.feature_count));
  std::vector<double> buf(design.feature_count);
  for (std::size_t i = 0; i < view.rows(); ++i) {
    encode_row(view, design, i, buf);
    for (std::size_t c = 0; c < buf.size(); ++c) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = buf[c];
  }
  return X;
}

// ---------------------------------------------------------------- linear

LinearModel fit_linear(ChunkedTable& table, const DesignSpec& design, RowFilter filter) {
  const auto d = static_cast<Eigen::Index>(design.feature_count);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(d);
  std::size_t n = 0;
  for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId>) {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    xty.noalias() += X.transpose() * y;
    n += static_cast<std::size_t>(X.rows());
  });
  if (n == 0) throw model_error(ErrorCode::Model, "no observed rows to fit '" + table.schema()[design.target].name + "'");
  gram = symmetric_from_lower(gram);
  if (!all_finite(gram) || !xty.allFinite()) throw model_error(ErrorCode::Numeric, "non-finite sufficient statistics");
  const double lambda = ridge_lambda(gram.trace(), design.feature_count);
  gram.diagonal().tail(d - 1).array() += lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw model_error(ErrorCode::Numeric, "normal equations are not positive definite");

  LinearModel m;
  m.beta = llt.solve(xty);
  m.xtx_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  m.xtx_inv = 0.5 * (m.xtx_inv + m.xtx_inv.transpose()).eval();
  m.n_obs = n;
  if (!m.beta.allFinite()) throw model_error(ErrorCode::Numeric, "non-finite regression coefficients");

  double ss = 0.0;
  for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId>) {
    ss += (y - X * m.beta).squaredNorm();
  });
  m.sigma_hat = std::sqrt(ss / static_cast<double>(n));
  return m;
}

// ---------------------------------------------------------------- logistic

LikelihoodState logistic_state(ChunkedTable& table, const DesignSpec& design, RowFilter filter,
                               const Eigen::VectorXd& beta, double lambda) {
  const auto d = static_cast<Eigen::Index>(design.feature_count);
  LikelihoodState st;
  st.gradient = Eigen::VectorXd::Zero(d);
  st.hessian = Eigen::MatrixXd::Zero(d, d);
  double nll = 0.0;
  for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId>) {
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd p(eta.size());
    Eigen::VectorXd sqrt_w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      p(i) = sigmoid(eta(i));
      sqrt_w(i) = std::sqrt(p(i) * (1.0 - p(i)));
      nll += softplus(eta(i)) - y(i) * eta(i);
    }
    const Eigen::MatrixXd Xw = sqrt_w.asDiagonal() * X;
    st.hessian.selfadjointView<Eigen::Lower>().rankUpdate(Xw.transpose());
    st.gradient.noalias() -= X.transpose() * (y - p);
    st.gram_trace += X.squaredNorm();
    st.positives += y.sum();
    st.n += static_cast<std::size_t>(X.rows());
  });
  st.hessian = symmetric_from_lower(st.hessian);
  st.hessian.diagonal().tail(d - 1).array() += lambda;
  st.gradient.tail(d - 1) += lambda * beta.tail(d - 1);
  st.objective = nll + 0.5 * lambda * beta.tail(d - 1).squaredNorm();
  return st;
}

LogisticModel fit_logistic(ChunkedTable& table, const DesignSpec& design, RowFilter filter) {
  constexpr int kMaxIterations = 25;
  constexpr double kTolerance = 1e-8;
  const auto d = static_cast<Eigen::Index>(design.feature_count);
  const std::string& name = table.schema()[design.target].name;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(d);
  LikelihoodState st = logistic_state(table, design, filter, beta, 0.0);
  if (st.n == 0) throw model_error(ErrorCode::Model, "no observed rows to fit '" + name + "'");
  if (st.positives == 0.0 || st.positives == static_cast<double>(st.n)) {
    throw model_error(ErrorCode::Separation, "target '" + name + "' has a single observed class");
  }
  const double lambda = ridge_lambda(st.gram_trace, design.feature_count);
  st.hessian.diagonal().tail(d - 1).array() += lambda;

  LogisticModel m;
  m.n_obs = st.n;
  for (int it = 1; it <= kMaxIterations; ++it) {
    m.iterations = it;
    Eigen::LLT<Eigen::MatrixXd> llt(st.hessian);
    if (llt.info() != Eigen::Success) throw model_error(ErrorCode::Numeric, "logistic Hessian is not positive definite");
    Eigen::VectorXd step = llt.solve(-st.gradient);
    Eigen::VectorXd trial = beta + step;
    LikelihoodState next = logistic_state(table, design, filter, trial, lambda);
    for (int halving = 0; halving < 30 && !(next.objective <= st.objective); ++halving) {
      step *= 0.5;
      trial = beta + step;
      next = logistic_state(table, design, filter, trial, lambda);
    }
    if (!std::isfinite(next.objective)) throw model_error(ErrorCode::Numeric, "logistic deviance is not finite");
    const double change = std::fabs(st.objective - next.objective) / (std::fabs(next.objective) + 0.1);
    beta = trial;
    st = std::move(next);
    if (change < kTolerance) {
      m.converged = true;
      break;
    }
  }
  m.beta = beta;
  Eigen::LLT<Eigen::MatrixXd> llt(st.hessian);
  m.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
  m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
  return m;
}

// ---------------------------------------------------------------- multinomial

LikelihoodState multinomial_state(ChunkedTable& table, const DesignSpec& design, RowFilter filter,
                                  std::size_t classes, const Eigen::VectorXd& params, double lambda,
                                  bool with_hessian) {
  const auto d = static_cast<Eigen::Index>(design.feature_count);
  const auto km1 = static_cast<Eigen::Index>(classes - 1);
  const Eigen::Index dim = km1 * d;
  // Row-major (K-1) x d view of the flat parameter vector.
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> B(params.data(), km1, d);
  LikelihoodState st;
  st.gradient = Eigen::VectorXd::Zero(dim);
  if (with_hessian) st.hessian = Eigen::MatrixXd::Zero(dim, dim);
  double nll = 0.0;
  for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId>) {
    const Eigen::Index rows = X.rows();
    const Eigen::MatrixXd eta = X * B.transpose();  // rows x (K-1)
    Eigen::MatrixXd P(rows, km1);
    Eigen::MatrixXd residual(rows, km1);
    for (Eigen::Index i = 0; i < rows; ++i) {
      double top = 0.0;
      for (Eigen::Index k = 0; k < km1; ++k) top = std::max(top, eta(i, k));
      double denom = std::exp(-top);
      for (Eigen::Index k = 0; k < km1; ++k) denom += std::exp(eta(i, k) - top);
      const auto label = static_cast<Eigen::Index>(y(i));
      nll += top + std::log(denom) - (label > 0 ? eta(i, label - 1) : 0.0);
      for (Eigen::Index k = 0; k < km1; ++k) {
        P(i, k) = std::exp(eta(i, k) - top) / denom;
        residual(i, k) = (label == k + 1 ? 1.0 : 0.0) - P(i, k);
      }
    }
    const Eigen::MatrixXd g = X.transpose() * residual;  // d x (K-1)
    for (Eigen::Index k = 0; k < km1; ++k) st.gradient.segment(k * d, d) -= g.col(k);
    if (with_hessian) {
      for (Eigen::Index k = 0; k < km1; ++k) {
        for (Eigen::Index l = 0; l <= k; ++l) {
          Eigen::VectorXd w(rows);
          for (Eigen::Index i = 0; i < rows; ++i) w(i) = P(i, k) * ((k == l ? 1.0 : 0.0) - P(i, l));
          st.hessian.block(k * d, l * d, d, d).noalias() += X.transpose() * (w.asDiagonal() * X);
        }
      }
    }
    st.gram_trace += X.squaredNorm();
    st.n += static_cast<std::size_t>(rows);
  });
  if (with_hessian) {
    for (Eigen::Index k = 0; k < km1; ++k) {
      for (Eigen::Index l = 0; l < k; ++l) st.hessian.block(l * d, k * d, d, d) = st.hessian.block(k * d, l * d, d, d).transpose();
    }
  }
  double penalty = 0.0;
  for (Eigen::Index k = 0; k < km1; ++k) {
    const auto slopes = params.segment(k * d + 1, d - 1);
    st.gradient.segment(k * d + 1, d - 1) += lambda * slopes;
    penalty += slopes.squaredNorm();
    if (with_hessian) st.hessian.diagonal().segment(k * d + 1, d - 1).array() += lambda;
  }
  st.objective = nll + 0.5 * lambda * penalty;
  return st;
}

MultinomialModel fit_multinomial(ChunkedTable& table, const DesignSpec& design, RowFilter filter) {
  constexpr int kMaxIterations = 100;
  constexpr double kGradientTolerance = 1e-6;
  const std::size_t classes = target_levels(table, design);
  const std::string& name = table.schema()[design.target].name;
  if (classes < 3) {
    throw Error("models", ErrorCode::Plan, "target '" + name + "' has fewer than 3 classes; use logistic");
  }
  const auto d = static_cast<Eigen::Index>(design.feature_count);
  const Eigen::Index dim = static_cast<Eigen::Index>(classes - 1) * d;

  Eigen::VectorXd params = Eigen::VectorXd::Zero(dim);
  LikelihoodState st = multinomial_state(table, design, filter, classes, params, 0.0);
  if (st.n == 0) throw model_error(ErrorCode::Model, "no observed rows to fit '" + name + "'");
  const double lambda = ridge_lambda(st.gram_trace, design.feature_count);
  for (Eigen::Index k = 0; k + 1 < static_cast<Eigen::Index>(classes); ++k) {
    st.hessian.diagonal().segment(k * d + 1, d - 1).array() += lambda;
  }
  const double scale = 1.0 / static_cast<double>(st.n);

  MultinomialModel m;
  m.classes = classes;
  m.n_obs = st.n;
  for (int it = 1; it <= kMaxIterations; ++it) {
    if (st.gradient.lpNorm<Eigen::Infinity>() * scale < kGradientTolerance) {
      m.converged = true;
      break;
    }
    m.iterations = it;
    Eigen::VectorXd direction;
    Eigen::LLT<Eigen::MatrixXd> llt(st.hessian);
    if (llt.info() == Eigen::Success) direction = llt.solve(-st.gradient);
    if (direction.size() == 0 || !direction.allFinite() || direction.dot(st.gradient) >= 0.0) {
      direction = -st.gradient * scale;
    }
    const double slope = direction.dot(st.gradient);
    bool accepted = false;
    double t = 1.0;
    for (int trial = 0; trial < 40; ++trial, t *= 0.5) {
      const Eigen::VectorXd candidate = params + t * direction;
      LikelihoodState next = multinomial_state(table, design, filter, classes, candidate, lambda);
      if (std::isfinite(next.objective) && next.objective <= st.objective + 1e-4 * t * slope) {
        params = candidate;
        st = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (!m.converged && st.gradient.lpNorm<Eigen::Infinity>() * scale < kGradientTolerance) m.converged = true;
  m.beta = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      params.data(), static_cast<Eigen::Index>(classes - 1), d);
  return m;
}

// ---------------------------------------------------------------- forest

int ForestModel::bin_of(std::size_t feature, double x) const noexcept {
  const double s = bin_scale[feature];
  if (s == 0.0) return 0;
  const double b = (x - bin_lo[feature]) * s;
  if (!(b > 0.0)) return 0;
  if (b >= static_cast<double>(bins - 1)) return bins - 1;
  return static_cast<int>(b);
}

namespace {

struct NodeWork {
  std::size_t tree = 0;
  int node = 0;
  std::vector<int> features;
  std::vector<double> totals;
  std::vector<double> hist;  // features x bins x stats
};

std::vector<double> leaf_payload(ForestMode mode, const std::vector<double>& stats) {
  if (mode == ForestMode::Regressor) return {stats[0] > 0 ? stats[1] / stats[0] : 0.0};
  double w = 0.0;
  for (double c : stats) w += c;
  std::vector<double> out(stats.size(), w > 0 ? 0.0 : 1.0 / static_cast<double>(stats.size()));
  if (w > 0) {
    for (std::size_t k = 0; k < stats.size(); ++k) out[k] = stats[k] / w;
  }
  return out;
}

double impurity(ForestMode mode, const double* stats, std::size_t s) {
  if (mode == ForestMode::Regressor) {
    return stats[0] > 0 ? stats[2] - stats[1] * stats[1] / stats[0] : 0.0;
  }
  double w = 0.0;
  double sq = 0.0;
  for (std::size_t k = 0; k < s; ++k) {
    w += stats[k];
    sq += stats[k] * stats[k];
  }
  return w > 0 ? w - sq / w : 0.0;
}

double weight_of(ForestMode mode, const double* stats, std::size_t s) {
  if (mode == ForestMode::Regressor) return stats[0];
  double w = 0.0;
  for (std::size_t k = 0; k < s; ++k) w += stats[k];
  return w;
}

int route(const Tree& tree, const std::vector<int>& row_bins) {
  int node = 0;
  while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    node = row_bins[static_cast<std::size_t>(n.feature)] <= n.split_bin ? n.left : n.right;
  }
  return node;
}

}  // namespace

ForestModel fit_forest(ChunkedTable& table, const DesignSpec& design, ForestMode mode, const DrawKey& key,
                       const ForestParams& params, RowFilter filter) {
  const std::size_t d = design.feature_count;
  const std::string& name = table.schema()[design.target].name;
  ForestModel m;
  m.mode = mode;
  m.feature_count = d;
  m.bins = std::max(2, params.bins);
  m.classes = mode == ForestMode::Classifier ? target_levels(table, design) : 0;
  const std::size_t stats = mode == ForestMode::Regressor ? 3 : m.classes;
  const auto bins = static_cast<std::size_t>(m.bins);

  // Pass 0: feature ranges.
  std::vector<double> lo(d, std::numeric_limits<double>::infinity());
  std::vector<double> hi(d, -std::numeric_limits<double>::infinity());
  std::size_t n = 0;
  for_each_block(table, design, filter, [&](const auto& X, const auto&, std::span<const RowId>) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      for (std::size_t f = 0; f < d; ++f) {
        const double x = X(i, static_cast<Eigen::Index>(f));
        lo[f] = std::min(lo[f], x);
        hi[f] = std::max(hi[f], x);
      }
    }
    n += static_cast<std::size_t>(X.rows());
  });
  if (n < 2) throw model_error(ErrorCode::Model, "forest for '" + name + "' needs at least 2 observed rows");
  m.n_obs = n;
  m.bin_lo = lo;
  m.bin_scale.assign(d, 0.0);
  std::vector<int> splittable;
  for (std::size_t f = 1; f < d; ++f) {
    if (hi[f] > lo[f] && std::isfinite(hi[f] - lo[f])) {
      m.bin_scale[f] = static_cast<double>(bins) / (hi[f] - lo[f]);
    }
  }
  const std::size_t candidates_total = d - 1;
  std::size_t mtry = 0;
  if (candidates_total > 0) {
    mtry = mode == ForestMode::Classifier
               ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(candidates_total))))
               : std::max<std::size_t>(1, candidates_total / 3);
  }

  const auto tree_count = static_cast<std::size_t>(std::max(1, params.trees));
  m.trees.assign(tree_count, Tree{});
  std::vector<std::uint64_t> attempt(tree_count, 0);
  for (auto& t : m.trees) t.nodes.push_back(TreeNode{});

  auto pick_features = [&](std::size_t tree, int node) {
    std::vector<int> pool(candidates_total);
    std::iota(pool.begin(), pool.end(), 1);
    KeyedStream stream(Stream::FeatureSubset, DrawKey{key.seed, key.imputation, key.iteration, key.variable,
                                                      static_cast<std::uint64_t>(node)},
                       tree);
    for (std::size_t i = 0; i < mtry; ++i) {
      const std::size_t j = i + stream.below(pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(mtry);
    std::sort(pool.begin(), pool.end());
    return pool;
  };

  // Active frontier: (tree, node) -> index into work list.
  std::vector<std::vector<int>> slot(tree_count, std::vector<int>(1, -1));
  std::vector<NodeWork> work;
  auto activate_roots = [&](const std::vector<std::size_t>& trees) {
    for (auto t : trees) {
      NodeWork w;
      w.tree = t;
      w.node = 0;
      w.features = pick_features(t, 0);
      w.totals.assign(stats, 0.0);
      w.hist.assign(w.features.size() * bins * stats, 0.0);
      slot[t][0] = static_cast<int>(work.size());
      work.push_back(std::move(w));
    }
  };
  std::vector<std::size_t> all_trees(tree_count);
  std::iota(all_trees.begin(), all_trees.end(), 0);
  activate_roots(all_trees);

  std::vector<int> row_bins(d, 0);
  auto accumulate = [&](const std::vector<std::size_t>& trees) {
    for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId> rows) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (std::size_t f = 1; f < d; ++f) row_bins[f] = m.bin_of(f, X(i, static_cast<Eigen::Index>(f)));
        const double target = y(i);
        for (auto t : trees) {
          const int node = route(m.trees[t], row_bins);
          const int s = slot[t][static_cast<std::size_t>(node)];
          if (s < 0) continue;
          KeyedStream stream(Stream::Bootstrap,
                             DrawKey{key.seed, key.imputation, key.iteration, key.variable, rows[static_cast<std::size_t>(i)]},
                             t * 64 + attempt[t]);
          const int weight = stream.poisson1();
          if (weight == 0) continue;
          const double w = weight;
          NodeWork& nw = work[static_cast<std::size_t>(s)];
          double contrib[3] = {w, w * target, w * target * target};
          const std::size_t cls = mode == ForestMode::Classifier ? static_cast<std::size_t>(target) : 0;
          if (mode == ForestMode::Regressor) {
            for (std::size_t k = 0; k < 3; ++k) nw.totals[k] += contrib[k];
          } else {
            nw.totals[cls] += w;
          }
          for (std::size_t fi = 0; fi < nw.features.size(); ++fi) {
            const auto b = static_cast<std::size_t>(row_bins[static_cast<std::size_t>(nw.features[fi])]);
            double* h = &nw.hist[(fi * bins + b) * stats];
            if (mode == ForestMode::Regressor) {
              h[0] += contrib[0];
              h[1] += contrib[1];
              h[2] += contrib[2];
            } else {
              h[cls] += w;
            }
          }
        }
      }
    });
  };

  for (int depth = 0; depth < params.max_depth || depth == 0; ++depth) {
    if (work.empty()) break;
    std::vector<std::size_t> trees;
    for (const auto& w : work) {
      if (trees.empty() || trees.back() != w.tree) trees.push_back(w.tree);
    }
    accumulate(trees);
    if (depth == 0) {
      // Trees whose bootstrap drew no rows are reseeded.
      for (int retry = 0; retry < 8; ++retry) {
        std::vector<std::size_t> empty;
        for (auto& w : work) {
          if (weight_of(mode, w.totals.data(), stats) == 0.0) empty.push_back(w.tree);
        }
        if (empty.empty()) break;
        for (auto t : empty) {
          ++attempt[t];
          auto& w = work[static_cast<std::size_t>(slot[t][0])];
          std::fill(w.totals.begin(), w.totals.end(), 0.0);
          std::fill(w.hist.begin(), w.hist.end(), 0.0);
        }
        accumulate(empty);
      }
      for (auto& w : work) {
        if (weight_of(mode, w.totals.data(), stats) == 0.0) {
          throw model_error(ErrorCode::Model, "bootstrap left a tree without rows for '" + name + "'");
        }
        m.trees[w.tree].nodes[0].value = leaf_payload(mode, w.totals);
      }
    }
    const bool last_level = depth + 1 >= params.max_depth;
    std::vector<NodeWork> next;
    for (auto& w : work) {
      Tree& tree = m.trees[w.tree];
      slot[w.tree][static_cast<std::size_t>(w.node)] = -1;
      if (params.max_depth <= 0) continue;
      const double parent_imp = impurity(mode, w.totals.data(), stats);
      double best_gain = 1e-12 * (1.0 + std::fabs(parent_imp));
      int best_feature = -1;
      int best_bin = -1;
      std::vector<double> best_left;
      std::vector<double> left(stats);
      std::vector<double> right(stats);
      for (std::size_t fi = 0; fi < w.features.size(); ++fi) {
        const auto f = static_cast<std::size_t>(w.features[fi]);
        if (m.bin_scale[f] == 0.0) continue;
        std::fill(left.begin(), left.end(), 0.0);
        for (std::size_t b = 0; b + 1 < bins; ++b) {
          const double* h = &w.hist[(fi * bins + b) * stats];
          for (std::size_t s = 0; s < stats; ++s) left[s] += h[s];
          for (std::size_t s = 0; s < stats; ++s) right[s] = w.totals[s] - left[s];
          if (mode == ForestMode::Regressor) right[0] = std::max(right[0], 0.0);
          const double wl = weight_of(mode, left.data(), stats);
          const double wr = weight_of(mode, right.data(), stats);
          if (wl < 0.5 || wr < 0.5) continue;
          const double gain = parent_imp - impurity(mode, left.data(), stats) - impurity(mode, right.data(), stats);
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_bin = static_cast<int>(b);
            best_left = left;
          }
        }
      }
      if (best_feature < 0) continue;  // stays a leaf
      std::vector<double> best_right(stats);
      for (std::size_t s = 0; s < stats; ++s) best_right[s] = w.totals[s] - best_left[s];
      const int left_id = static_cast<int>(tree.nodes.size());
      const int right_id = left_id + 1;
      {
        TreeNode& parent = tree.nodes[static_cast<std::size_t>(w.node)];
        parent.feature = best_feature;
        parent.split_bin = best_bin;
        parent.threshold = m.bin_lo[static_cast<std::size_t>(best_feature)] +
                           static_cast<double>(best_bin + 1) / m.bin_scale[static_cast<std::size_t>(best_feature)];
        parent.left = left_id;
        parent.right = right_id;
        parent.value.clear();
      }
      TreeNode l;
      l.value = leaf_payload(mode, best_left);
      TreeNode r;
      r.value = leaf_payload(mode, best_right);
      tree.nodes.push_back(std::move(l));
      tree.nodes.push_back(std::move(r));
      slot[w.tree].resize(tree.nodes.size(), -1);
      if (last_level) continue;
      for (int child : {left_id, right_id}) {
        NodeWork c;
        c.tree = w.tree;
        c.node = child;
        c.features = pick_features(w.tree, child);
        c.totals.assign(stats, 0.0);
        c.hist.assign(c.features.size() * bins * stats, 0.0);
        next.push_back(std::move(c));
      }
    }
    work = std::move(next);
    for (std::size_t i = 0; i < work.size(); ++i) slot[work[i].tree][static_cast<std::size_t>(work[i].node)] = static_cast<int>(i);
  }

  if (mode == ForestMode::Regressor) {
    const FittedModel view = m;
    double ss = 0.0;
    std::vector<double> buf(d);
    double pred = 0.0;
    for_each_block(table, design, filter, [&](const auto& X, const auto& y, std::span<const RowId>) {
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        for (std::size_t f = 0; f < d; ++f) buf[f] = X(i, static_cast<Eigen::Index>(f));
        predict_row(view, buf, std::span<double>(&pred, 1));
        const double r = y(i) - pred;
        ss += r * r;
      }
    });
    m.sigma_hat = std::sqrt(ss / static_cast<double>(n));
  }
  return m;
}

// ---------------------------------------------------------------- prediction

std::size_t prediction_width(const FittedModel& model) noexcept {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) return 1;
        if constexpr (std::is_same_v<T, LogisticModel>) return 2;
        if constexpr (std::is_same_v<T, MultinomialModel>) return m.classes;
        if constexpr (std::is_same_v<T, ForestModel>) return m.mode == ForestMode::Regressor ? 1 : m.classes;
      },
      model);
}

std::size_t feature_count(const FittedModel& model) noexcept {
  return std::visit(
      [](const auto& m) -> std::size_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, MultinomialModel>) return static_cast<std::size_t>(m.beta.cols());
        if constexpr (std::is_same_v<T, ForestModel>) return m.feature_count;
        if constexpr (std::is_same_v<T, LinearModel> || std::is_same_v<T, LogisticModel>) {
          return static_cast<std::size_t>(m.beta.size());
        }
      },
      model);
}

void predict_row(const FittedModel& model, std::span<const double> features, std::span<double> out) {
  if (features.size() != feature_count(model)) {
    throw model_error(ErrorCode::Contract, "feature row has " + std::to_string(features.size()) +
                                               " entries, model expects " + std::to_string(feature_count(model)));
  }
  if (out.size() != prediction_width(model)) throw model_error(ErrorCode::Contract, "prediction buffer has wrong width");
  const Eigen::Map<const Eigen::VectorXd> x(features.data(), static_cast<Eigen::Index>(features.size()));
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          out[0] = m.beta.dot(x);
        } else if constexpr (std::is_same_v<T, LogisticModel>) {
          const double p = sigmoid(m.beta.dot(x));
          out[0] = 1.0 - p;
          out[1] = p;
        } else if constexpr (std::is_same_v<T, MultinomialModel>) {
          const Eigen::VectorXd eta = m.beta * x;
          double top = 0.0;
          for (Eigen::Index k = 0; k < eta.size(); ++k) top = std::max(top, eta(k));
          double denom = std::exp(-top);
          for (Eigen::Index k = 0; k < eta.size(); ++k) denom += std::exp(eta(k) - top);
          out[0] = std::exp(-top) / denom;
          for (Eigen::Index k = 0; k < eta.size(); ++k) out[static_cast<std::size_t>(k) + 1] = std::exp(eta(k) - top) / denom;
        } else {
          std::vector<int> row_bins(m.feature_count, 0);
          for (std::size_t f = 1; f < m.feature_count; ++f) row_bins[f] = m.bin_of(f, features[f]);
          std::fill(out.begin(), out.end(), 0.0);
          for (const auto& tree : m.trees) {
            const auto& leaf = tree.nodes[static_cast<std::size_t>(route(tree, row_bins))].value;
            for (std::size_t k = 0; k < out.size(); ++k) out[k] += leaf[k];
          }
          const double inv = 1.0 / static_cast<double>(m.trees.size());
          for (auto& v : out) v *= inv;
        }
      },
      model);
  if (out.size() > 1) {
    double sum = 0.0;
    for (double v : out) sum += v;
    for (auto& v : out) v /= sum;
  }
}

PredictionSet predict(const FittedModel& model, ChunkedTable& table, const DesignSpec& design, RowFilter filter) {
  PredictionSet ps;
  ps.width = prediction_width(model);
  std::vector<double> buf(design.feature_count);
  std::vector<double> out(ps.width);
  auto stream = table.scan_indices(design.scan_columns());
  while (auto v = stream.next()) {
    const auto& target = v->column(0);
    for (std::size_t i = 0; i < v->rows(); ++i) {
      if (!keep_row(target, i, filter)) continue;
      encode_row(*v, design, i, buf);
      predict_row(model, buf, out);
      ps.rows.push_back(v->begin() + i);
      ps.values.insert(ps.values.end(), out.begin(), out.end());
    }
  }
  return ps;
}

}  // namespace oocmice
