#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "oocmice/chunkstore.hpp"
#include "oocmice/rng.hpp"

namespace oocmice {

/// One predictor column's contribution to the feature row.
struct FeatureBlock {
  std::size_t column = 0;
  bool categorical = false;
  /// Dictionary size for categorical blocks; the block emits levels-1
  /// indicators with code 0 as the dropped reference.
  std::size_t levels = 0;
  std::size_t offset = 0;
};

/// Maps (target, predictors) onto a dense feature row with the intercept
/// first. Views handed to the encoder must list target then predictors.
struct DesignSpec {
  std::size_t target = 0;
  std::vector<std::size_t> predictors;
  std::vector<FeatureBlock> blocks;
  std::size_t feature_count = 1;
  std::vector<std::string> feature_names;

  static DesignSpec make(const ChunkedTable& table, std::size_t target, const std::vector<std::size_t>& predictors);

  /// Columns to request from a scan: target followed by predictors.
  std::vector<std::size_t> scan_columns() const;
};

/// Writes row `i` of the view (columns per scan_columns) into `out`.
void encode_row(const ChunkView& view, const DesignSpec& design, std::size_t i, std::span<double> out);
/// Dense (rows x d) feature matrix for every row of the view.
Eigen::MatrixXd encode_features(const ChunkView& view, const DesignSpec& design);

enum class RowFilter : std::uint8_t { Observed, Missing, All };

/// Tiny ridge added to every normal-equation system: 1e-8 * trace / d.
/// The intercept is never penalized.
double ridge_lambda(double gram_trace, std::size_t d) noexcept;

struct LinearModel {
  Eigen::VectorXd beta;
  double sigma_hat = 0.0;
  Eigen::MatrixXd xtx_inv;
  std::size_t n_obs = 0;
};

struct LogisticModel {
  Eigen::VectorXd beta;
  Eigen::MatrixXd cov;
  bool converged = false;
  int iterations = 0;
  std::size_t n_obs = 0;
};

struct MultinomialModel {
  /// (K-1) x d, row k-1 holds class k's coefficients against class 0.
  Eigen::MatrixXd beta;
  std::size_t classes = 0;
  bool converged = false;
  int iterations = 0;
  std::size_t n_obs = 0;
};

struct TreeNode {
  int feature = -1;  ///< -1 marks a leaf
  int split_bin = 0;  ///< rows with bin <= split_bin go left
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  /// Leaf payload: one mean (regressor) or class proportions (classifier).
  std::vector<double> value;
};

struct Tree {
  std::vector<TreeNode> nodes;
};

enum class ForestMode : std::uint8_t { Regressor, Classifier };

struct ForestParams {
  int trees = 20;
  int max_depth = 5;
  int bins = 32;
};

struct ForestModel {
  ForestMode mode = ForestMode::Regressor;
  std::vector<Tree> trees;
  std::size_t classes = 0;
  double sigma_hat = 0.0;
  std::size_t feature_count = 0;
  /// Equal-width binning per feature (index into the feature row).
  std::vector<double> bin_lo;
  std::vector<double> bin_scale;
  int bins = 32;
  std::size_t n_obs = 0;

  int bin_of(std::size_t feature, double x) const noexcept;
};

using FittedModel = std::variant<LinearModel, LogisticModel, MultinomialModel, ForestModel>;

/// Width of the prediction vector: 1 for regressors, K for classifiers.
std::size_t prediction_width(const FittedModel& model) noexcept;
std::size_t feature_count(const FittedModel& model) noexcept;

/// Mean (regressors) or class probabilities (classifiers) for one row.
void predict_row(const FittedModel& model, std::span<const double> features, std::span<double> out);

struct PredictionSet {
  std::vector<RowId> rows;
  std::size_t width = 1;
  /// Row-major rows.size() x width.
  std::vector<double> values;
};

PredictionSet predict(const FittedModel& model, ChunkedTable& table, const DesignSpec& design, RowFilter filter);

LinearModel fit_linear(ChunkedTable& table, const DesignSpec& design, RowFilter filter = RowFilter::Observed);

LogisticModel fit_logistic(ChunkedTable& table, const DesignSpec& design, RowFilter filter = RowFilter::Observed);

MultinomialModel fit_multinomial(ChunkedTable& table, const DesignSpec& design,
                                 RowFilter filter = RowFilter::Observed);

/// Bootstrap weights and feature subsets are keyed by `key` (row and
/// variable fields are overwritten per use).
ForestModel fit_forest(ChunkedTable& table, const DesignSpec& design, ForestMode mode, const DrawKey& key,
                       const ForestParams& params = {}, RowFilter filter = RowFilter::Observed);

/// Penalized objective value, gradient and Hessian at a point; shared by the
/// optimizers and exposed for derivative checks.
struct LikelihoodState {
  double objective = 0.0;  ///< penalized negative log-likelihood
  Eigen::VectorXd gradient;  ///< of the objective
  Eigen::MatrixXd hessian;
  double gram_trace = 0.0;
  std::size_t n = 0;
  double positives = 0.0;
};

LikelihoodState logistic_state(ChunkedTable& table, const DesignSpec& design, RowFilter filter,
                               const Eigen::VectorXd& beta, double lambda);
/// Parameters are the (K-1) x d coefficient matrix flattened row-major.
LikelihoodState multinomial_state(ChunkedTable& table, const DesignSpec& design, RowFilter filter,
                                  std::size_t classes, const Eigen::VectorXd& params, double lambda,
                                  bool with_hessian = true);

}  // namespace oocmice
