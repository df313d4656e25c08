#include <cmath>
#include <random>

#include "doctest.h"
#include "oocmice/models.hpp"
#include "test_support.hpp"

using namespace oocmice;
using oocmice::testing::TempDir;
using oocmice::testing::error_code_of;
using oocmice::testing::table_options;

namespace {

struct Dataset {
  std::vector<ColumnDescriptor> schema;
  std::vector<std::vector<double>> values;
  std::vector<std::vector<bool>> missing;

  std::size_t add(const std::string& name, StorageKind kind, std::vector<double> v,
                  std::vector<std::string> cats = {}) {
    schema.push_back({name, kind, std::move(cats)});
    missing.emplace_back(v.size(), false);
    values.push_back(std::move(v));
    return schema.size() - 1;
  }
  std::unique_ptr<ChunkedTable> build(const TempDir& dir, std::size_t chunk_rows, const std::string& sub = "s") const {
    return ChunkedTable::from_columns(schema, values, missing, table_options(dir, chunk_rows, std::size_t{1} << 28, sub));
  }
};

std::vector<double> normals(std::mt19937_64& gen, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(gen);
  return v;
}

/// Dense design with intercept from numeric columns, rows where keep[r].
Eigen::MatrixXd dense_design(const std::vector<std::vector<double>>& cols, const std::vector<bool>& keep) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < keep.size(); ++r) {
    if (keep[r]) rows.push_back(r);
  }
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size() + 1));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    X(static_cast<Eigen::Index>(i), 0) = 1.0;
    for (std::size_t c = 0; c < cols.size(); ++c) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c + 1)) = cols[c][rows[i]];
  }
  return X;
}

Eigen::VectorXd dense_target(const std::vector<double>& y, const std::vector<bool>& keep) {
  std::vector<double> out;
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (keep[r]) out.push_back(y[r]);
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

/// Penalty matrix: lambda on every coefficient but the intercept.
Eigen::MatrixXd slope_penalty(Eigen::Index d, double lambda) {
  Eigen::MatrixXd p = lambda * Eigen::MatrixXd::Identity(d, d);
  p(0, 0) = 0.0;
  return p;
}

/// Penalized least squares through QR on the augmented system [X; sqrt(P)].
Eigen::VectorXd ridge_qr(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index d = X.cols();
  const double lambda = 1e-8 * (X.transpose() * X).trace() / static_cast<double>(d);
  Eigen::MatrixXd A(X.rows() + d, d);
  A << X, slope_penalty(d, std::sqrt(lambda));
  Eigen::VectorXd b(X.rows() + d);
  b << y, Eigen::VectorXd::Zero(d);
  return A.colPivHouseholderQr().solve(b);
}

/// Penalized logistic objective in plain loops.
double logistic_objective(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& beta, double lambda) {
  double f = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double eta = 0.0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) eta += X(i, c) * beta(c);
    f += std::log(1.0 + std::exp(eta)) - y(i) * eta;
  }
  for (Eigen::Index c = 1; c < beta.size(); ++c) f += 0.5 * lambda * beta(c) * beta(c);
  return f;
}

/// Gradient descent on the penalized logistic objective with a fixed step
/// from the Lipschitz bound; slow but independent of Newton.
Eigen::VectorXd logistic_oracle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  const double lip = 0.25 * (X.transpose() * X).eigenvalues().real().maxCoeff() + lambda;
  for (int it = 0; it < 200000; ++it) {
    Eigen::VectorXd g = slope_penalty(beta.size(), lambda) * beta;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(beta)));
      g += (p - y(i)) * X.row(i).transpose();
    }
    beta -= g / lip;
    if (g.lpNorm<Eigen::Infinity>() < 1e-11) break;
  }
  return beta;
}

}  // namespace

TEST_CASE("design encodes intercept, numerics and treatment indicators") {
  TempDir dir;
  Dataset ds;
  const auto y = ds.add("y", StorageKind::Float64, {1, 2, 3});
  const auto x = ds.add("x", StorageKind::Float64, {0.5, -1, 2});
  const auto g = ds.add("g", StorageKind::Category, {0, 2, 1}, {"a", "b", "c"});
  auto t = ds.build(dir, 2);
  auto design = DesignSpec::make(*t, y, {x, g});
  CHECK(design.feature_count == 4);
  CHECK(design.feature_names == std::vector<std::string>{"(Intercept)", "x", "g[b]", "g[c]"});
  std::vector<std::vector<double>> rows;
  auto s = t->scan_indices(design.scan_columns());
  while (auto v = s.next()) {
    auto X = encode_features(*v, design);
    for (Eigen::Index i = 0; i < X.rows(); ++i) rows.push_back({X(i, 0), X(i, 1), X(i, 2), X(i, 3)});
  }
  CHECK(rows == std::vector<std::vector<double>>{{1, 0.5, 0, 0}, {1, -1, 0, 1}, {1, 2, 1, 0}});
}

TEST_CASE("linear fit matches a QR oracle on random problems") {
  std::mt19937_64 gen(11);
  for (int rep = 0; rep < 100; ++rep) {
    TempDir dir;
    const std::size_t n = 50;
    auto x1 = normals(gen, n);
    auto x2 = normals(gen, n, 3.0);
    auto eps = normals(gen, n, 0.5);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = 1.5 - 2.0 * x1[r] + 0.3 * x2[r] + eps[r];
    Dataset ds;
    const auto yc = ds.add("y", StorageKind::Float64, y);
    const auto a = ds.add("a", StorageKind::Float64, x1);
    const auto b = ds.add("b", StorageKind::Float64, x2);
    std::vector<bool> keep(n, true);
    for (std::size_t r = 0; r < n; ++r) {
      if ((r + static_cast<std::size_t>(rep)) % 7 == 0) {
        ds.missing[yc][r] = true;
        keep[r] = false;
      }
    }
    auto t = ds.build(dir, 16);
    auto design = DesignSpec::make(*t, yc, {a, b});
    auto m = fit_linear(*t, design);
    const auto X = dense_design({x1, x2}, keep);
    const auto yy = dense_target(y, keep);
    const Eigen::VectorXd oracle = ridge_qr(X, yy);
    CHECK((m.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-8);
    const double sigma = std::sqrt((yy - X * oracle).squaredNorm() / static_cast<double>(yy.size()));
    CHECK(m.sigma_hat == doctest::Approx(sigma).epsilon(1e-9));
    CHECK(m.n_obs == static_cast<std::size_t>(yy.size()));
    const Eigen::MatrixXd inv = (X.transpose() * X).inverse();
    CHECK((m.xtx_inv - inv).lpNorm<Eigen::Infinity>() < 1e-6 * inv.lpNorm<Eigen::Infinity>());
  }
}

TEST_CASE("linear fit recovers known coefficients on a large sample") {
  TempDir dir;
  std::mt19937_64 gen(3);
  const std::size_t n = 20000;
  auto x = normals(gen, n);
  auto e = normals(gen, n, 0.1);
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = 4.0 + 0.5 * x[r] + e[r];
  Dataset ds;
  const auto yc = ds.add("y", StorageKind::Float64, y);
  const auto xc = ds.add("x", StorageKind::Float64, x);
  auto t = ds.build(dir, 1000);
  auto m = fit_linear(*t, DesignSpec::make(*t, yc, {xc}));
  CHECK(m.beta(0) == doctest::Approx(4.0).epsilon(0.005));
  CHECK(m.beta(1) == doctest::Approx(0.5).epsilon(0.01));
  CHECK(m.sigma_hat == doctest::Approx(0.1).epsilon(0.03));
}

TEST_CASE("fits are bit-identical across chunk sizes") {
  std::mt19937_64 gen(5);
  const std::size_t n = 9000;
  auto x1 = normals(gen, n);
  auto x2 = normals(gen, n);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> yb(n), yc(n), g(n);
  for (std::size_t r = 0; r < n; ++r) {
    yc[r] = x1[r] - x2[r] + 0.2 * u(gen);
    yb[r] = u(gen) < 1.0 / (1.0 + std::exp(-(x1[r] + 0.5 * x2[r]))) ? 1.0 : 0.0;
    g[r] = static_cast<double>(r % 3);
  }
  Dataset ds;
  const auto c_yc = ds.add("yc", StorageKind::Float64, yc);
  const auto c_yb = ds.add("yb", StorageKind::Category, yb, {"no", "yes"});
  const auto c_g = ds.add("g", StorageKind::Category, g, {"p", "q", "r"});
  const auto c_x1 = ds.add("x1", StorageKind::Float64, x1);
  const auto c_x2 = ds.add("x2", StorageKind::Float64, x2);
  for (std::size_t r = 0; r < n; r += 5) ds.missing[c_yc][r] = ds.missing[c_yb][r] = ds.missing[c_g][r + 1 < n ? r + 1 : r] = true;

  struct Fits {
    Eigen::VectorXd linear, logistic;
    Eigen::MatrixXd multinomial;
    std::vector<double> forest;
  };
  auto run = [&](std::size_t chunk_rows) {
    TempDir dir;
    auto t = ds.build(dir, chunk_rows);
    Fits f;
    f.linear = fit_linear(*t, DesignSpec::make(*t, c_yc, {c_x1, c_x2})).beta;
    f.logistic = fit_logistic(*t, DesignSpec::make(*t, c_yb, {c_x1, c_x2})).beta;
    f.multinomial = fit_multinomial(*t, DesignSpec::make(*t, c_g, {c_x1, c_x2})).beta;
    auto design = DesignSpec::make(*t, c_yc, {c_x1, c_x2});
    auto forest = fit_forest(*t, design, ForestMode::Regressor, DrawKey{9, 0, 1, 0, 0});
    f.forest = predict(forest, *t, design, RowFilter::Missing).values;
    return f;
  };
  const auto a = run(257);
  for (std::size_t chunk : {std::size_t{1000}, std::size_t{4096}, std::size_t{20000}}) {
    const auto b = run(chunk);
    CHECK(a.linear == b.linear);
    CHECK(a.logistic == b.logistic);
    CHECK(a.multinomial == b.multinomial);
    CHECK(a.forest == b.forest);
  }
}

TEST_CASE("logistic fit reaches the penalized optimum") {
  std::mt19937_64 gen(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 10; ++rep) {
    TempDir dir;
    const std::size_t n = 200;
    auto x1 = normals(gen, n);
    auto x2 = normals(gen, n, 2.0);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = u(gen) < 1.0 / (1.0 + std::exp(-(0.3 + x1[r] - 0.4 * x2[r]))) ? 1 : 0;
    Dataset ds;
    const auto yc = ds.add("y", StorageKind::Category, y, {"a", "b"});
    const auto a = ds.add("a", StorageKind::Float64, x1);
    const auto b = ds.add("b", StorageKind::Float64, x2);
    auto t = ds.build(dir, 33);
    auto m = fit_logistic(*t, DesignSpec::make(*t, yc, {a, b}));
    CHECK(m.converged);
    std::vector<bool> keep(n, true);
    const auto X = dense_design({x1, x2}, keep);
    const auto yy = dense_target(y, keep);
    const double lambda = 1e-8 * (X.transpose() * X).trace() / 3.0;
    const Eigen::VectorXd oracle = logistic_oracle(X, yy, lambda);
    CHECK((m.beta - oracle).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(logistic_objective(X, yy, m.beta, lambda) <= logistic_objective(X, yy, oracle, lambda) + 1e-9);
    // Covariance is the inverse penalized information at the estimate.
    Eigen::MatrixXd info = slope_penalty(3, lambda);
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-X.row(i).dot(m.beta)));
      info += p * (1 - p) * X.row(i).transpose() * X.row(i);
    }
    CHECK((m.cov * info - Eigen::MatrixXd::Identity(3, 3)).lpNorm<Eigen::Infinity>() < 1e-8);
  }
}

TEST_CASE("logistic refuses a single observed class") {
  TempDir dir;
  Dataset ds;
  const auto y = ds.add("y", StorageKind::Category, {1, 1, 1, 0}, {"a", "b"});
  const auto x = ds.add("x", StorageKind::Float64, {1, 2, 3, 4});
  ds.missing[y][3] = true;
  auto t = ds.build(dir, 2);
  CHECK(error_code_of([&] { fit_logistic(*t, DesignSpec::make(*t, y, {x})); }) == ErrorCode::Separation);
}

TEST_CASE("likelihood gradients agree with finite differences") {
  TempDir dir;
  std::mt19937_64 gen(8);
  const std::size_t n = 120;
  auto x1 = normals(gen, n);
  auto x2 = normals(gen, n);
  std::vector<double> yb(n), yk(n);
  for (std::size_t r = 0; r < n; ++r) {
    yb[r] = static_cast<double>(r % 2);
    yk[r] = static_cast<double>((r * 7) % 4);
  }
  Dataset ds;
  const auto cb = ds.add("yb", StorageKind::Category, yb, {"0", "1"});
  const auto ck = ds.add("yk", StorageKind::Category, yk, {"p", "q", "r", "s"});
  const auto a = ds.add("a", StorageKind::Float64, x1);
  const auto b = ds.add("b", StorageKind::Float64, x2);
  auto t = ds.build(dir, 50);
  const double lambda = 0.3;
  const double h = 1e-6;

  auto lb = DesignSpec::make(*t, cb, {a, b});
  Eigen::VectorXd beta(3);
  beta << 0.2, -0.7, 1.1;
  auto st = logistic_state(*t, lb, RowFilter::All, beta, lambda);
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    Eigen::VectorXd up = beta, dn = beta;
    up(k) += h;
    dn(k) -= h;
    const double fd = (logistic_state(*t, lb, RowFilter::All, up, lambda).objective -
                       logistic_state(*t, lb, RowFilter::All, dn, lambda).objective) / (2 * h);
    CHECK(st.gradient(k) == doctest::Approx(fd).epsilon(1e-5));
    const Eigen::VectorXd fdh = (logistic_state(*t, lb, RowFilter::All, up, lambda).gradient -
                                 logistic_state(*t, lb, RowFilter::All, dn, lambda).gradient) / (2 * h);
    CHECK((st.hessian.col(k) - fdh).lpNorm<Eigen::Infinity>() < 1e-4);
  }

  auto lk = DesignSpec::make(*t, ck, {a, b});
  Eigen::VectorXd params(9);
  params << 0.1, 0.2, -0.3, -0.4, 0.5, 0.0, 0.7, -0.1, 0.2;
  auto ms = multinomial_state(*t, lk, RowFilter::All, 4, params, lambda);
  for (Eigen::Index k = 0; k < params.size(); ++k) {
    Eigen::VectorXd up = params, dn = params;
    up(k) += h;
    dn(k) -= h;
    const double fd = (multinomial_state(*t, lk, RowFilter::All, 4, up, lambda, false).objective -
                       multinomial_state(*t, lk, RowFilter::All, 4, dn, lambda, false).objective) / (2 * h);
    CHECK(ms.gradient(k) == doctest::Approx(fd).epsilon(1e-5));
    const Eigen::VectorXd fdh = (multinomial_state(*t, lk, RowFilter::All, 4, up, lambda, false).gradient -
                                 multinomial_state(*t, lk, RowFilter::All, 4, dn, lambda, false).gradient) / (2 * h);
    CHECK((ms.hessian.col(k) - fdh).lpNorm<Eigen::Infinity>() < 1e-4);
  }
}

TEST_CASE("intercept-only multinomial recovers log odds") {
  TempDir dir;
  std::vector<double> y;
  for (int i = 0; i < 50; ++i) y.push_back(0);
  for (int i = 0; i < 30; ++i) y.push_back(1);
  for (int i = 0; i < 20; ++i) y.push_back(2);
  Dataset ds;
  const auto c = ds.add("y", StorageKind::Category, y, {"a", "b", "c"});
  auto t = ds.build(dir, 32);
  auto m = fit_multinomial(*t, DesignSpec::make(*t, c, {}));
  CHECK(m.converged);
  CHECK(m.beta(0, 0) == doctest::Approx(std::log(0.3 / 0.5)).epsilon(1e-4));
  CHECK(m.beta(1, 0) == doctest::Approx(std::log(0.2 / 0.5)).epsilon(1e-4));
  std::vector<double> probs(3);
  std::vector<double> features{1.0};
  predict_row(m, features, probs);
  CHECK(probs[0] == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(probs[1] == doctest::Approx(0.3).epsilon(1e-4));
  CHECK(probs[2] == doctest::Approx(0.2).epsilon(1e-4));
}

TEST_CASE("multinomial fit reaches a stationary point of the dense objective") {
  TempDir dir;
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> u(0, 1);
  const std::size_t n = 300;
  auto x = normals(gen, n);
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double e1 = std::exp(0.5 + x[r]), e2 = std::exp(-0.5 - x[r]);
    const double p0 = 1 / (1 + e1 + e2), p1 = e1 / (1 + e1 + e2);
    const double v = u(gen);
    y[r] = v < p0 ? 0 : (v < p0 + p1 ? 1 : 2);
  }
  Dataset ds;
  const auto c = ds.add("y", StorageKind::Category, y, {"a", "b", "c"});
  const auto xc = ds.add("x", StorageKind::Float64, x);
  auto t = ds.build(dir, 64);
  auto m = fit_multinomial(*t, DesignSpec::make(*t, c, {xc}));
  CHECK(m.converged);
  // Dense gradient of the penalized objective at the estimate.
  double trace = 0;
  for (double v : x) trace += 1 + v * v;
  const double lambda = 1e-8 * trace / 2.0;
  Eigen::MatrixXd grad = lambda * m.beta;
  grad.col(0).setZero();
  for (std::size_t r = 0; r < n; ++r) {
    const double f[2] = {1.0, x[r]};
    double eta[2];
    for (int k = 0; k < 2; ++k) eta[k] = m.beta(k, 0) * f[0] + m.beta(k, 1) * f[1];
    const double denom = 1 + std::exp(eta[0]) + std::exp(eta[1]);
    for (int k = 0; k < 2; ++k) {
      const double p = std::exp(eta[k]) / denom;
      const double obs = y[r] == k + 1 ? 1.0 : 0.0;
      for (int j = 0; j < 2; ++j) grad(k, j) += (p - obs) * f[j];
    }
  }
  CHECK(grad.lpNorm<Eigen::Infinity>() / static_cast<double>(n) < 1e-6);
  CHECK(m.beta(0, 1) > 0.3);
  CHECK(m.beta(1, 1) < -0.3);
}

TEST_CASE("forest regressor on a constant target predicts the constant") {
  TempDir dir;
  std::mt19937_64 gen(4);
  const std::size_t n = 200;
  Dataset ds;
  const auto y = ds.add("y", StorageKind::Float64, std::vector<double>(n, 7.25));
  const auto x = ds.add("x", StorageKind::Float64, normals(gen, n));
  auto t = ds.build(dir, 64);
  auto design = DesignSpec::make(*t, y, {x});
  auto f = fit_forest(*t, design, ForestMode::Regressor, DrawKey{1, 0, 0, 0, 0});
  auto p = predict(f, *t, design, RowFilter::All);
  for (double v : p.values) CHECK(v == doctest::Approx(7.25));
  CHECK(f.sigma_hat == doctest::Approx(0.0));
}

TEST_CASE("forest classifier learns a step function") {
  TempDir dir;
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> u(-1, 1);
  const std::size_t n = 2000;
  std::vector<double> x(n), y(n);
  for (std::size_t r = 0; r < n; ++r) {
    x[r] = u(gen);
    y[r] = x[r] > 0.2 ? 1 : 0;
  }
  Dataset ds;
  const auto yc = ds.add("y", StorageKind::Category, y, {"lo", "hi"});
  const auto xc = ds.add("x", StorageKind::Float64, x);
  auto t = ds.build(dir, 300);
  auto design = DesignSpec::make(*t, yc, {xc});
  auto f = fit_forest(*t, design, ForestMode::Classifier, DrawKey{2, 0, 0, 0, 0});
  auto p = predict(f, *t, design, RowFilter::All);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double sum = p.values[2 * r] + p.values[2 * r + 1];
    CHECK(sum == doctest::Approx(1.0));
    correct += ((p.values[2 * r + 1] > 0.5) == (y[r] == 1)) ? 1 : 0;
  }
  CHECK(static_cast<double>(correct) / n >= 0.95);
}

TEST_CASE("forest leaf holds class proportions when no split is possible") {
  TempDir dir;
  // Constant predictor: every tree is a single leaf whose value is the
  // bootstrap-weighted class share; averaged over trees it is near 0.75.
  std::vector<double> y{0, 0, 1, 1, 1, 1, 1, 1};
  Dataset ds;
  const auto yc = ds.add("y", StorageKind::Category, y, {"a", "b"});
  const auto xc = ds.add("x", StorageKind::Float64, std::vector<double>(8, 1.0));
  auto t = ds.build(dir, 4);
  auto design = DesignSpec::make(*t, yc, {xc});
  ForestParams one;
  one.trees = 1;
  auto f = fit_forest(*t, design, ForestMode::Classifier, DrawKey{3, 0, 0, 0, 0}, one);
  REQUIRE(f.trees.size() == 1);
  REQUIRE(f.trees[0].nodes.size() == 1);
  const auto& leaf = f.trees[0].nodes[0].value;
  // Recompute the bootstrap weights independently.
  double w0 = 0, w1 = 0;
  for (RowId r = 0; r < 8; ++r) {
    KeyedStream s(Stream::Bootstrap, DrawKey{3, 0, 0, 0, r}, 0);
    const int w = s.poisson1();
    (y[r] == 0 ? w0 : w1) += w;
  }
  CHECK(leaf[0] == doctest::Approx(w0 / (w0 + w1)));
  CHECK(leaf[1] == doctest::Approx(w1 / (w0 + w1)));
}

TEST_CASE("forest fits are reproducible and key-dependent") {
  TempDir dir;
  std::mt19937_64 gen(12);
  const std::size_t n = 500;
  auto x1 = normals(gen, n);
  auto x2 = normals(gen, n);
  std::vector<double> y(n);
  for (std::size_t r = 0; r < n; ++r) y[r] = x1[r] * x1[r] + x2[r];
  Dataset ds;
  const auto yc = ds.add("y", StorageKind::Float64, y);
  const auto a = ds.add("a", StorageKind::Float64, x1);
  const auto b = ds.add("b", StorageKind::Float64, x2);
  auto t = ds.build(dir, 100);
  auto design = DesignSpec::make(*t, yc, {a, b});
  auto p1 = predict(fit_forest(*t, design, ForestMode::Regressor, DrawKey{1, 0, 1, 0, 0}), *t, design, RowFilter::All);
  auto p2 = predict(fit_forest(*t, design, ForestMode::Regressor, DrawKey{1, 0, 1, 0, 0}), *t, design, RowFilter::All);
  auto p3 = predict(fit_forest(*t, design, ForestMode::Regressor, DrawKey{2, 0, 1, 0, 0}), *t, design, RowFilter::All);
  CHECK(p1.values == p2.values);
  CHECK(p1.values != p3.values);
  // Fitted trees explain most of the variance.
  double ss = 0, st = 0, mean = 0;
  for (double v : y) mean += v / n;
  for (std::size_t r = 0; r < n; ++r) {
    ss += (y[r] - p1.values[r]) * (y[r] - p1.values[r]);
    st += (y[r] - mean) * (y[r] - mean);
  }
  CHECK(ss / st < 0.3);
}

TEST_CASE("predict_row validates widths") {
  LinearModel m;
  m.beta = Eigen::VectorXd::Ones(2);
  std::vector<double> f{1.0, 2.0, 3.0};
  std::vector<double> out(1);
  CHECK(error_code_of([&] { predict_row(m, f, out); }) == ErrorCode::Contract);
  f.pop_back();
  predict_row(m, f, out);
  CHECK(out[0] == 3.0);
}

TEST_CASE("constant and exact targets fit without residual") {
  TempDir dir;
  Dataset ds;
  const auto y = ds.add("y", StorageKind::Float64, {2, 4, 6});
  const auto x = ds.add("x", StorageKind::Float64, {1, 2, 3});
  const auto c = ds.add("c", StorageKind::Float64, {5, 5, 5});
  auto t = ds.build(dir, 2);
  auto line = fit_linear(*t, DesignSpec::make(*t, y, {x}));
  CHECK(std::fabs(line.beta(0)) < 1e-6);
  CHECK(line.beta(1) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(line.sigma_hat < 1e-6);
  auto flat = fit_linear(*t, DesignSpec::make(*t, c, {}));
  CHECK(flat.beta(0) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(flat.sigma_hat < 1e-12);
}
