#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oocmice/draws.hpp"
#include "test_support.hpp"

using namespace oocmice;
using oocmice::testing::error_code_of;

namespace {

std::vector<DrawKey> keys(std::size_t n, std::uint64_t seed = 1) {
  std::vector<DrawKey> k(n);
  for (std::size_t r = 0; r < n; ++r) k[r] = DrawKey{seed, 0, 1, 2, r};
  return k;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("inverse-cdf category selection") {
  const std::vector<double> p{0.2, 0.5, 0.3};
  CHECK(select_category(p, 0.65) == 1);
  CHECK(select_category(p, 0.2) == 0);
  CHECK(select_category(p, 0.2000001) == 1);
  CHECK(select_category(p, 0.7) == 1);
  CHECK(select_category(p, 0.71) == 2);
  CHECK(select_category(p, 1e-12) == 0);
  // Rounding slack falls to the last positive class.
  CHECK(select_category(std::vector<double>{0.4, 0.6 - 1e-12, 0.0}, 1.0) == 1);
}

TEST_CASE("categorical draws follow the probabilities") {
  const std::size_t n = 100000;
  const std::vector<double> row{0.1, 0.25, 0.65};
  std::vector<double> probs;
  for (std::size_t r = 0; r < n; ++r) probs.insert(probs.end(), row.begin(), row.end());
  const auto draws = draw_categorical(probs, 3, keys(n));
  std::vector<double> freq(3, 0);
  for (auto d : draws) freq[static_cast<std::size_t>(d)] += 1.0 / n;
  for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(freq[k] - row[k]) < 0.005);
  CHECK(draws == draw_categorical(probs, 3, keys(n)));
  CHECK(draws != draw_categorical(probs, 3, keys(n, 2)));
}

TEST_CASE("categorical draws validate rows") {
  const auto k = keys(1);
  CHECK(error_code_of([&] { draw_categorical(std::vector<double>{0.5, 0.6}, 2, k); }) == ErrorCode::Contract);
  CHECK(error_code_of([&] { draw_categorical(std::vector<double>{-0.1, 1.1}, 2, k); }) == ErrorCode::Contract);
  CHECK(error_code_of([&] { draw_categorical(std::vector<double>{1.0}, 2, k); }) == ErrorCode::Contract);
  // Within tolerance is renormalized.
  CHECK(draw_categorical(std::vector<double>{0.0, 1.0 + 5e-10}, 2, k)[0] == 1);
}

TEST_CASE("continuous draws have the requested moments and shape") {
  const std::size_t n = 100000;
  std::vector<double> pred(n, 3.0);
  const auto out = draw_continuous(pred, 2.0, keys(n));
  const double mean = std::accumulate(out.begin(), out.end(), 0.0) / n;
  double var = 0;
  for (double v : out) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / (n - 1));
  CHECK(std::fabs(mean - 3.0) < 0.03);
  CHECK(std::fabs(sd - 2.0) < 0.02);

  // Kolmogorov-Smirnov against N(3, 4); critical value at alpha = 0.001.
  std::vector<double> z(out.begin(), out.end());
  std::sort(z.begin(), z.end());
  double dmax = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = normal_cdf((z[i] - 3.0) / 2.0);
    dmax = std::max({dmax, F - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - F});
  }
  CHECK(dmax < 1.95 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("continuous draws: rounding, zero sigma, errors") {
  std::vector<double> pred{1.2, 2.7, -0.4};
  const auto exact = draw_continuous(pred, 0.0, keys(3));
  CHECK(exact == pred);
  const auto ints = draw_continuous(pred, 1.5, keys(3), true);
  for (double v : ints) CHECK(v == std::round(v));
  CHECK(error_code_of([&] { draw_continuous(pred, -1.0, keys(3)); }) == ErrorCode::Numeric);
  CHECK(error_code_of([&] { draw_continuous(pred, NAN, keys(3)); }) == ErrorCode::Numeric);
  CHECK(error_code_of([&] { draw_continuous(pred, 1.0, keys(2)); }) == ErrorCode::Contract);
}

TEST_CASE("residual sigma uses the 1/n convention") {
  CHECK(residual_sigma(std::vector<double>{1, -1}, std::vector<double>{0, 0}) == 1.0);
  CHECK(residual_sigma(std::vector<double>{}, std::vector<double>{}) == 0.0);
  CHECK(residual_sigma(std::vector<double>{2, 4, 6}, std::vector<double>{1, 4, 8}) == doctest::Approx(std::sqrt(5.0 / 3.0)));
}

TEST_CASE("keyed streams are independent of evaluation order") {
  const auto a = draw_continuous(std::vector<double>(10, 0.0), 1.0, keys(10));
  auto rev = keys(10);
  std::reverse(rev.begin(), rev.end());
  auto b = draw_continuous(std::vector<double>(10, 0.0), 1.0, rev);
  std::reverse(b.begin(), b.end());
  CHECK(a == b);
}
