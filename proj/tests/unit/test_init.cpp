#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "doctest.h"
#include "oocmice/init.hpp"
#include "oocmice/rng.hpp"
#include "test_support.hpp"

using namespace oocmice;
using oocmice::testing::TempDir;
using oocmice::testing::error_code_of;
using oocmice::testing::table_options;
using oocmice::testing::write_file;

namespace {

struct Fixture {
  TempDir dir;
  std::vector<double> f, i, c;
  std::vector<bool> fm, im, cm;
  std::unique_ptr<ChunkedTable> table;
  VariablePlan plan;

  Fixture(std::size_t n, std::uint64_t seed, InitStrategy strategy = InitStrategy::Memome) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(10, 3);
    std::uniform_int_distribution<int> id(0, 20);
    std::uniform_int_distribution<int> cd(0, 2);
    std::bernoulli_distribution miss(0.3);
    for (std::size_t r = 0; r < n; ++r) {
      f.push_back(nd(gen));
      i.push_back(id(gen));
      c.push_back(cd(gen));
      fm.push_back(miss(gen));
      im.push_back(miss(gen));
      cm.push_back(miss(gen));
    }
    std::vector<ColumnDescriptor> schema{{"f", StorageKind::Float64, {}},
                                         {"i", StorageKind::Int64, {}},
                                         {"c", StorageKind::Category, {"p", "q", "r"}},
                                         {"y", StorageKind::Category, {"no", "yes"}}};
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = static_cast<double>(r % 2);
    table = ChunkedTable::from_columns(schema, {f, i, c, y}, {fm, im, cm, std::vector<bool>(n, false)},
                                       table_options(dir, 37));
    auto specs = parse_variable_types(
        {{"f", "Continuous_float"}, {"i", "Continuous_int"}, {"c", "Nominal"}, {"y", "Binary"}}, strategy);
    plan = compile_plan(*table, specs, parse_formula("y ~ f"));
  }

  static std::vector<double> observed(const std::vector<double>& v, const std::vector<bool>& m) {
    std::vector<double> out;
    for (std::size_t r = 0; r < v.size(); ++r) {
      if (!m[r]) out.push_back(v[r]);
    }
    return out;
  }
};

double oracle_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double oracle_mode(const std::vector<double>& v) {
  std::map<double, int> counts;
  for (double x : v) ++counts[x];
  double best = 0;
  int top = -1;
  for (auto [x, k] : counts) {
    if (k > top) {
      top = k;
      best = x;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("column statistics match sorted-array oracles") {
  for (std::uint64_t seed : {1, 2, 3}) {
    Fixture fx(501 + seed, seed);
    const auto of = Fixture::observed(fx.f, fx.fm);
    const auto oi = Fixture::observed(fx.i, fx.im);
    double mean = 0;
    for (double x : of) mean += x;
    mean /= static_cast<double>(of.size());
    CHECK(column_statistic(*fx.table, "f", Statistic::Mean) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(column_statistic(*fx.table, "f", Statistic::Median) == oracle_median(of));
    CHECK(column_statistic(*fx.table, "i", Statistic::Median) == oracle_median(oi));
    CHECK(column_statistic(*fx.table, "i", Statistic::Mode) == oracle_mode(oi));
    CHECK(column_statistic(*fx.table, "c", Statistic::Mode) == oracle_mode(Fixture::observed(fx.c, fx.cm)));
  }
}

TEST_CASE("order statistics by histogram narrowing") {
  Fixture fx(3000, 9);
  auto of = Fixture::observed(fx.f, fx.fm);
  std::sort(of.begin(), of.end());
  for (std::size_t k : {std::size_t{0}, std::size_t{1}, of.size() / 3, of.size() / 2, of.size() - 1}) {
    CHECK(observed_order_statistic(*fx.table, 0, k, 8) == of[k]);
    CHECK(observed_order_statistic(*fx.table, 0, k) == of[k]);
  }
  // Heavy ties collapse into one bin.
  auto oi = Fixture::observed(fx.i, fx.im);
  std::sort(oi.begin(), oi.end());
  CHECK(observed_order_statistic(*fx.table, 1, oi.size() / 2, 4) == oi[oi.size() / 2]);
}

TEST_CASE("memome fills masked cells and keeps the mask") {
  Fixture fx(400, 4);
  const double mean = column_statistic(*fx.table, "f", Statistic::Mean);
  const double median = column_statistic(*fx.table, "i", Statistic::Median);
  const double mode = column_statistic(*fx.table, "c", Statistic::Mode);
  impute_with_memome(*fx.table, fx.plan);
  const auto f = fx.table->read_column(0);
  const auto i = fx.table->read_column(1);
  const auto c = fx.table->read_column(2);
  const auto mask = fx.table->read_mask(0);
  for (std::size_t r = 0; r < fx.f.size(); ++r) {
    CHECK(f[r] == (fx.fm[r] ? mean : fx.f[r]));
    CHECK(i[r] == (fx.im[r] ? std::round(median) : fx.i[r]));
    CHECK(c[r] == (fx.cm[r] ? mode : fx.c[r]));
    CHECK(static_cast<bool>(mask[r]) == fx.fm[r]);
  }
}

TEST_CASE("random-sample init draws observed values reproducibly") {
  Fixture a(700, 5, InitStrategy::RandomSample);
  Fixture b(700, 5, InitStrategy::RandomSample);
  impute_with_random_samples(*a.table, a.plan, 42);
  impute_with_random_samples(*b.table, b.plan, 42);
  const auto fa = a.table->read_column(0);
  CHECK(fa == b.table->read_column(0));

  // Recompute each fill from the keyed stream: index into the observed
  // cells in row order.
  const auto of = Fixture::observed(a.f, a.fm);
  for (std::size_t r = 0; r < a.f.size(); ++r) {
    if (!a.fm[r]) {
      CHECK(fa[r] == a.f[r]);
      continue;
    }
    KeyedStream s(Stream::InitialFill, DrawKey{42, 0, 0, 0, r});
    CHECK(fa[r] == of[s.below(of.size())]);
  }
  const auto ca = a.table->read_column(2);
  const auto oc = Fixture::observed(a.c, a.cm);
  for (std::size_t r = 0; r < a.c.size(); ++r) {
    if (!a.cm[r]) continue;
    CHECK(std::find(oc.begin(), oc.end(), ca[r]) != oc.end());
  }

  Fixture c(700, 5, InitStrategy::RandomSample);
  impute_with_random_samples(*c.table, c.plan, 43);
  CHECK(c.table->read_column(0) != fa);
}

TEST_CASE("random-sample categorical frequencies track the observed shares") {
  TempDir dir;
  const std::size_t n = 40000;
  std::vector<double> g(n), y(n);
  std::vector<bool> m(n);
  for (std::size_t r = 0; r < n; ++r) {
    g[r] = r % 10 < 6 ? 0 : (r % 10 < 8 ? 1 : 2);
    m[r] = r % 2 == 1;
    y[r] = static_cast<double>(r % 2);
  }
  // Observed rows are even: r%10 in {0,2,4,6,8} -> shares 3/5, 1/5, 1/5.
  auto t = ChunkedTable::from_columns(
      {{"g", StorageKind::Category, {"a", "b", "c"}}, {"y", StorageKind::Category, {"n", "y"}}}, {g, y},
      {m, std::vector<bool>(n, false)}, table_options(dir, 1000));
  auto plan = compile_plan(*t, parse_variable_types({{"g", "Nominal"}, {"y", "Binary"}}), parse_formula("y ~ g"));
  impute_with_random_samples(*t, plan, 7);
  const auto out = t->read_column(0);
  double counts[3] = {0, 0, 0};
  for (std::size_t r = 1; r < n; r += 2) counts[static_cast<int>(out[r])] += 1;
  const double half = n / 2.0;
  CHECK(counts[0] / half == doctest::Approx(0.6).epsilon(0.03));
  CHECK(counts[1] / half == doctest::Approx(0.2).epsilon(0.05));
  CHECK(counts[2] / half == doctest::Approx(0.2).epsilon(0.05));
}
