#include "oocmice/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "oocmice/rng.hpp"

namespace oocmice {

namespace fs = std::filesystem;

namespace {

constexpr char kTruthMagic[8] = {'O', 'O', 'C', 'G', 'T', '0', '0', '1'};

Error cli_error(ErrorCode code, const std::string& what) { return Error("cli", code, what); }

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t point, std::uint64_t replicate) {
  return mix64(mix64(mix64(seed ^ (tag * 0x9e3779b97f4a7c15ULL)) + point) + replicate);
}

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::ifstream& in, const fs::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw cli_error(ErrorCode::Format, "truncated ground-truth file " + path.string());
  }
  return v;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string number(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

GroundTruth ampute_mcar(ChunkedTable& table, const std::string& column, double proportion, std::uint64_t seed) {
  if (!(proportion > 0.0 && proportion < 1.0)) {
    throw Error("cli", ErrorCode::Amputation, "proportion must lie in (0, 1), got " + number(proportion));
  }
  const std::size_t col = table.column_index(column);
  const std::size_t n_obs = table.n_rows() - table.masked_count(col);
  if (n_obs == 0) throw Error("cli", ErrorCode::Amputation, "column '" + column + "' has no observed cells");
  const auto want = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(n_obs)));
  if (want >= n_obs) {
    throw Error("cli", ErrorCode::Amputation,
                "masking " + number(proportion) + " of column '" + column + "' would leave no observed cells");
  }

  GroundTruth truth;
  truth.column = column;
  truth.rows.reserve(want);
  truth.values.reserve(want);
  // Selection sampling: visit observed cells in row order and take each
  // with probability (still needed) / (still unseen).
  std::size_t seen = 0;
  auto stream = table.scan_indices({col});
  while (auto view = stream.next()) {
    const auto& s = view->column(0);
    for (std::size_t i = 0; i < s.size() && truth.rows.size() < want; ++i) {
      if (s.missing(i)) continue;
      const RowId row = view->begin() + i;
      KeyedStream ks(Stream::Amputation, DrawKey{seed, 0, 0, col, row});
      const double u = ks.uniform();
      if (static_cast<double>(n_obs - seen) * u < static_cast<double>(want - truth.rows.size())) {
        truth.rows.push_back(row);
        truth.values.push_back(s.as_double(i));
      }
      ++seen;
    }
  }
  table.ampute_cells(col, truth.rows);
  return truth;
}

void write_ground_truth(const fs::path& path, const GroundTruth& truth) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cli_error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kTruthMagic, sizeof kTruthMagic);
  put<std::uint64_t>(out, truth.column.size());
  out.write(truth.column.data(), static_cast<std::streamsize>(truth.column.size()));
  put<std::uint64_t>(out, truth.rows.size());
  for (std::size_t i = 0; i < truth.rows.size(); ++i) {
    put<std::uint64_t>(out, truth.rows[i]);
    put<double>(out, truth.values[i]);
  }
  out.flush();
  if (!out) throw cli_error(ErrorCode::Io, "short write to " + path.string());
}

GroundTruth read_ground_truth(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cli_error(ErrorCode::Io, "cannot read " + path.string());
  char magic[sizeof kTruthMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kTruthMagic, sizeof magic) != 0) {
    throw cli_error(ErrorCode::Format, path.string() + " is not a ground-truth file");
  }
  GroundTruth truth;
  const auto name_len = take<std::uint64_t>(in, path);
  if (name_len > 4096) throw cli_error(ErrorCode::Format, "bad column name length in " + path.string());
  truth.column.resize(name_len);
  if (!in.read(truth.column.data(), static_cast<std::streamsize>(name_len))) {
    throw cli_error(ErrorCode::Format, "truncated ground-truth file " + path.string());
  }
  const auto n = take<std::uint64_t>(in, path);
  truth.rows.reserve(n);
  truth.values.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    truth.rows.push_back(take<std::uint64_t>(in, path));
    truth.values.push_back(take<double>(in, path));
  }
  return truth;
}

double rmse(const std::vector<double>& imputed, const std::vector<double>& truth) {
  if (imputed.size() != truth.size()) throw cli_error(ErrorCode::Usage, "rmse: length mismatch");
  if (truth.empty()) return 0.0;
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) ss += (imputed[i] - truth[i]) * (imputed[i] - truth[i]);
  return std::sqrt(ss / static_cast<double>(truth.size()));
}

double rmse(ChunkedTable& table, const GroundTruth& truth) {
  const std::size_t col = table.column_index(truth.column);
  std::vector<double> current;
  current.reserve(truth.rows.size());
  std::size_t i = 0;
  while (i < truth.rows.size()) {
    if (truth.rows[i] >= table.n_rows()) throw cli_error(ErrorCode::Bounds, "ground-truth row beyond table end");
    const std::size_t chunk = truth.rows[i] / table.chunk_rows();
    auto view = table.view(chunk, {col});
    const auto& s = view.column(0);
    for (; i < truth.rows.size() && truth.rows[i] < view.end(); ++i) {
      current.push_back(s.as_double(truth.rows[i] - view.begin()));
    }
  }
  return rmse(current, truth.values);
}

SyntheticData generate_synthetic(const SyntheticSpec& spec, TableOptions options) {
  const std::size_t k = spec.gaussian;
  if (k == 0) throw cli_error(ErrorCode::Usage, "synthetic data needs at least one gaussian column");
  if (!(spec.correlation >= 0.0 && spec.correlation < 1.0)) {
    throw cli_error(ErrorCode::Usage, "correlation must lie in [0, 1)");
  }
  if (!spec.linear_coef.empty() && spec.linear_coef.size() != k + 1) {
    throw cli_error(ErrorCode::Usage, "linear coefficients need an intercept and one slope per gaussian column");
  }
  if (!spec.logistic_coef.empty() && spec.logistic_coef.size() != k + 1) {
    throw cli_error(ErrorCode::Usage, "logistic coefficients need an intercept and one slope per gaussian column");
  }

  SyntheticData out;
  std::vector<ColumnDescriptor> schema;
  for (std::size_t j = 0; j < k; ++j) {
    schema.push_back({"x" + std::to_string(j + 1), StorageKind::Float64, {}});
    out.declarations.emplace_back("x" + std::to_string(j + 1), "Continuous_float");
  }
  const bool has_y = !spec.linear_coef.empty();
  const bool has_b = !spec.logistic_coef.empty();
  if (has_y) {
    schema.push_back({"y", StorageKind::Float64, {}});
    out.declarations.emplace_back("y", "Continuous_float");
  }
  if (has_b) {
    schema.push_back({"b", StorageKind::Category, {"no", "yes"}});
    out.declarations.emplace_back("b", "Binary");
  }
  if (spec.nominal) {
    schema.push_back({"g", StorageKind::Category, {"a", "b", "c"}});
    out.declarations.emplace_back("g", "Nominal");
  }
  const std::size_t width = schema.size();
  const double shared = std::sqrt(spec.correlation);
  const double own = std::sqrt(1.0 - spec.correlation);

  // Draw order within a row is fixed: z0, z1..zk, e, u, v.
  auto row_values = [&](RowId row, std::vector<double>& v) {
    KeyedStream ks(Stream::Synthetic, DrawKey{spec.seed, 0, 0, 0, row});
    v.assign(width, 0.0);
    const double z0 = ks.normal();
    for (std::size_t j = 0; j < k; ++j) v[j] = shared * z0 + own * ks.normal();
    const double e = ks.normal();
    const double u = ks.uniform();
    const double noise = ks.normal();
    std::size_t c = k;
    if (has_y) {
      double y = spec.linear_coef[0] + spec.noise_sd * e;
      for (std::size_t j = 0; j < k; ++j) y += spec.linear_coef[j + 1] * v[j];
      v[c++] = y;
    }
    if (has_b) {
      double eta = spec.logistic_coef[0];
      for (std::size_t j = 0; j < k; ++j) eta += spec.logistic_coef[j + 1] * v[j];
      v[c++] = u < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
    }
    if (spec.nominal) {
      const double s = v[0] + noise;
      v[c++] = s > 0.5 ? 2.0 : (s > -0.5 ? 1.0 : 0.0);
    }
  };

  std::vector<double> values;
  out.table = ChunkedTable::generate(std::move(schema), spec.rows, std::move(options),
                                     [&](std::size_t column, RowId begin, Chunk& chunk) {
                                       for (std::size_t i = 0; i < chunk.rows; ++i) {
                                         row_values(begin + i, values);
                                         if (chunk.kind == StorageKind::Float64) {
                                           chunk.reals[i] = values[column];
                                         } else {
                                           chunk.ints[i] = static_cast<std::int64_t>(values[column]);
                                         }
                                       }
                                     });
  return out;
}

std::unique_ptr<ChunkedTable> subsample_rows(ChunkedTable& source, std::size_t size, std::uint64_t seed,
                                             std::size_t replicate, TableOptions options) {
  const std::size_t n = source.n_rows();
  if (size == 0 || size > n) {
    throw cli_error(ErrorCode::Usage,
                    "cannot draw " + std::to_string(size) + " rows from a table of " + std::to_string(n));
  }
  std::vector<RowId> picked;
  picked.reserve(size);
  for (RowId row = 0; row < n && picked.size() < size; ++row) {
    KeyedStream ks(Stream::Subsample, DrawKey{seed, replicate, size, 0, row});
    if (static_cast<double>(n - row) * ks.uniform() < static_cast<double>(size - picked.size())) picked.push_back(row);
  }
  const std::size_t src_rows = source.chunk_rows();
  return ChunkedTable::generate(source.schema(), size, std::move(options),
                                [&](std::size_t column, RowId begin, Chunk& chunk) {
                                  std::size_t i = 0;
                                  while (i < chunk.rows) {
                                    const std::size_t src_chunk = picked[begin + i] / src_rows;
                                    auto view = source.view(src_chunk, {column});
                                    const auto& s = view.column(0);
                                    for (; i < chunk.rows && picked[begin + i] < view.end(); ++i) {
                                      const std::size_t local = picked[begin + i] - view.begin();
                                      if (chunk.kind == StorageKind::Float64) {
                                        chunk.reals[i] = s.reals()[local];
                                      } else {
                                        chunk.ints[i] = s.ints()[local];
                                      }
                                      if (s.missing(local)) chunk.set_missing(i);
                                    }
                                  }
                                });
}

const char* to_string(Scenario scenario) noexcept {
  switch (scenario) {
    case Scenario::SampleSize: return "sample_size";
    case Scenario::VariableCount: return "variable_count";
    case Scenario::Missingness: return "missingness";
  }
  return "?";
}

Scenario scenario_from_string(const std::string& text) {
  if (text == "sample_size") return Scenario::SampleSize;
  if (text == "variable_count") return Scenario::VariableCount;
  if (text == "missingness") return Scenario::Missingness;
  throw cli_error(ErrorCode::Usage, "unknown scenario '" + text + "'");
}

namespace {

struct BenchContext {
  const BenchConfig& config;
  fs::path scratch;
  std::size_t run_counter = 0;

  void log(const std::string& line) const {
    if (config.log) {
      config.log(line);
    } else {
      std::cerr << line << '\n';
    }
  }

  TableOptions fresh_options(const std::string& name) {
    TableOptions o = config.table;
    o.spill_dir = scratch / (name + "_" + std::to_string(run_counter++));
    o.tracker = std::make_shared<MemoryTracker>();
    return o;
  }

  BenchRecord run(ChunkedTable& table, const Declarations& decl, const Formula& analysis, double x,
                  std::size_t point, std::size_t replicate, const GroundTruth* truth) {
    auto specs = parse_variable_types(decl, config.run.init);
    PlanOptions opts;
    for (const auto& [name, method] : config.plan.method_overrides) {
      if (std::any_of(decl.begin(), decl.end(), [&](const auto& d) { return d.first == name; })) {
        opts.method_overrides.emplace(name, method);
      }
    }
    if (config.plan.predictor_overrides && config.plan.predictor_overrides->size() == specs.size()) {
      opts.predictor_overrides = config.plan.predictor_overrides;
    }
    opts.order = config.plan.order;
    const auto plan = compile_plan(table, std::move(specs), analysis, opts);

    BenchRecord rec;
    rec.scenario = config.scenario;
    rec.x = x;
    rec.replicate = replicate;
    RunConfig rc = config.run;
    rc.seed = derived_seed(config.seed, 3, point, replicate);
    rc.emit_imputations.reset();
    if (truth) {
      rc.on_imputed = [&, user = config.run.on_imputed](std::size_t imputation, ChunkedTable& done) {
        rec.imputation_rmse.push_back(rmse(done, *truth));
        if (user) user(imputation, done);
      };
    }
    if (!rc.log) rc.log = [](const std::string&) {};
    const auto start = std::chrono::steady_clock::now();
    const auto result = mice_run(table, plan, rc);
    rec.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rec.peak_memory_bytes = result.stats.memory.peak_resident_bytes;
    if (truth) rec.rmse = mean_of(rec.imputation_rmse);
    log(std::string(to_string(config.scenario)) + " x=" + number(x) + " replicate " + std::to_string(replicate) +
        ": " + number(rec.runtime_seconds) + " s" + (rec.rmse ? ", rmse " + number(*rec.rmse) : std::string()));
    return rec;
  }
};

std::vector<std::size_t> variable_order(const std::vector<std::size_t>& missing, std::size_t replicate,
                                        std::uint64_t seed) {
  std::vector<std::size_t> order(missing.size());
  std::iota(order.begin(), order.end(), 0);
  if (replicate == 0) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return missing[a] < missing[b]; });
  } else if (replicate == 1) {
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return missing[a] > missing[b]; });
  } else {
    KeyedStream ks(Stream::Subsample, DrawKey{seed, replicate, 0, 0, 0}, 1);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[ks.below(i)]);
  }
  return order;
}

}  // namespace

std::vector<BenchRecord> run_benchmark(ChunkedTable& data, const Declarations& declarations, const Formula& analysis,
                                       const BenchConfig& config) {
  if (config.grid.empty()) throw cli_error(ErrorCode::Usage, "benchmark grid is empty");
  if (config.replicates == 0) throw cli_error(ErrorCode::Usage, "benchmark needs at least one replicate");
  if (config.scenario == Scenario::Missingness && config.target.empty()) {
    throw cli_error(ErrorCode::Usage, "missingness scenario needs a target variable");
  }
  const fs::path root = config.table.spill_dir.empty() ? data.spill_dir() / "bench" : config.table.spill_dir;
  BenchContext ctx{config, root};
  fs::create_directories(root);
  std::vector<BenchRecord> records;

  auto cleanup = [](const fs::path& dir) {
    std::error_code ec;
    fs::remove_all(dir, ec);
  };

  for (std::size_t point = 0; point < config.grid.size(); ++point) {
    const double x = config.grid[point];
    switch (config.scenario) {
      case Scenario::SampleSize: {
        if (!(x >= 2.0) || x > static_cast<double>(data.n_rows())) {
          ctx.log("skipping sample size " + number(x) + ": table has " + std::to_string(data.n_rows()) + " rows");
          break;
        }
        const auto size = static_cast<std::size_t>(x);
        for (std::size_t rep = 0; rep < config.replicates; ++rep) {
          auto opts = ctx.fresh_options("sample");
          const auto dir = opts.spill_dir;
          {
            auto sub = subsample_rows(data, size, config.seed, rep, opts);
            std::optional<GroundTruth> truth;
            if (!config.target.empty()) {
              try {
                truth = ampute_mcar(*sub, config.target, config.proportion, derived_seed(config.seed, 1, point, rep));
              } catch (const Error& e) {
                if (e.code() != ErrorCode::Amputation) throw;
                ctx.log("skipping sample size " + number(x) + ": " + e.what());
                break;
              }
            }
            records.push_back(ctx.run(*sub, declarations, analysis, x, point, rep, truth ? &*truth : nullptr));
          }
          cleanup(dir);
        }
        break;
      }
      case Scenario::Missingness: {
        for (std::size_t rep = 0; rep < config.replicates; ++rep) {
          auto opts = ctx.fresh_options("missing");
          const auto dir = opts.spill_dir;
          bool skipped = false;
          {
            auto work = data.clone(opts);
            std::optional<GroundTruth> truth;
            try {
              truth = ampute_mcar(*work, config.target, x, derived_seed(config.seed, 1, point, rep));
            } catch (const Error& e) {
              if (e.code() != ErrorCode::Amputation) throw;
              ctx.log("skipping proportion " + number(x) + ": " + e.what());
              skipped = true;
            }
            if (!skipped) records.push_back(ctx.run(*work, declarations, analysis, x, point, rep, &*truth));
          }
          cleanup(dir);
          if (skipped) break;
        }
        break;
      }
      case Scenario::VariableCount: {
        std::vector<std::pair<std::string, std::string>> pool;
        std::optional<std::pair<std::string, std::string>> response;
        for (const auto& d : declarations) {
          if (d.first == analysis.response) {
            response = d;
          } else {
            pool.push_back(d);
          }
        }
        if (!response) throw cli_error(ErrorCode::Usage, "analysis response '" + analysis.response + "' is not declared");
        const auto count = static_cast<std::size_t>(x);
        if (!(x >= 1.0) || count > pool.size()) {
          ctx.log("skipping variable count " + number(x) + ": " + std::to_string(pool.size()) + " candidates");
          break;
        }
        std::vector<std::size_t> missing;
        for (const auto& d : pool) missing.push_back(data.masked_count(data.column_index(d.first)));
        for (std::size_t rep = 0; rep < config.replicates; ++rep) {
          const auto order = variable_order(missing, rep, config.seed);
          Declarations decl{*response};
          for (std::size_t i = 0; i < count; ++i) decl.push_back(pool[order[i]]);
          Formula f = analysis;
          f.terms.clear();
          for (const auto& term : analysis.terms) {
            if (std::any_of(decl.begin(), decl.end(), [&](const auto& d) { return d.first == term; })) {
              f.terms.push_back(term);
            }
          }
          if (f.terms.empty()) f.terms.push_back(decl[1].first);
          auto opts = ctx.fresh_options("vars");
          const auto dir = opts.spill_dir;
          {
            auto work = data.clone(opts);
            records.push_back(ctx.run(*work, decl, f, x, point, rep, nullptr));
          }
          cleanup(dir);
        }
        break;
      }
    }
  }
  return records;
}

std::string bench_csv(const std::vector<BenchRecord>& records) {
  std::ostringstream out;
  out << "scenario,x,runtime_seconds,peak_memory_bytes,rmse,replicate\n";
  for (const auto& r : records) {
    out << to_string(r.scenario) << ',' << number(r.x) << ',' << number(r.runtime_seconds) << ','
        << r.peak_memory_bytes << ',' << (r.rmse ? number(*r.rmse) : std::string()) << ',' << r.replicate << '\n';
  }
  return out.str();
}

std::vector<BenchSummary> summarize(const std::vector<BenchRecord>& records) {
  std::vector<BenchSummary> rows;
  std::vector<std::vector<const BenchRecord*>> groups;
  for (const auto& r : records) {
    auto it = std::find_if(rows.begin(), rows.end(),
                           [&](const BenchSummary& s) { return s.scenario == r.scenario && s.x == r.x; });
    if (it == rows.end()) {
      rows.push_back(BenchSummary{r.scenario, r.x});
      groups.emplace_back();
      it = rows.end() - 1;
    }
    groups[static_cast<std::size_t>(it - rows.begin())].push_back(&r);
  }
  for (std::size_t g = 0; g < rows.size(); ++g) {
    std::vector<double> runtime;
    std::vector<double> memory;
    std::vector<double> quality;
    for (const auto* r : groups[g]) {
      runtime.push_back(r->runtime_seconds);
      memory.push_back(static_cast<double>(r->peak_memory_bytes));
      if (!r->imputation_rmse.empty()) {
        quality.insert(quality.end(), r->imputation_rmse.begin(), r->imputation_rmse.end());
      } else if (r->rmse) {
        quality.push_back(*r->rmse);
      }
    }
    auto& s = rows[g];
    s.runs = runtime.size();
    s.runtime_mean = mean_of(runtime);
    s.runtime_sd = sd_of(runtime);
    s.memory_mean = mean_of(memory);
    s.memory_sd = sd_of(memory);
    s.rmse_count = quality.size();
    s.rmse_mean = mean_of(quality);
    s.rmse_sd = sd_of(quality);
  }
  return rows;
}

std::string format_summary(const std::vector<BenchSummary>& rows) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-15s %12s %5s %22s %24s %22s\n", "scenario", "x", "runs", "runtime_s (mean +- sd)",
                "memory_MB (mean +- sd)", "rmse (mean +- sd)");
  out << line;
  for (const auto& s : rows) {
    char rmse_text[64] = "-";
    if (s.rmse_count > 0) std::snprintf(rmse_text, sizeof rmse_text, "%.4f +- %.4f", s.rmse_mean, s.rmse_sd);
    char runtime_text[64];
    std::snprintf(runtime_text, sizeof runtime_text, "%.3f +- %.3f", s.runtime_mean, s.runtime_sd);
    char memory_text[64];
    std::snprintf(memory_text, sizeof memory_text, "%.2f +- %.2f", s.memory_mean / 1048576.0, s.memory_sd / 1048576.0);
    std::snprintf(line, sizeof line, "%-15s %12s %5zu %22s %24s %22s\n", to_string(s.scenario), number(s.x).c_str(), s.runs,
                  runtime_text, memory_text, rmse_text);
    out << line;
  }
  return out.str();
}

}  // namespace oocmice
