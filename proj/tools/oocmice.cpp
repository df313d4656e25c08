// oocmice command-line tool: impute, ampute, score, generate, bench.

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oocmice/engine.hpp"
#include "oocmice/harness.hpp"
#include "oocmice/pool.hpp"
#include "oocmice/schema.hpp"

namespace fs = std::filesystem;
using namespace oocmice;

namespace {

constexpr std::size_t kMiB = std::size_t{1} << 20;

std::string one_line(std::string text) {
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

int report_error(const std::string& module, ErrorCode code, const std::string& what) {
  std::cerr << module << ": " << to_string(code) << " (" << static_cast<int>(code) << "): " << one_line(what) << '\n';
  return static_cast<int>(code);
}

/// Scratch directory for spill files, removed when the command ends.
class Scratch {
 public:
  explicit Scratch(const std::string& base) {
    const fs::path root = base.empty() ? fs::temp_directory_path() : fs::path(base);
    path_ = root / ("oocmice-" + std::to_string(::getpid()) + "-" + std::to_string(std::random_device{}()));
    fs::create_directories(path_);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  Scratch(const Scratch&) = delete;
  Scratch& operator=(const Scratch&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct StoreArgs {
  std::size_t budget_mb = 1024;
  std::size_t chunk_rows = kDefaultChunkRows;
  std::string spill_dir;

  void add(CLI::App* app) {
    app->add_option("--memory-budget-mb", budget_mb, "Chunk cache budget in MiB")->check(CLI::PositiveNumber);
    app->add_option("--chunk-rows", chunk_rows, "Rows per storage chunk")->check(CLI::PositiveNumber);
    app->add_option("--spill-dir", spill_dir, "Directory for spill and checkpoint files");
  }

  TableOptions table(const fs::path& dir) const {
    TableOptions o;
    o.chunk_rows = chunk_rows;
    o.cache_budget_bytes = budget_mb * kMiB;
    o.spill_dir = dir;
    o.tracker = std::make_shared<MemoryTracker>();
    return o;
  }
};

struct Loaded {
  std::unique_ptr<ChunkedTable> table;
  std::vector<VariableSpec> specs;
  /// Table columns in the order they appear in the CSV header.
  std::vector<std::size_t> header_order;
};

Loaded load(const std::string& data, const std::string& types, InitStrategy init, const TableOptions& opts) {
  Loaded out;
  out.specs = parse_variable_types(read_declaration_file(types), init);
  IngestOptions ingest;
  ingest.table = opts;
  out.table = ChunkedTable::ingest_csv(data, storage_schema(out.specs), ingest);
  for (const auto& name : read_csv_header(data)) {
    if (auto c = out.table->find_column(name)) out.header_order.push_back(*c);
  }
  return out;
}

std::map<std::string, Method> parse_method_overrides(const std::vector<std::string>& items) {
  std::map<std::string, Method> out;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == item.size()) {
      throw Error("cli", ErrorCode::Usage, "--method expects var=method, got '" + item + "'");
    }
    out[item.substr(0, eq)] = method_from_string(item.substr(eq + 1));
  }
  return out;
}

InitStrategy parse_init(const std::string& text) {
  return text == "memome" ? InitStrategy::Memome : InitStrategy::RandomSample;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw Error("cli", ErrorCode::Io, "cannot write " + path.string());
}

struct ImputeArgs {
  std::string data;
  std::string types;
  std::string analysis;
  std::size_t m = 5;
  std::size_t maxit = 5;
  std::optional<std::uint64_t> seed;
  StoreArgs store;
  bool no_checkpointing = false;
  std::size_t checkpoint_frequency = 10;
  std::string predictor_matrix;
  std::vector<std::string> methods;
  std::string init = "random";
  std::string emit;
  std::string report;
  std::string metrics;
  std::size_t threads = 1;
  bool show_individual = false;
  bool progress = false;
};

int run_impute(const ImputeArgs& a) {
  Scratch scratch(a.store.spill_dir);
  const auto init = parse_init(a.init);
  auto loaded = load(a.data, a.types, init, a.store.table(scratch.path() / "data"));
  auto& table = *loaded.table;

  PlanOptions popts;
  popts.method_overrides = parse_method_overrides(a.methods);
  if (!a.predictor_matrix.empty()) {
    std::vector<std::string> names;
    for (const auto& s : loaded.specs) names.push_back(s.name);
    popts.predictor_overrides = read_predictor_matrix_csv(a.predictor_matrix, names);
  }
  const auto plan = compile_plan(table, loaded.specs, parse_formula(a.analysis), popts);

  RunConfig cfg;
  cfg.m = a.m;
  cfg.maxit = a.maxit;
  cfg.seed = a.seed;
  cfg.checkpointing = !a.no_checkpointing;
  cfg.checkpoint_frequency = a.checkpoint_frequency;
  cfg.print_progress = a.progress;
  cfg.threads = a.threads;
  cfg.init = init;
  if (!a.emit.empty()) {
    const fs::path dir = a.emit;
    fs::create_directories(dir);
    cfg.on_imputed = [dir, order = loaded.header_order](std::size_t i, ChunkedTable& done) {
      done.export_csv(dir / ("imputation_" + std::to_string(i) + ".csv"), order);
    };
  }

  const auto result = mice_run(table, plan, cfg);

  std::string text = format_report(result.pooled, result.stats);
  text += "Seed: " + std::to_string(result.seed) + "\n";
  if (a.show_individual) text += "\n" + format_individual(result.per_imputation);
  std::cout << text;
  if (!a.report.empty()) write_text(a.report, text);

  if (!a.metrics.empty()) {
    const auto& mem = result.stats.memory;
    nlohmann::json j;
    j["total_seconds"] = result.stats.total_seconds;
    j["imputation_seconds"] = result.stats.imputation_seconds;
    j["peak_resident_bytes"] = mem.peak_resident_bytes;
    j["memory_budget_bytes"] = table.cache_budget_bytes();
    j["max_chunk_bytes"] = table.max_chunk_bytes();
    j["spill_events"] = mem.spill_events;
    j["bytes_spilled"] = mem.bytes_spilled;
    j["checkpoint_events"] = mem.checkpoint_events;
    j["threads"] = result.stats.threads;
    j["m"] = a.m;
    j["maxit"] = a.maxit;
    j["seed"] = result.seed;
    j["rows"] = table.n_rows();
    j["chunk_rows"] = table.chunk_rows();
    write_text(a.metrics, j.dump(2) + "\n");
  }
  return 0;
}

struct AmputeArgs {
  std::string data;
  std::string types;
  std::string column;
  double proportion = 0.5;
  std::uint64_t seed = 1;
  std::string out;
  std::string truth;
  StoreArgs store;
};

int run_ampute(const AmputeArgs& a) {
  Scratch scratch(a.store.spill_dir);
  auto loaded = load(a.data, a.types, InitStrategy::Memome, a.store.table(scratch.path() / "data"));
  const auto truth = ampute_mcar(*loaded.table, a.column, a.proportion, a.seed);
  loaded.table->export_csv(a.out, loaded.header_order);
  write_ground_truth(a.truth, truth);
  std::cout << "masked " << truth.rows.size() << " cells of " << a.column << '\n';
  return 0;
}

struct ScoreArgs {
  std::vector<std::string> imputed;
  std::string types;
  std::string truth;
  StoreArgs store;
};

int run_score(const ScoreArgs& a) {
  Scratch scratch(a.store.spill_dir);
  const auto truth = read_ground_truth(a.truth);
  double sum = 0.0;
  for (std::size_t i = 0; i < a.imputed.size(); ++i) {
    auto loaded = load(a.imputed[i], a.types, InitStrategy::Memome,
                       a.store.table(scratch.path() / ("t" + std::to_string(i))));
    const double r = rmse(*loaded.table, truth);
    sum += r;
    std::cout << a.imputed[i] << ": rmse=" << r << '\n';
  }
  std::cout << "mean rmse=" << sum / static_cast<double>(a.imputed.size()) << '\n';
  return 0;
}

struct SynthArgs {
  std::size_t rows = 1000;
  std::size_t gaussian = 3;
  double correlation = 0.3;
  std::vector<double> linear;
  double noise_sd = 1.0;
  std::vector<double> logistic;
  bool nominal = false;
  std::uint64_t seed = 1;

  void add(CLI::App* app, const std::string& seed_flag) {
    app->add_option("--rows", rows, "Rows to generate")->check(CLI::PositiveNumber);
    app->add_option("--gaussian", gaussian, "Gaussian columns x1..xk")->check(CLI::PositiveNumber);
    app->add_option("--correlation", correlation, "Equicorrelation of the gaussian block");
    app->add_option("--linear", linear, "Intercept and slopes of continuous y")->delimiter(',');
    app->add_option("--noise-sd", noise_sd, "Residual sd of y");
    app->add_option("--logistic", logistic, "Intercept and slopes of binary b")->delimiter(',');
    app->add_flag("--nominal", nominal, "Add a three-level nominal column g");
    app->add_option(seed_flag, seed, "Generator seed");
  }

  SyntheticSpec spec() const {
    SyntheticSpec s;
    s.rows = rows;
    s.gaussian = gaussian;
    s.correlation = correlation;
    s.linear_coef = linear;
    s.noise_sd = noise_sd;
    s.logistic_coef = logistic;
    s.nominal = nominal;
    s.seed = seed;
    return s;
  }
};

void write_declarations(const fs::path& path, const Declarations& decl) {
  std::string text;
  for (const auto& [name, type] : decl) text += name + "=" + type + "\n";
  write_text(path, text);
}

struct GenerateArgs {
  SynthArgs synth;
  std::string out;
  std::string types_out;
  StoreArgs store;
};

int run_generate(const GenerateArgs& a) {
  Scratch scratch(a.store.spill_dir);
  auto d = generate_synthetic(a.synth.spec(), a.store.table(scratch.path() / "data"));
  d.table->export_csv(a.out);
  if (!a.types_out.empty()) write_declarations(a.types_out, d.declarations);
  return 0;
}

struct BenchArgs {
  std::string scenario;
  std::vector<double> grid;
  std::size_t replicates = 5;
  std::string target;
  double proportion = 0.5;
  std::uint64_t seed = 1;
  std::string data;
  std::string types;
  std::string analysis;
  SynthArgs synth;
  std::vector<double> spread;
  std::size_t m = 5;
  std::size_t maxit = 5;
  std::size_t threads = 1;
  std::vector<std::string> methods;
  std::string init = "random";
  StoreArgs store;
  std::string out;
  std::string summary;
};

int run_bench(const BenchArgs& a) {
  Scratch scratch(a.store.spill_dir);
  std::unique_ptr<ChunkedTable> data;
  Declarations decl;
  if (!a.data.empty()) {
    if (a.types.empty()) throw Error("cli", ErrorCode::Usage, "--data needs --types");
    decl = read_declaration_file(a.types);
    IngestOptions ingest;
    ingest.table = a.store.table(scratch.path() / "data");
    data = ChunkedTable::ingest_csv(a.data, storage_schema(parse_variable_types(decl)), ingest);
  } else {
    auto d = generate_synthetic(a.synth.spec(), a.store.table(scratch.path() / "data"));
    data = std::move(d.table);
    decl = std::move(d.declarations);
  }
  if (!a.spread.empty()) {
    if (a.spread.size() != 2) throw Error("cli", ErrorCode::Usage, "--spread-missingness expects lo,hi");
    const std::size_t k = a.synth.gaussian;
    for (std::size_t j = 0; j < k && data->find_column("x" + std::to_string(j + 1)); ++j) {
      const double p = k == 1 ? a.spread[0] : a.spread[0] + (a.spread[1] - a.spread[0]) * static_cast<double>(j) / static_cast<double>(k - 1);
      ampute_mcar(*data, "x" + std::to_string(j + 1), p, a.seed + j);
    }
  }

  BenchConfig cfg;
  cfg.scenario = scenario_from_string(a.scenario);
  cfg.grid = a.grid;
  cfg.replicates = a.replicates;
  cfg.target = a.target;
  cfg.proportion = a.proportion;
  cfg.seed = a.seed;
  cfg.run.m = a.m;
  cfg.run.maxit = a.maxit;
  cfg.run.threads = a.threads;
  cfg.run.init = parse_init(a.init);
  cfg.run.log = [](const std::string&) {};
  cfg.plan.method_overrides = parse_method_overrides(a.methods);
  cfg.table = a.store.table(scratch.path() / "runs");
  cfg.log = [](const std::string& line) { std::cerr << line << '\n'; };

  const auto records = run_benchmark(*data, decl, parse_formula(a.analysis), cfg);
  const auto csv = bench_csv(records);
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_text(a.out, csv);
  }
  const auto text = format_summary(summarize(records));
  std::cerr << text;
  if (!a.summary.empty()) write_text(a.summary, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Out-of-core multiple imputation by chained equations"};
  app.require_subcommand(1);

  ImputeArgs imp;
  auto* impute = app.add_subcommand("impute", "Impute a CSV file and pool the analysis model");
  impute->add_option("--data", imp.data, "Input CSV")->required();
  impute->add_option("--types", imp.types, "Declaration file (name=Type per line)")->required();
  impute->add_option("--analysis", imp.analysis, "Analysis formula, e.g. \"y ~ a + b\"")->required();
  impute->add_option("--m", imp.m, "Number of imputations")->check(CLI::PositiveNumber);
  impute->add_option("--maxit", imp.maxit, "Iterations per imputation")->check(CLI::PositiveNumber);
  impute->add_option("--seed", imp.seed, "Random seed");
  imp.store.add(impute);
  impute->add_flag("--no-checkpointing", imp.no_checkpointing, "Never checkpoint the working tables");
  impute->add_option("--checkpoint-frequency", imp.checkpoint_frequency, "Variable updates between checkpoints")
      ->check(CLI::PositiveNumber);
  impute->add_option("--predictor-matrix", imp.predictor_matrix, "0/1 predictor matrix CSV");
  impute->add_option("--method", imp.methods, "Method override var=method (repeatable)");
  impute->add_option("--init", imp.init, "Initial fill")->check(CLI::IsMember({"random", "memome"}));
  impute->add_option("--emit-imputations", imp.emit, "Write each completed table as CSV into this directory");
  impute->add_option("--report", imp.report, "Also write the report to this file");
  impute->add_option("--metrics", imp.metrics, "Write run metrics (JSON) to this file");
  impute->add_option("--threads", imp.threads, "Imputations run concurrently")->check(CLI::PositiveNumber);
  impute->add_flag("--show-individual", imp.show_individual, "Print each imputation's estimates");
  impute->add_flag("--print-progress", imp.progress, "Log each iteration to stderr");

  AmputeArgs amp;
  auto* ampute = app.add_subcommand("ampute", "Mask observed cells of one column completely at random");
  ampute->add_option("--data", amp.data, "Input CSV")->required();
  ampute->add_option("--types", amp.types, "Declaration file")->required();
  ampute->add_option("--column", amp.column, "Column to ampute")->required();
  ampute->add_option("--proportion", amp.proportion, "Share of observed cells to mask")->required();
  ampute->add_option("--seed", amp.seed, "Selection seed");
  ampute->add_option("--out", amp.out, "Amputed CSV")->required();
  ampute->add_option("--truth", amp.truth, "Ground-truth file for scoring")->required();
  amp.store.add(ampute);

  ScoreArgs sc;
  auto* score = app.add_subcommand("score", "RMSE of imputed CSV files against a ground-truth file");
  score->add_option("--imputed", sc.imputed, "Imputed CSV files")->required();
  score->add_option("--types", sc.types, "Declaration file")->required();
  score->add_option("--truth", sc.truth, "Ground-truth file")->required();
  sc.store.add(score);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Write a synthetic data set");
  gen.synth.add(generate, "--seed");
  generate->add_option("--out", gen.out, "Output CSV")->required();
  generate->add_option("--types-out", gen.types_out, "Write a matching declaration file");
  gen.store.add(generate);

  BenchArgs bn;
  auto* bench = app.add_subcommand("bench", "Run a scaling or quality benchmark");
  bench->add_option("--scenario", bn.scenario, "sample_size, variable_count or missingness")->required();
  bench->add_option("--grid", bn.grid, "Grid values (comma separated)")->delimiter(',')->required();
  bench->add_option("--replicates", bn.replicates, "Runs per grid point")->check(CLI::PositiveNumber);
  bench->add_option("--target", bn.target, "Variable to ampute and score");
  bench->add_option("--proportion", bn.proportion, "Amputation share for sample_size runs");
  bench->add_option("--seed", bn.seed, "Benchmark seed");
  bench->add_option("--data", bn.data, "Input CSV (synthetic data when absent)");
  bench->add_option("--types", bn.types, "Declaration file for --data");
  bench->add_option("--analysis", bn.analysis, "Analysis formula")->required();
  bn.synth.add(bench, "--synthetic-seed");
  bench->add_option("--spread-missingness", bn.spread, "Ampute x1..xk with shares from lo to hi")->delimiter(',');
  bench->add_option("--m", bn.m, "Number of imputations")->check(CLI::PositiveNumber);
  bench->add_option("--maxit", bn.maxit, "Iterations per imputation")->check(CLI::PositiveNumber);
  bench->add_option("--threads", bn.threads, "Imputations run concurrently")->check(CLI::PositiveNumber);
  bench->add_option("--method", bn.methods, "Method override var=method (repeatable)");
  bench->add_option("--init", bn.init, "Initial fill")->check(CLI::IsMember({"random", "memome"}));
  bn.store.add(bench);
  bench->add_option("--out", bn.out, "Benchmark CSV (stdout when absent)");
  bench->add_option("--summary", bn.summary, "Write the mean/sd summary to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report_error("cli", ErrorCode::Usage, e.what());
  }

  try {
    if (*impute) return run_impute(imp);
    if (*ampute) return run_ampute(amp);
    if (*score) return run_score(sc);
    if (*generate) return run_generate(gen);
    if (*bench) return run_bench(bn);
  } catch (const Error& e) {
    return report_error(e.module(), e.code(), e.what());
  } catch (const std::exception& e) {
    std::cerr << "cli: internal: " << one_line(e.what()) << '\n';
    return 70;
  }
  return static_cast<int>(ErrorCode::Usage);
}
