#include <pybind11/pybind11.h>
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <atomic>
#include <filesystem>
#include <memory>
#include <random>

#include "oocmice/chunkstore.hpp"
#include "oocmice/engine.hpp"
#include "oocmice/error.hpp"
#include "oocmice/harness.hpp"
#include "oocmice/pool.hpp"
#include "oocmice/schema.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace oocmice;

namespace {

constexpr std::size_t kMiB = std::size_t{1} << 20;

// Owns a scratch directory when the caller gave none.
struct Table {
  std::unique_ptr<ChunkedTable> table;
  Declarations declarations;
  std::vector<std::size_t> header_order;
  fs::path scratch;

  ~Table() {
    table.reset();
    if (!scratch.empty()) {
      std::error_code ec;
      fs::remove_all(scratch, ec);
    }
  }
};

fs::path make_scratch(const std::optional<fs::path>& spill_dir, fs::path& owned) {
  if (spill_dir) {
    fs::create_directories(*spill_dir);
    return *spill_dir;
  }
  static std::atomic<unsigned> counter{0};
  std::random_device rd;
  owned = fs::temp_directory_path() /
          ("oocmice-py-" + std::to_string(rd()) + "-" + std::to_string(counter++));
  fs::create_directories(owned);
  return owned;
}

TableOptions table_options(std::size_t chunk_rows, std::size_t budget_mb, const fs::path& dir) {
  TableOptions o;
  o.chunk_rows = chunk_rows;
  o.cache_budget_bytes = budget_mb * kMiB;
  o.spill_dir = dir;
  o.tracker = std::make_shared<MemoryTracker>();
  return o;
}

Declarations to_declarations(const py::object& types) {
  if (py::isinstance<py::str>(types) || py::hasattr(types, "__fspath__")) {
    return read_declaration_file(py::cast<fs::path>(types));
  }
  Declarations out;
  if (py::isinstance<py::dict>(types)) {
    for (auto item : py::cast<py::dict>(types)) {
      out.emplace_back(py::cast<std::string>(item.first), py::cast<std::string>(item.second));
    }
    return out;
  }
  return py::cast<Declarations>(types);
}

std::unique_ptr<Table> read_csv(const fs::path& data, const py::object& types, std::size_t chunk_rows,
                                std::size_t memory_budget_mb, std::optional<fs::path> spill_dir) {
  auto t = std::make_unique<Table>();
  t->declarations = to_declarations(types);
  const auto dir = make_scratch(spill_dir, t->scratch);
  IngestOptions ingest;
  ingest.table = table_options(chunk_rows, memory_budget_mb, dir / "data");
  t->table = ChunkedTable::ingest_csv(data, storage_schema(parse_variable_types(t->declarations)), ingest);
  for (const auto& name : read_csv_header(data)) {
    if (auto c = t->table->find_column(name)) t->header_order.push_back(*c);
  }
  return t;
}

std::unique_ptr<Table> generate(std::size_t rows, std::size_t gaussian, double correlation,
                                std::vector<double> linear, double noise_sd, std::vector<double> logistic,
                                bool nominal, std::uint64_t seed, std::size_t chunk_rows,
                                std::size_t memory_budget_mb, std::optional<fs::path> spill_dir) {
  SyntheticSpec spec;
  spec.rows = rows;
  spec.gaussian = gaussian;
  spec.correlation = correlation;
  spec.linear_coef = std::move(linear);
  spec.noise_sd = noise_sd;
  spec.logistic_coef = std::move(logistic);
  spec.nominal = nominal;
  spec.seed = seed;
  auto t = std::make_unique<Table>();
  const auto dir = make_scratch(spill_dir, t->scratch);
  auto data = generate_synthetic(spec, table_options(chunk_rows, memory_budget_mb, dir / "data"));
  t->table = std::move(data.table);
  t->declarations = std::move(data.declarations);
  return t;
}

// Values as float64 with NaN in empty cells; categoricals come back as codes.
py::array_t<double> column_values(Table& t, const std::string& name) {
  const auto c = t.table->column_index(name);
  const auto values = t.table->read_column(c);
  const auto mask = t.table->read_mask(c);
  py::array_t<double> out(static_cast<py::ssize_t>(values.size()));
  auto w = out.mutable_unchecked<1>();
  for (std::size_t i = 0; i < values.size(); ++i) {
    w(static_cast<py::ssize_t>(i)) = mask[i] ? std::numeric_limits<double>::quiet_NaN() : values[i];
  }
  return out;
}

py::dict stats_dict(const RunStats& stats) {
  py::dict d;
  d["total_seconds"] = stats.total_seconds;
  d["imputation_seconds"] = stats.imputation_seconds;
  d["peak_resident_bytes"] = stats.memory.peak_resident_bytes;
  d["spill_events"] = stats.memory.spill_events;
  d["bytes_spilled"] = stats.memory.bytes_spilled;
  d["checkpoint_events"] = stats.memory.checkpoint_events;
  d["threads"] = stats.threads;
  return d;
}

struct ImputeResult {
  PooledResult pooled;
  std::vector<ParamEstimate> per_imputation;
  RunStats stats;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

ImputeResult impute(Table& t, const std::string& analysis, std::size_t m, std::size_t maxit,
                    std::optional<std::uint64_t> seed, std::size_t threads, bool checkpointing,
                    std::size_t checkpoint_frequency, const std::map<std::string, std::string>& methods,
                    const std::string& init, std::optional<fs::path> emit_dir) {
  const auto strategy = init == "memome" ? InitStrategy::Memome : InitStrategy::RandomSample;
  if (init != "memome" && init != "random") {
    throw Error("python", ErrorCode::Usage, "init must be 'random' or 'memome', got '" + init + "'");
  }
  PlanOptions popts;
  for (const auto& [name, method] : methods) popts.method_overrides[name] = method_from_string(method);
  const auto plan = compile_plan(*t.table, parse_variable_types(t.declarations, strategy),
                                 parse_formula(analysis), popts);

  RunConfig cfg;
  cfg.m = m;
  cfg.maxit = maxit;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.checkpointing = checkpointing;
  cfg.checkpoint_frequency = checkpoint_frequency;
  cfg.init = strategy;
  cfg.log = [](const std::string&) {};
  if (emit_dir) {
    fs::create_directories(*emit_dir);
    cfg.on_imputed = [dir = *emit_dir, order = t.header_order](std::size_t i, ChunkedTable& done) {
      done.export_csv(dir / ("imputation_" + std::to_string(i) + ".csv"), order);
    };
  }

  MiceResult r;
  {
    py::gil_scoped_release release;
    r = mice_run(*t.table, plan, cfg);
  }
  ImputeResult out;
  out.pooled = std::move(r.pooled);
  out.per_imputation = std::move(r.per_imputation);
  out.stats = std::move(r.stats);
  out.seed = r.seed;
  out.warnings = std::move(r.warnings);
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
  mod.doc() = "Chained-equation multiple imputation over disk-backed chunked tables";

  static py::exception<Error> error(mod, "OocmiceError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const auto msg = e.module() + ": " + to_string(e.code()) + " (" +
                       std::to_string(static_cast<int>(e.code())) + "): " + e.what();
      py::object inst = py::handle(error.ptr())(msg);
      inst.attr("module") = e.module();
      inst.attr("code") = static_cast<int>(e.code());
      PyErr_SetObject(error.ptr(), inst.ptr());
    }
  });

  py::class_<GroundTruth>(mod, "GroundTruth")
      .def_readonly("column", &GroundTruth::column)
      .def_readonly("rows", &GroundTruth::rows)
      .def_readonly("values", &GroundTruth::values)
      .def("save", [](const GroundTruth& g, const fs::path& p) { write_ground_truth(p, g); })
      .def_static("load", &read_ground_truth)
      .def("__len__", [](const GroundTruth& g) { return g.rows.size(); });

  py::class_<Table>(mod, "Table")
      .def_property_readonly("n_rows", [](Table& t) { return t.table->n_rows(); })
      .def_property_readonly("chunk_rows", [](Table& t) { return t.table->chunk_rows(); })
      .def_property_readonly("columns",
                             [](Table& t) {
                               std::vector<std::string> out;
                               for (const auto& c : t.table->schema()) out.push_back(c.name);
                               return out;
                             })
      .def_property_readonly("declarations", [](Table& t) { return t.declarations; })
      .def("categories", [](Table& t, const std::string& name) {
        return t.table->schema()[t.table->column_index(name)].categories;
      })
      .def("column", &column_values, py::arg("name"))
      .def("missing_count",
           [](Table& t, const std::string& name) { return t.table->masked_count(t.table->column_index(name)); })
      .def("ampute",
           [](Table& t, const std::string& column, double proportion, std::uint64_t seed) {
             return ampute_mcar(*t.table, column, proportion, seed);
           },
           py::arg("column"), py::arg("proportion"), py::arg("seed") = 1)
      .def("to_csv", [](Table& t, const fs::path& path) { t.table->export_csv(path, t.header_order); })
      .def("memory_stats", [](Table& t) {
        const auto s = t.table->memory_stats();
        py::dict d;
        d["peak_resident_bytes"] = s.peak_resident_bytes;
        d["spill_events"] = s.spill_events;
        d["bytes_spilled"] = s.bytes_spilled;
        d["checkpoint_events"] = s.checkpoint_events;
        d["memory_budget_bytes"] = t.table->cache_budget_bytes();
        d["max_chunk_bytes"] = t.table->max_chunk_bytes();
        return d;
      });

  mod.def("read_csv", &read_csv, py::arg("data"), py::arg("types"), py::arg("chunk_rows") = kDefaultChunkRows,
          py::arg("memory_budget_mb") = 1024, py::arg("spill_dir") = py::none());

  mod.def("generate", &generate, py::arg("rows") = 1000, py::arg("gaussian") = 3, py::arg("correlation") = 0.3,
          py::arg("linear") = std::vector<double>{}, py::arg("noise_sd") = 1.0,
          py::arg("logistic") = std::vector<double>{}, py::arg("nominal") = false, py::arg("seed") = 1,
          py::arg("chunk_rows") = kDefaultChunkRows, py::arg("memory_budget_mb") = 1024,
          py::arg("spill_dir") = py::none());

  py::class_<ParamEstimate>(mod, "ParamEstimate")
      .def(py::init([](std::vector<std::string> names, Eigen::VectorXd q_hat, Eigen::MatrixXd u) {
             return ParamEstimate{std::move(names), std::move(q_hat), std::move(u)};
           }),
           py::arg("names"), py::arg("q_hat"), py::arg("u"))
      .def_readonly("names", &ParamEstimate::names)
      .def_readonly("q_hat", &ParamEstimate::q_hat)
      .def_readonly("u", &ParamEstimate::u);

  py::class_<PooledResult>(mod, "PooledResult")
      .def_readonly("names", &PooledResult::names)
      .def_readonly("m", &PooledResult::m)
      .def_readonly("q_bar", &PooledResult::q_bar)
      .def_readonly("u_bar", &PooledResult::u_bar)
      .def_readonly("b", &PooledResult::b)
      .def_readonly("t", &PooledResult::t)
      .def_readonly("se", &PooledResult::se)
      .def_readonly("t_stat", &PooledResult::t_stat)
      .def_readonly("r", &PooledResult::r)
      .def_readonly("lambda_", &PooledResult::lambda)
      .def_readonly("df", &PooledResult::df)
      .def_readonly("between_defined", &PooledResult::between_defined)
      .def_readonly("warnings", &PooledResult::warnings);

  mod.def("pool", &pool_rubin, py::arg("estimates"));
  mod.def("pooled_diagnostics",
          [](double u_bar, double b, std::size_t m) {
            const auto d = pooled_diagnostics(u_bar, b, m);
            return py::make_tuple(d.r, d.lambda, d.df);
          },
          py::arg("u_bar"), py::arg("b"), py::arg("m"));

  py::class_<ImputeResult>(mod, "ImputeResult")
      .def_readonly("pooled", &ImputeResult::pooled)
      .def_readonly("per_imputation", &ImputeResult::per_imputation)
      .def_readonly("seed", &ImputeResult::seed)
      .def_readonly("warnings", &ImputeResult::warnings)
      .def_property_readonly("stats", [](const ImputeResult& r) { return stats_dict(r.stats); })
      .def("report", [](const ImputeResult& r, bool individual) {
        auto text = format_report(r.pooled, r.stats) + "Seed: " + std::to_string(r.seed) + "\n";
        if (individual) text += "\n" + format_individual(r.per_imputation);
        return text;
      }, py::arg("individual") = false)
      .def("to_json", [](const ImputeResult& r) { return to_json(r.pooled, r.stats); });

  mod.def("impute", &impute, py::arg("table"), py::arg("analysis"), py::arg("m") = 5, py::arg("maxit") = 5,
          py::arg("seed") = py::none(), py::arg("threads") = 1, py::arg("checkpointing") = true,
          py::arg("checkpoint_frequency") = 10, py::arg("methods") = std::map<std::string, std::string>{},
          py::arg("init") = "random", py::arg("emit_dir") = py::none());

  mod.def("rmse", py::overload_cast<const std::vector<double>&, const std::vector<double>&>(&oocmice::rmse),
          py::arg("imputed"), py::arg("truth"));
  mod.def("score", [](const fs::path& imputed_csv, const py::object& types, const GroundTruth& truth) {
    auto t = read_csv(imputed_csv, types, kDefaultChunkRows, 256, std::nullopt);
    return oocmice::rmse(*t->table, truth);
  }, py::arg("imputed_csv"), py::arg("types"), py::arg("truth"));
}
