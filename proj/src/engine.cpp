#include "oocmice/engine.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iostream>
#include <mutex>
#include <random>
#include <thread>

#include "oocmice/draws.hpp"
#include "oocmice/init.hpp"

namespace oocmice {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void emit_log(const RunConfig& config, const std::string& line) {
  if (config.log) {
    config.log(line);
  } else {
    std::cerr << line << '\n';
  }
}

FittedModel fit_for(ChunkedTable& table, const DesignSpec& design, Method method, const DrawKey& key,
                    const ForestParams& forest) {
  switch (method) {
    case Method::Linear: return fit_linear(table, design);
    case Method::Logistic: return fit_logistic(table, design);
    case Method::Multinomial: return fit_multinomial(table, design);
    case Method::RfRegressor: return fit_forest(table, design, ForestMode::Regressor, key, forest);
    case Method::RfClassifier: return fit_forest(table, design, ForestMode::Classifier, key, forest);
    case Method::None: break;
  }
  throw Error("engine", ErrorCode::Contract, "variable has no imputation method");
}

double residual_scale(const FittedModel& model) {
  if (const auto* lm = std::get_if<LinearModel>(&model)) return lm->sigma_hat;
  if (const auto* fm = std::get_if<ForestModel>(&model)) return fm->sigma_hat;
  return 0.0;
}

}  // namespace

void RunConfig::validate() const {
  if (m < 1) throw Error("engine", ErrorCode::Usage, "m must be at least 1");
  if (maxit < 1) throw Error("engine", ErrorCode::Usage, "maxit must be at least 1");
  if (checkpoint_frequency < 1) throw Error("engine", ErrorCode::Usage, "checkpoint frequency must be at least 1");
  if (threads < 1) throw Error("engine", ErrorCode::Usage, "threads must be at least 1");
}

bool impute_variable(ChunkedTable& table, const VariablePlan& plan, std::size_t j, ChainState& chain,
                     std::size_t iteration, const ForestParams& forest) {
  const auto& spec = plan.specs.at(j);
  if (spec.method == Method::None || plan.missing_counts[j] == 0) return false;
  const std::size_t column = plan.columns[j];
  const auto design = DesignSpec::make(table, column, plan.predictor_columns(j));
  const DrawKey model_key{chain.seed, chain.imputation, iteration, j, 0};

  FittedModel model;
  try {
    model = fit_for(table, design, spec.method, model_key, forest);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Separation) throw;
    chain.warnings.push_back("imputation " + std::to_string(chain.imputation) + ", iteration " +
                             std::to_string(iteration) + ": skipped '" + spec.name + "': " + e.what());
    return false;
  }

  const bool numeric = spec.method == Method::Linear || spec.method == Method::RfRegressor;
  const double sigma = residual_scale(model);
  const std::size_t width = prediction_width(model);
  const bool integer = table.schema()[column].kind != StorageKind::Float64;
  const auto scan = design.scan_columns();
  std::vector<double> features(design.feature_count);
  std::vector<double> out(width);
  std::vector<RowId> rows;
  std::vector<DrawKey> keys;
  std::vector<double> predictions;

  for (std::size_t c = 0; c < table.chunk_count(); ++c) {
    rows.clear();
    keys.clear();
    predictions.clear();
    {
      const auto view = table.view(c, scan);
      const auto& target = view.column(0);
      for (std::size_t i = 0; i < view.rows(); ++i) {
        if (!target.missing(i)) continue;
        encode_row(view, design, i, features);
        predict_row(model, features, out);
        const RowId row = view.begin() + i;
        rows.push_back(row);
        keys.push_back(DrawKey{chain.seed, chain.imputation, iteration, j, row});
        predictions.insert(predictions.end(), out.begin(), out.end());
      }
    }
    if (rows.empty()) continue;
    if (numeric) {
      const auto values = draw_continuous(predictions, sigma, keys, integer);
      if (integer) {
        std::vector<std::int64_t> ints(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) ints[i] = std::llround(values[i]);
        table.write_values(column, rows, ints);
      } else {
        table.write_values(column, rows, values);
      }
    } else {
      const auto codes = draw_categorical(predictions, width, keys);
      table.write_values(column, rows, codes);
    }
  }
  return true;
}

void run_iteration(ChunkedTable& table, const VariablePlan& plan, const RunConfig& config, ChainState& chain,
                   std::size_t iteration) {
  for (std::size_t j : plan.impute_order) {
    impute_variable(table, plan, j, chain, iteration, config.forest);
    ++chain.updates;
    if (config.checkpointing && chain.updates % config.checkpoint_frequency == 0) table.checkpoint();
  }
}

ParamEstimate fit_analysis(ChunkedTable& table, const VariablePlan& plan) {
  const auto& f = plan.analysis_formula;
  const std::size_t response = plan.columns[plan.spec_index(f.response)];
  std::vector<std::size_t> terms;
  for (const auto& t : f.terms) terms.push_back(plan.columns[plan.spec_index(t)]);
  const auto design = DesignSpec::make(table, response, terms);
  LogisticModel model;
  try {
    model = fit_logistic(table, design, RowFilter::All);
  } catch (const Error& e) {
    throw Error("engine", ErrorCode::Analysis, std::string("analysis model failed: ") + e.what());
  }
  ParamEstimate est;
  est.names = design.feature_names;
  est.q_hat = model.beta;
  est.u = model.cov;
  return est;
}

ImputationOutcome run_single_imputation(ChunkedTable& work, const VariablePlan& plan, const RunConfig& config,
                                        std::uint64_t seed, std::size_t imputation) {
  const auto start = Clock::now();
  ImputationOutcome outcome;
  ChainState chain;
  chain.seed = seed;
  chain.imputation = imputation;
  if (config.init == InitStrategy::RandomSample) {
    impute_with_random_samples(work, plan, seed, imputation);
  } else {
    impute_with_memome(work, plan);
  }
  for (std::size_t t = 1; t <= config.maxit; ++t) {
    if (config.print_progress) {
      emit_log(config, "imputation " + std::to_string(imputation) + "/" + std::to_string(config.m) + ", iteration " +
                           std::to_string(t) + "/" + std::to_string(config.maxit));
    }
    run_iteration(work, plan, config, chain, t);
  }
  if (config.on_imputed) config.on_imputed(imputation, work);
  outcome.estimate = fit_analysis(work, plan);
  outcome.warnings = std::move(chain.warnings);
  outcome.seconds = seconds_since(start);
  if (config.emit_imputations) outcome.token = work.checkpoint();
  return outcome;
}

MiceResult mice_run(ChunkedTable& source, const VariablePlan& plan, const RunConfig& config) {
  config.validate();
  MiceResult result;
  result.seed = config.seed ? *config.seed : (static_cast<std::uint64_t>(std::random_device{}()) << 32) ^
                                                  std::random_device{}();
  const std::size_t threads = std::min(config.threads, config.m);
  const std::size_t chunk = source.max_chunk_bytes();
  const std::size_t budget = source.cache_budget_bytes();
  if ((threads - 1) * chunk >= budget || (budget - (threads - 1) * chunk) / threads < chunk) {
    throw Error("engine", ErrorCode::Budget, "cache budget cannot hold one chunk per worker thread");
  }
  const std::size_t per_table = threads == 1 ? budget : (budget - (threads - 1) * chunk) / threads;

  const auto start = Clock::now();
  source.release_cache();
  std::vector<ImputationOutcome> outcomes(config.m);
  std::vector<std::exception_ptr> failures(config.m);
  std::mutex source_mutex;
  std::mutex callback_mutex;
  std::atomic<std::size_t> next{0};
  // Callbacks may come from several workers; serialize them.
  RunConfig serial = config;
  if (config.on_imputed) {
    serial.on_imputed = [&](std::size_t imputation, ChunkedTable& table) {
      std::lock_guard lock(callback_mutex);
      config.on_imputed(imputation, table);
    };
  }
  serial.log = [&](const std::string& line) {
    std::lock_guard lock(callback_mutex);
    emit_log(config, line);
  };

  auto worker = [&] {
    while (true) {
      const std::size_t index = next.fetch_add(1);
      if (index >= config.m) return;
      const std::size_t imputation = index + 1;
      const auto dir = config.emit_imputations ? *config.emit_imputations / ("imputation_" + std::to_string(imputation))
                                               : source.spill_dir() / ("imputation_" + std::to_string(imputation));
      try {
        std::unique_ptr<ChunkedTable> work;
        TableOptions opts;
        opts.chunk_rows = source.chunk_rows();
        opts.cache_budget_bytes = per_table;
        opts.spill_dir = dir;
        opts.tracker = source.tracker();
        {
          std::lock_guard lock(source_mutex);
          work = source.clone(opts);
          source.release_cache();
        }
        outcomes[index] = run_single_imputation(*work, plan, serial, result.seed, imputation);
        if (!config.emit_imputations) {
          work.reset();
          std::error_code ec;
          std::filesystem::remove_all(dir, ec);
        }
      } catch (...) {
        failures[index] = std::current_exception();
        if (!config.emit_imputations) {
          std::error_code ec;
          std::filesystem::remove_all(dir, ec);
        }
      }
    }
  };

  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < config.m; ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const Error& e) {
      throw Error(e.module(), e.code(), "imputation " + std::to_string(i + 1) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error("engine", ErrorCode::Imputation, "imputation " + std::to_string(i + 1) + ": " + e.what());
    }
  }

  for (auto& o : outcomes) {
    result.per_imputation.push_back(o.estimate);
    result.stats.imputation_seconds.push_back(o.seconds);
    if (o.token) result.imputation_tokens.push_back(*o.token);
    for (auto& w : o.warnings) result.warnings.push_back(std::move(w));
  }
  result.pooled = pool_rubin(result.per_imputation);
  for (const auto& w : result.pooled.warnings) result.warnings.push_back(w);
  result.stats.total_seconds = seconds_since(start);
  result.stats.memory = source.memory_stats();
  result.stats.threads = threads;
  for (const auto& w : result.warnings) emit_log(config, "warning: " + w);
  return result;
}

}  // namespace oocmice
