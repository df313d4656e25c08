#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "oocmice/chunkstore.hpp"

namespace oocmice {

enum class VarType : std::uint8_t {
  ContinuousFloat,
  ContinuousInt,
  Binary,
  Nominal,
  Ordinal,
  Code,
  String,
  DateTime,
};

enum class Method : std::uint8_t { Linear, Logistic, Multinomial, RfRegressor, RfClassifier, None };

enum class InitMethod : std::uint8_t { Mean, Median, Mode, RandomSample, None };

/// Which initializer fills masked cells before the first sweep.
enum class InitStrategy : std::uint8_t { RandomSample, Memome };

enum class OrderPolicy : std::uint8_t { Schema, AscendingMissingness };

inline constexpr VarType kAllVarTypes[] = {VarType::ContinuousFloat, VarType::ContinuousInt, VarType::Binary,
                                           VarType::Nominal,         VarType::Ordinal,       VarType::Code,
                                           VarType::String,          VarType::DateTime};

const char* to_string(VarType type) noexcept;
const char* to_string(Method method) noexcept;
const char* to_string(InitMethod method) noexcept;
VarType var_type_from_string(const std::string& text);
Method method_from_string(const std::string& text);

bool is_imputable(VarType type) noexcept;
bool is_categorical(VarType type) noexcept;
/// Column storage a variable of this type is ingested as.
StorageKind storage_kind_for(VarType type) noexcept;
/// Dictionary initializer: mode for Binary/Nominal/Ordinal, median for
/// Continuous_int, mean for Continuous_float, none otherwise.
InitMethod default_init_for(VarType type) noexcept;
Method default_method_for(VarType type);

struct VariableSpec {
  std::string name;
  VarType var_type = VarType::ContinuousFloat;
  Method method = Method::Linear;
  InitMethod init_method = InitMethod::Mean;

  bool operator==(const VariableSpec&) const = default;
};

using Declarations = std::vector<std::pair<std::string, std::string>>;

std::vector<VariableSpec> parse_variable_types(const Declarations& decl,
                                               InitStrategy strategy = InitStrategy::Memome);

/// `name=Type` per line; blank lines and lines starting with '#' are skipped.
Declarations read_declaration_file(const std::filesystem::path& path);
std::vector<ColumnDecl> storage_schema(const std::vector<VariableSpec>& specs);

/// Square 0/1 matrix; row j lists the predictors of variable j.
class PredictorMatrix {
 public:
  PredictorMatrix() = default;
  explicit PredictorMatrix(std::size_t p) : p_(p), cells_(p * p, 0) {}

  std::size_t size() const noexcept { return p_; }
  std::uint8_t operator()(std::size_t row, std::size_t col) const { return cells_.at(row * p_ + col); }
  std::uint8_t& operator()(std::size_t row, std::size_t col) { return cells_.at(row * p_ + col); }
  bool operator==(const PredictorMatrix&) const = default;

 private:
  std::size_t p_ = 0;
  std::vector<std::uint8_t> cells_;
};

PredictorMatrix build_predictor_matrix(std::size_t p, const std::optional<PredictorMatrix>& overrides = {});

/// Reads a 0/1 CSV with a header row of variable names and a leading index
/// column, reordered to `names`.
PredictorMatrix read_predictor_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& names);

struct Formula {
  std::string response;
  std::vector<std::string> terms;
  bool intercept = true;

  std::string format() const;
  bool operator==(const Formula&) const = default;
};

/// Grammar: response "~" term ("+" term)*, identifiers [A-Za-z0-9_.]+.
Formula parse_formula(const std::string& text);

struct PlanOptions {
  std::optional<PredictorMatrix> predictor_overrides;
  std::map<std::string, Method> method_overrides;
  OrderPolicy order = OrderPolicy::Schema;
};

/// Compiled, immutable imputation plan bound to one table schema.
struct VariablePlan {
  std::vector<VariableSpec> specs;
  PredictorMatrix predictor_matrix;
  /// Indices into specs of the variables the chained loop visits.
  std::vector<std::size_t> impute_order;
  Formula analysis_formula;

  /// Table column of each spec.
  std::vector<std::size_t> columns;
  /// Originally-missing cell count of each spec.
  std::vector<std::size_t> missing_counts;
  /// Dictionary size of each categorical spec (0 for numeric).
  std::vector<std::size_t> levels;

  /// Table columns feeding variable j's model: predictor-matrix row j minus
  /// variables that are never modeled.
  std::vector<std::size_t> predictor_columns(std::size_t j) const;
  std::size_t spec_index(const std::string& name) const;
};

VariablePlan compile_plan(ChunkedTable& table, std::vector<VariableSpec> specs, const Formula& analysis,
                          const PlanOptions& options = {});

}  // namespace oocmice
