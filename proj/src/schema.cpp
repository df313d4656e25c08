#include "oocmice/schema.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>

#include "csv.hpp"

namespace oocmice {

namespace {

Error decl_error(const std::string& what) { return Error("schema", ErrorCode::Declaration, what); }
Error plan_error(const std::string& what) { return Error("schema", ErrorCode::Plan, what); }

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool numeric_target(Method m) { return m == Method::Linear || m == Method::RfRegressor; }

}  // namespace

const char* to_string(VarType type) noexcept {
  switch (type) {
    case VarType::ContinuousFloat: return "Continuous_float";
    case VarType::ContinuousInt: return "Continuous_int";
    case VarType::Binary: return "Binary";
    case VarType::Nominal: return "Nominal";
    case VarType::Ordinal: return "Ordinal";
    case VarType::Code: return "Code";
    case VarType::String: return "String";
    case VarType::DateTime: return "DateTime";
  }
  return "?";
}

const char* to_string(Method method) noexcept {
  switch (method) {
    case Method::Linear: return "linear";
    case Method::Logistic: return "logistic";
    case Method::Multinomial: return "multinomial";
    case Method::RfRegressor: return "rf_regressor";
    case Method::RfClassifier: return "rf_classifier";
    case Method::None: return "none";
  }
  return "?";
}

const char* to_string(InitMethod method) noexcept {
  switch (method) {
    case InitMethod::Mean: return "mean";
    case InitMethod::Median: return "median";
    case InitMethod::Mode: return "mode";
    case InitMethod::RandomSample: return "random_sample";
    case InitMethod::None: return "none";
  }
  return "?";
}

VarType var_type_from_string(const std::string& text) {
  for (VarType t : kAllVarTypes) {
    if (text == to_string(t)) return t;
  }
  throw decl_error("unknown variable type '" + text + "'");
}

Method method_from_string(const std::string& text) {
  for (Method m : {Method::Linear, Method::Logistic, Method::Multinomial, Method::RfRegressor, Method::RfClassifier,
                   Method::None}) {
    if (text == to_string(m)) return m;
  }
  throw decl_error("unknown imputation method '" + text + "'");
}

bool is_imputable(VarType type) noexcept {
  return type != VarType::Code && type != VarType::String && type != VarType::DateTime;
}

bool is_categorical(VarType type) noexcept {
  return type == VarType::Binary || type == VarType::Nominal || type == VarType::Ordinal;
}

StorageKind storage_kind_for(VarType type) noexcept {
  switch (type) {
    case VarType::ContinuousFloat: return StorageKind::Float64;
    case VarType::ContinuousInt: return StorageKind::Int64;
    default: return StorageKind::Category;
  }
}

InitMethod default_init_for(VarType type) noexcept {
  switch (type) {
    case VarType::ContinuousFloat: return InitMethod::Mean;
    case VarType::ContinuousInt: return InitMethod::Median;
    case VarType::Binary:
    case VarType::Nominal:
    case VarType::Ordinal: return InitMethod::Mode;
    default: return InitMethod::None;
  }
}

Method default_method_for(VarType type) {
  switch (type) {
    case VarType::ContinuousFloat:
    case VarType::ContinuousInt: return Method::Linear;
    case VarType::Binary: return Method::Logistic;
    case VarType::Nominal: return Method::Multinomial;
    case VarType::Ordinal: return Method::RfClassifier;
    default: throw decl_error(std::string("type ") + to_string(type) + " is not imputable");
  }
}

std::vector<VariableSpec> parse_variable_types(const Declarations& decl, InitStrategy strategy) {
  std::vector<VariableSpec> specs;
  specs.reserve(decl.size());
  std::set<std::string> seen;
  for (const auto& [name, type_name] : decl) {
    if (!seen.insert(name).second) throw decl_error("variable '" + name + "' declared twice");
    VarType type;
    try {
      type = var_type_from_string(type_name);
    } catch (const Error&) {
      throw decl_error("variable '" + name + "' has unknown type '" + type_name + "'");
    }
    VariableSpec s;
    s.name = name;
    s.var_type = type;
    s.method = is_imputable(type) ? default_method_for(type) : Method::None;
    s.init_method = default_init_for(type);
    if (strategy == InitStrategy::RandomSample && is_imputable(type)) s.init_method = InitMethod::RandomSample;
    specs.push_back(std::move(s));
  }
  return specs;
}

Declarations read_declaration_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("schema", ErrorCode::Io, "cannot open declaration file " + path.string());
  Declarations out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw decl_error("line " + std::to_string(lineno) + " of " + path.string() + " is not name=Type");
    }
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

std::vector<ColumnDecl> storage_schema(const std::vector<VariableSpec>& specs) {
  std::vector<ColumnDecl> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back({s.name, storage_kind_for(s.var_type)});
  return out;
}

PredictorMatrix build_predictor_matrix(std::size_t p, const std::optional<PredictorMatrix>& overrides) {
  if (overrides) {
    if (overrides->size() != p) {
      throw plan_error("predictor matrix is " + std::to_string(overrides->size()) + "x" +
                       std::to_string(overrides->size()) + ", expected " + std::to_string(p) + "x" +
                       std::to_string(p));
    }
    for (std::size_t i = 0; i < p; ++i) {
      if ((*overrides)(i, i) != 0) throw plan_error("predictor matrix diagonal must be zero (row " + std::to_string(i) + ")");
      for (std::size_t j = 0; j < p; ++j) {
        if ((*overrides)(i, j) > 1) throw plan_error("predictor matrix entries must be 0 or 1");
      }
    }
    return *overrides;
  }
  PredictorMatrix m(p);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) m(i, j) = i == j ? 0 : 1;
  }
  return m;
}

PredictorMatrix read_predictor_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& names) {
  CsvReader reader(path);
  std::vector<std::string> header;
  if (!reader.next(header) || header.size() < 2) throw plan_error("predictor matrix file lacks a header row");
  std::vector<std::string> col_names(header.begin() + 1, header.end());
  for (auto& n : col_names) n = trim(n);
  auto position = [&](const std::vector<std::string>& list, const std::string& name) {
    auto it = std::find(list.begin(), list.end(), name);
    if (it == list.end()) throw plan_error("predictor matrix does not mention variable '" + name + "'");
    return static_cast<std::size_t>(it - list.begin());
  };
  std::map<std::string, std::vector<std::uint8_t>> rows;
  std::vector<std::string> record;
  while (reader.next(record)) {
    if (record.size() == 1 && trim(record[0]).empty()) continue;
    if (record.size() != header.size()) throw plan_error("predictor matrix row has wrong field count");
    std::vector<std::uint8_t> vals;
    for (std::size_t i = 1; i < record.size(); ++i) {
      const std::string cell = trim(record[i]);
      if (cell != "0" && cell != "1") throw plan_error("predictor matrix entries must be 0 or 1, got '" + cell + "'");
      vals.push_back(cell == "1" ? 1 : 0);
    }
    rows[trim(record[0])] = std::move(vals);
  }
  PredictorMatrix m(names.size());
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto it = rows.find(names[i]);
    if (it == rows.end()) throw plan_error("predictor matrix lacks a row for '" + names[i] + "'");
    for (std::size_t j = 0; j < names.size(); ++j) m(i, j) = it->second[position(col_names, names[j])];
  }
  return m;
}

std::string Formula::format() const {
  std::string out = response + " ~ ";
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (i) out += " + ";
    out += terms[i];
  }
  return out;
}

Formula parse_formula(const std::string& text) {
  auto fail = [&](std::size_t offset, const std::string& what) {
    return Error("schema", ErrorCode::FormulaParse,
                 "formula parse error at byte " + std::to_string(offset) + ": " + what);
  };
  auto is_ident = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
  };
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  auto identifier = [&](const char* what) {
    skip_ws();
    const std::size_t start = pos;
    while (pos < text.size() && is_ident(text[pos])) ++pos;
    if (pos == start) throw fail(start, std::string("expected ") + what);
    return text.substr(start, pos - start);
  };

  Formula f;
  f.response = identifier("response name");
  skip_ws();
  if (pos >= text.size() || text[pos] != '~') throw fail(pos, "expected '~'");
  ++pos;
  std::set<std::string> seen;
  while (true) {
    skip_ws();
    const std::size_t start = pos;
    std::string term = identifier("term");
    if (term == f.response) throw fail(start, "response '" + term + "' repeated as a term");
    if (!seen.insert(term).second) throw fail(start, "duplicate term '" + term + "'");
    f.terms.push_back(std::move(term));
    skip_ws();
    if (pos == text.size()) break;
    if (text[pos] != '+') throw fail(pos, "expected '+' or end of formula");
    ++pos;
  }
  return f;
}

std::vector<std::size_t> VariablePlan::predictor_columns(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (k == j || predictor_matrix(j, k) == 0) continue;
    if (!is_imputable(specs[k].var_type)) continue;
    out.push_back(columns[k]);
  }
  return out;
}

std::size_t VariablePlan::spec_index(const std::string& name) const {
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name) return i;
  }
  throw Error("schema", ErrorCode::Plan, "no variable named '" + name + "'");
}

VariablePlan compile_plan(ChunkedTable& table, std::vector<VariableSpec> specs, const Formula& analysis,
                          const PlanOptions& options) {
  VariablePlan plan;
  const std::size_t p = specs.size();
  for (const auto& [name, method] : options.method_overrides) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](const VariableSpec& s) { return s.name == name; });
    if (it == specs.end()) throw plan_error("method override for undeclared variable '" + name + "'");
    if (!is_imputable(it->var_type) && method != Method::None) {
      throw decl_error("variable '" + name + "' of type " + to_string(it->var_type) + " cannot be imputed");
    }
    if (is_imputable(it->var_type) && method == Method::None) {
      throw plan_error("variable '" + name + "' is imputable and cannot use method none");
    }
    it->method = method;
  }

  plan.columns.resize(p);
  plan.levels.assign(p, 0);
  plan.missing_counts.assign(p, 0);
  for (std::size_t j = 0; j < p; ++j) {
    auto& s = specs[j];
    const std::size_t col = table.column_index(s.name);
    plan.columns[j] = col;
    const auto& desc = table.schema()[col];
    if (is_imputable(s.var_type) && desc.kind != storage_kind_for(s.var_type)) {
      throw Error("schema", ErrorCode::Schema, "column '" + s.name + "' is stored as " + to_string(desc.kind) +
                                                    " but declared " + to_string(s.var_type));
    }
    if ((s.method == Method::None) != !is_imputable(s.var_type)) {
      throw plan_error("variable '" + s.name + "': method none is reserved for non-imputable types");
    }
    if (desc.kind == StorageKind::Category) plan.levels[j] = desc.categories.size();
    if (!is_imputable(s.var_type)) continue;

    const std::size_t k = plan.levels[j];
    if (s.var_type == VarType::Binary && k != 2) {
      throw plan_error("binary variable '" + s.name + "' has " + std::to_string(k) + " observed categories");
    }
    const bool overridden = options.method_overrides.contains(s.name);
    if (!overridden && s.method == Method::Multinomial && k < 3) s.method = Method::Logistic;
    if (numeric_target(s.method) && desc.kind == StorageKind::Category) {
      throw plan_error("variable '" + s.name + "' is categorical; method " + to_string(s.method) + " needs a numeric target");
    }
    if (!numeric_target(s.method) && desc.kind != StorageKind::Category) {
      throw plan_error("variable '" + s.name + "' is numeric; method " + to_string(s.method) + " needs a categorical target");
    }
    if (s.method == Method::Logistic && k > 2) {
      throw plan_error("variable '" + s.name + "' has " + std::to_string(k) + " levels; logistic needs 2");
    }
    if (s.method == Method::Multinomial && k < 3) {
      throw plan_error("variable '" + s.name + "' has " + std::to_string(k) + " levels; multinomial needs at least 3");
    }
    plan.missing_counts[j] = table.masked_count(col);
    if (plan.missing_counts[j] == table.n_rows() && table.n_rows() > 0) {
      throw Error("schema", ErrorCode::AllMissing, "variable '" + s.name + "' has no observed values");
    }
  }

  plan.predictor_matrix = build_predictor_matrix(p, options.predictor_overrides);
  for (std::size_t j = 0; j < p; ++j) {
    if (specs[j].method != Method::None && plan.missing_counts[j] > 0) plan.impute_order.push_back(j);
  }
  if (options.order == OrderPolicy::AscendingMissingness) {
    std::stable_sort(plan.impute_order.begin(), plan.impute_order.end(),
                     [&](std::size_t a, std::size_t b) { return plan.missing_counts[a] < plan.missing_counts[b]; });
  }

  auto find_spec = [&](const std::string& name) -> std::size_t {
    for (std::size_t j = 0; j < p; ++j) {
      if (specs[j].name == name) return j;
    }
    throw Error("schema", ErrorCode::Analysis, "analysis formula names undeclared variable '" + name + "'");
  };
  const std::size_t response = find_spec(analysis.response);
  if (!is_categorical(specs[response].var_type) || plan.levels[response] != 2) {
    throw Error("schema", ErrorCode::Analysis,
                "analysis response '" + analysis.response + "' must be a categorical variable with two levels");
  }
  for (const auto& term : analysis.terms) {
    const std::size_t j = find_spec(term);
    if (!is_imputable(specs[j].var_type)) {
      throw Error("schema", ErrorCode::Analysis, "analysis term '" + term + "' has non-modelable type " +
                                                     to_string(specs[j].var_type));
    }
  }
  plan.analysis_formula = analysis;
  plan.specs = std::move(specs);
  return plan;
}

}  // namespace oocmice
