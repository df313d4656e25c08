#include "doctest.h"
#include "oocmice/schema.hpp"
#include "test_support.hpp"

using namespace oocmice;
using oocmice::testing::TempDir;
using oocmice::testing::error_code_of;
using oocmice::testing::table_options;
using oocmice::testing::write_file;

namespace {

std::unique_ptr<ChunkedTable> ingest(const TempDir& dir, const std::string& csv, const std::vector<VariableSpec>& specs) {
  IngestOptions opt;
  opt.table = table_options(dir, 4);
  return ChunkedTable::ingest_csv(write_file(dir / "d.csv", csv), storage_schema(specs), opt);
}

const char* kCsv =
    "age,bmi,sex,race,grade,id,note,when\n"
    "40,22.5,m,w,low,1,a,2020\n"
    "NA,25.0,f,b,mid,2,b,2021\n"
    "35,NA,f,a,high,3,c,2022\n"
    "52,30.1,NA,w,NA,4,d,2023\n"
    "61,27.3,m,NA,low,5,e,2024\n";

Declarations kDecl = {{"age", "Continuous_int"}, {"bmi", "Continuous_float"}, {"sex", "Binary"},
                      {"race", "Nominal"},       {"grade", "Ordinal"},        {"id", "Code"},
                      {"note", "String"},        {"when", "DateTime"}};

}  // namespace

TEST_CASE("type dictionary covers all eight types") {
  for (VarType t : kAllVarTypes) {
    CHECK(var_type_from_string(to_string(t)) == t);
    const bool imputable = is_imputable(t);
    CHECK(imputable == (default_init_for(t) != InitMethod::None));
    if (imputable) {
      const Method m = default_method_for(t);
      CHECK(m != Method::None);
      CHECK((m == Method::Linear || m == Method::RfRegressor) == !is_categorical(t));
    } else {
      CHECK(error_code_of([&] { default_method_for(t); }) == ErrorCode::Declaration);
    }
  }
  CHECK(default_method_for(VarType::Binary) == Method::Logistic);
  CHECK(default_method_for(VarType::Nominal) == Method::Multinomial);
  CHECK(default_method_for(VarType::Ordinal) == Method::RfClassifier);
  CHECK(default_init_for(VarType::ContinuousInt) == InitMethod::Median);
  CHECK(default_init_for(VarType::ContinuousFloat) == InitMethod::Mean);
  CHECK(storage_kind_for(VarType::ContinuousInt) == StorageKind::Int64);
  CHECK(storage_kind_for(VarType::String) == StorageKind::Category);
}

TEST_CASE("declarations resolve to specs") {
  auto specs = parse_variable_types(kDecl);
  REQUIRE(specs.size() == 8);
  CHECK(specs[0] == VariableSpec{"age", VarType::ContinuousInt, Method::Linear, InitMethod::Median});
  CHECK(specs[5].method == Method::None);
  CHECK(specs[5].init_method == InitMethod::None);
  auto random = parse_variable_types(kDecl, InitStrategy::RandomSample);
  CHECK(random[2].init_method == InitMethod::RandomSample);
  CHECK(random[6].init_method == InitMethod::None);
  CHECK(error_code_of([] { parse_variable_types({{"a", "Float"}}); }) == ErrorCode::Declaration);
  CHECK(error_code_of([] { parse_variable_types({{"a", "Binary"}, {"a", "Binary"}}); }) == ErrorCode::Declaration);
}

TEST_CASE("declaration file parsing") {
  TempDir dir;
  auto path = write_file(dir / "t.txt", "# types\nage = Continuous_int\n\nsex=Binary\n");
  CHECK(read_declaration_file(path) == Declarations{{"age", "Continuous_int"}, {"sex", "Binary"}});
  write_file(dir / "bad.txt", "age Continuous_int\n");
  CHECK(error_code_of([&] { read_declaration_file(dir / "bad.txt"); }) == ErrorCode::Declaration);
  CHECK(error_code_of([&] { read_declaration_file(dir / "none.txt"); }) == ErrorCode::Io);
}

TEST_CASE("formula grammar") {
  auto f = parse_formula("sex ~ age + bmi+race");
  CHECK(f.response == "sex");
  CHECK(f.terms == std::vector<std::string>{"age", "bmi", "race"});
  CHECK(f.format() == "sex ~ age + bmi + race");
  CHECK(parse_formula(f.format()) == f);
  for (const char* bad : {"sex age", "~ age", "sex ~", "sex ~ age +", "sex ~ age + age", "sex ~ sex", "sex ~ a-b"}) {
    CHECK(error_code_of([&] { parse_formula(bad); }) == ErrorCode::FormulaParse);
  }
  try {
    parse_formula("y ~ a $");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("byte 6") != std::string::npos);
  }
}

TEST_CASE("predictor matrix defaults and validation") {
  auto m = build_predictor_matrix(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(m(i, j) == (i == j ? 0 : 1));
  }
  PredictorMatrix bad(3);
  bad(1, 1) = 1;
  CHECK(error_code_of([&] { build_predictor_matrix(3, bad); }) == ErrorCode::Plan);
  CHECK(error_code_of([&] { build_predictor_matrix(2, PredictorMatrix(3)); }) == ErrorCode::Plan);

  TempDir dir;
  auto path = write_file(dir / "pm.csv", ",b,a\na,1,0\nb,0,0\n");
  auto read = read_predictor_matrix_csv(path, {"a", "b"});
  CHECK(read(0, 1) == 1);
  CHECK(read(1, 0) == 0);
  write_file(dir / "pm2.csv", ",a,b\na,0,2\nb,0,0\n");
  CHECK(error_code_of([&] { read_predictor_matrix_csv(dir / "pm2.csv", {"a", "b"}); }) == ErrorCode::Plan);
}

TEST_CASE("plan compilation") {
  TempDir dir;
  auto specs = parse_variable_types(kDecl);
  auto t = ingest(dir, kCsv, specs);
  auto plan = compile_plan(*t, specs, parse_formula("sex ~ age + bmi + race"));
  CHECK(plan.missing_counts == std::vector<std::size_t>{1, 1, 1, 1, 1, 0, 0, 0});
  CHECK(plan.impute_order == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(plan.levels[3] == 3);
  CHECK(plan.specs[3].method == Method::Multinomial);
  // Predictors exclude self and the non-imputable columns.
  CHECK(plan.predictor_columns(0) == std::vector<std::size_t>{1, 2, 3, 4});

  PlanOptions opt;
  opt.method_overrides["bmi"] = Method::RfRegressor;
  opt.order = OrderPolicy::AscendingMissingness;
  auto p2 = compile_plan(*t, specs, parse_formula("sex ~ age"), opt);
  CHECK(p2.specs[1].method == Method::RfRegressor);

  PlanOptions wrong;
  wrong.method_overrides["bmi"] = Method::Logistic;
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("sex ~ age"), wrong); }) == ErrorCode::Plan);
  PlanOptions none;
  none.method_overrides["age"] = Method::None;
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("sex ~ age"), none); }) == ErrorCode::Plan);
  PlanOptions code;
  code.method_overrides["id"] = Method::Linear;
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("sex ~ age"), code); }) == ErrorCode::Declaration);

  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("age ~ bmi")); }) == ErrorCode::Analysis);
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("sex ~ zzz")); }) == ErrorCode::Analysis);
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("sex ~ note")); }) == ErrorCode::Analysis);
}

TEST_CASE("nominal with two levels falls back to logistic") {
  TempDir dir;
  auto specs = parse_variable_types({{"y", "Binary"}, {"g", "Nominal"}, {"x", "Continuous_float"}});
  auto t = ingest(dir, "y,g,x\na,p,1\nb,q,2\na,NA,3\nb,p,NA\n", specs);
  auto plan = compile_plan(*t, specs, parse_formula("y ~ g + x"));
  CHECK(plan.specs[1].method == Method::Logistic);
}

TEST_CASE("plan rejects all-missing and mistyped columns") {
  TempDir dir;
  auto specs = parse_variable_types({{"y", "Binary"}, {"x", "Continuous_float"}});
  auto t = ingest(dir, "y,x\na,NA\nb,NA\n", specs);
  CHECK(error_code_of([&] { compile_plan(*t, specs, parse_formula("y ~ x")); }) == ErrorCode::AllMissing);

  TempDir dir2;
  auto t2 = ingest(dir2, "y,x\na,1\na,2\n", specs);
  CHECK(error_code_of([&] { compile_plan(*t2, specs, parse_formula("y ~ x")); }) == ErrorCode::Plan);

  auto other = parse_variable_types({{"y", "Binary"}, {"x", "Continuous_int"}});
  TempDir dir3;
  auto t3 = ingest(dir3, "y,x\na,1.5\nb,2\n", specs);
  CHECK(error_code_of([&] { compile_plan(*t3, other, parse_formula("y ~ x")); }) == ErrorCode::Schema);
}
