#pragma once

#include <stdexcept>
#include <string>

namespace oocmice {

/// Stable error codes. The numeric values are part of the CLI contract
/// (they become the process exit status) and must not be renumbered.
enum class ErrorCode : int {
  Schema = 10,
  Parse = 11,
  Format = 12,
  Bounds = 13,
  Type = 14,
  Checkpoint = 15,
  Budget = 16,
  Io = 17,
  Declaration = 20,
  Plan = 21,
  FormulaParse = 22,
  AllMissing = 30,
  Model = 40,
  Numeric = 41,
  Separation = 42,
  Contract = 43,
  Analysis = 50,
  Imputation = 51,
  Amputation = 60,
  Usage = 64,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(std::string module, ErrorCode code, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)), code_(code) {}

  const std::string& module() const noexcept { return module_; }
  ErrorCode code() const noexcept { return code_; }

 private:
  std::string module_;
  ErrorCode code_;
};

}  // namespace oocmice
