#pragma once

#include <stdexcept>
#include <string>

namespace hetdet {

// Category decides the CLI exit code: config -> 2, data -> 3, numerical -> 4.
enum class ErrorCategory { config, data, numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const char* code, const std::string& what)
      : std::runtime_error(what), category_(category), code_(code) {}

  ErrorCategory category() const noexcept { return category_; }
  // stable snake_case identifier, used in reports and discard tallies
  const char* code() const noexcept { return code_; }

 private:
  ErrorCategory category_;
  const char* code_;
};

inline int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::config: return 2;
    case ErrorCategory::data: return 3;
    case ErrorCategory::numerical: return 4;
  }
  return 4;
}

#define HETDET_DEFINE_ERROR(NAME, CATEGORY, CODE)             \
  class NAME : public Error {                                 \
   public:                                                    \
    explicit NAME(const std::string& what)                    \
        : Error(ErrorCategory::CATEGORY, CODE, what) {}       \
  }

HETDET_DEFINE_ERROR(ConfigError, config, "config_error");
HETDET_DEFINE_ERROR(DomainError, config, "domain_error");

HETDET_DEFINE_ERROR(IoError, data, "io_error");
HETDET_DEFINE_ERROR(FileNotFound, data, "file_not_found");
HETDET_DEFINE_ERROR(SchemaMismatch, data, "schema_mismatch");
HETDET_DEFINE_ERROR(EmptyBlock, data, "empty_block");
HETDET_DEFINE_ERROR(NonBinaryResponse, data, "non_binary_response");
HETDET_DEFINE_ERROR(NonFiniteInput, data, "non_finite_input");
HETDET_DEFINE_ERROR(KTooSmall, data, "k_too_small");
HETDET_DEFINE_ERROR(SplitTooSmall, data, "split_too_small");

HETDET_DEFINE_ERROR(NonConvergence, numerical, "non_convergence");
HETDET_DEFINE_ERROR(RankDeficientDesign, numerical, "rank_deficient_design");
HETDET_DEFINE_ERROR(SingularHessian, numerical, "singular_hessian");
HETDET_DEFINE_ERROR(NonPositiveVariance, numerical, "non_positive_variance");
HETDET_DEFINE_ERROR(MissingFit, numerical, "missing_fit");

#undef HETDET_DEFINE_ERROR

// NonNumericCell keeps its location so callers can point at the bad cell.
class NonNumericCell : public Error {
 public:
  NonNumericCell(const std::string& what, long row, const std::string& column)
      : Error(ErrorCategory::data, "non_numeric_cell", what),
        row_(row), column_(column) {}

  long row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  long row_;
  std::string column_;
};

}  // namespace hetdet
