#pragma once

#include <stdexcept>
#include <string>

namespace knockoffs {

// Failure domains double as process exit codes: config 2, data 3, numeric 4.
enum class ErrorDomain { config = 2, data = 3, numeric = 4 };

enum class Errc {
  // shared data model
  empty_data,
  dimension_mismatch,
  non_finite_entry,
  bad_covariance,
  not_psd,
  // knockoff generation
  psd_violation,
  not_diagonal,
  // statistics
  underdetermined,
  singular_gram,
  zero_response,
  no_convergence,
  degenerate_score,
  // selection
  invalid_q,
  empty_h1,
  // diagnostics
  empty_list,
  out_of_range,
  insufficient_replications,
  // simulation
  not_positive_definite,
  bad_dof,
  k_too_large,
  missing_beta,
  bad_config,
  // csv / io
  m_too_large,
  parse_error,
  no_numeric_columns,
  not_binary,
  all_rows_dropped,
  io_failure,
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, ErrorDomain domain, const std::string& what)
      : std::runtime_error(what), code_(code), domain_(domain) {}

  Errc code() const { return code_; }
  ErrorDomain domain() const { return domain_; }

 private:
  Errc code_;
  ErrorDomain domain_;
};

// CSV parse failure with 1-based data row and 1-based file column.
class ParseError : public Error {
 public:
  ParseError(long row, long col, const std::string& what)
      : Error(Errc::parse_error, ErrorDomain::data, what), row_(row), col_(col) {}

  long row() const { return row_; }
  long col() const { return col_; }

 private:
  long row_;
  long col_;
};

[[noreturn]] inline void throw_config(Errc c, const std::string& msg) {
  throw Error(c, ErrorDomain::config, msg);
}
[[noreturn]] inline void throw_data(Errc c, const std::string& msg) {
  throw Error(c, ErrorDomain::data, msg);
}
[[noreturn]] inline void throw_numeric(Errc c, const std::string& msg) {
  throw Error(c, ErrorDomain::numeric, msg);
}

}  // namespace knockoffs
