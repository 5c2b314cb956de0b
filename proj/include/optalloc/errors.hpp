#pragma once

#include <stdexcept>
#include <string>

namespace optalloc {

// Invalid argument or a value outside a function's mathematical domain
// (quantile of p >= 1, empty stratum, link evaluated outside its domain...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed or inconsistent observed data (missing columns, blank cells
// where a value is required, rows outside every stratum).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A nuisance-model fit failed: singular design, non-convergence, separation.
class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration document.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace optalloc
