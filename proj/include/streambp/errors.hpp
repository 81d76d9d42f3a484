#pragma once

#include <stdexcept>
#include <string>

namespace streambp {

// Error taxonomy:
//   std::invalid_argument  - contract violations (dimension mismatch, dead handles)
//   std::domain_error      - requests that are well-formed but undefined
//                            (conditioning a forced value, cross-tree moments)
//   NumericalError         - covariance not positive definite within the jitter
//                            budget, Cholesky failure
//   DegenerateCloudError   - every particle weight is -inf

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateCloudError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace streambp
