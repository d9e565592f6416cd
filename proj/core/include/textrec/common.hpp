#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace textrec {

// Row-major everywhere so tensor buffers serialize as written.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatF = Mat<float>;
using MatD = Mat<double>;

/// Malformed or inconsistent input data (bad file, dangling id, duplicate id).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numeric failure: non-finite loss, zero-norm vector where a direction is needed.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// LLM response that does not follow the expected reply format.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::string raw)
      : std::runtime_error(msg), raw_response(std::move(raw)) {}
  std::string raw_response;
};

}  // namespace textrec
