#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uniform_lse {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Fewer observations than the operation needs (n - 2 must stay positive).
class TooFewPoints : public Error {
public:
  using Error::Error;
};

/// All covariate values coincide, so the design matrix is singular.
class CollinearDesign : public Error {
public:
  using Error::Error;
};

/// Every weight of a uniform sum is zero.
class DegenerateSum : public Error {
public:
  using Error::Error;
};

/// The number of nonzero weights exceeds the exact-enumeration cap.
class ExactModeTooLarge : public Error {
public:
  ExactModeTooLarge(std::size_t terms, std::size_t limit)
      : Error("exact mode needs " + std::to_string(terms) +
              " nonzero weights but the limit is " + std::to_string(limit)),
        terms_(terms), limit_(limit) {}

  std::size_t terms() const noexcept { return terms_; }
  std::size_t limit() const noexcept { return limit_; }

private:
  std::size_t terms_;
  std::size_t limit_;
};

/// An argument lies outside the domain of the operation.
class DomainError : public Error {
public:
  using Error::Error;
};

class GridTooCoarse : public Error {
public:
  using Error::Error;
};

/// Replicates were drawn with resampled covariates and cannot be compared
/// with a law that conditions on a single design.
class MismatchedDesign : public Error {
public:
  using Error::Error;
};

/// Malformed input text; carries the 1-based line number.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

} // namespace uniform_lse
