#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace robust_lfd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Vector lengths or grids disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class DegenerateDensityError : public Error {
 public:
  using Error::Error;
};

// Evaluation point outside the grid domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

// The class (or constraint set) admits no solution of the requested form.
class InfeasibleClassError : public Error {
 public:
  explicit InfeasibleClassError(const std::string& what, std::string hint = {})
      : Error(what), hint_(std::move(hint)) {}
  const std::string& hint() const noexcept { return hint_; }

 private:
  std::string hint_;
};

// The two hypothesis classes intersect, so no test separates them.
class ClassOverlapError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& what,
                            std::vector<double> last_iterate = {})
      : Error(what), last_iterate_(std::move(last_iterate)) {}
  const std::vector<double>& last_iterate() const noexcept {
    return last_iterate_;
  }

 private:
  std::vector<double> last_iterate_;
};

}  // namespace robust_lfd
