#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace svcsdm {

/// Malformed input file. `row` is the 1-based data row (0 when not row specific).
class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& what, std::size_t row = 0)
      : std::runtime_error(row ? "row " + std::to_string(row) + ": " + what : what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

/// One or more invariant violations in a model specification or configuration.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string out;
    for (const auto& s : p) {
      if (!out.empty()) out += "; ";
      out += s;
    }
    return out;
  }
  std::vector<std::string> problems_;
};

/// Linear algebra or sampler failure (non-positive-definite system, non-finite state).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parameters that do not conform to the model specification they are evaluated against.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace svcsdm
