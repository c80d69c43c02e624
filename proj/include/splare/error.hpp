#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace splare {

/// Malformed input data (bad JSONL record, corrupt container, bad TREC line).
/// `line()` is 1-based, or 0 when the error is not tied to a text line.
class format_error : public std::runtime_error {
  public:
    explicit format_error(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
          line_(line) {}

    [[nodiscard]] std::size_t line() const noexcept { return line_; }

  private:
    std::size_t line_;
};

/// Index construction failure (duplicate id, width mismatch).
class build_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or parameters during optimisation.
class numerical_error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace splare
