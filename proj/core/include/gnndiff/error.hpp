#pragma once

#include <stdexcept>
#include <string>

namespace gnndiff {

/// Operand shapes that cannot be combined. The message names the operand.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Dataset or artifact could not be read. Carries file and line when known.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + (line ? ":" + std::to_string(line) : std::string{}) + ": " +
                           what),
        file_(file),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

/// Raised by best-config selection when no candidate produced a usable score.
class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage failed; `stage()` names it for the CLI exit message.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace gnndiff
