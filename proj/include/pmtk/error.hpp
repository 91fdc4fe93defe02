#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pmtk {

// Precondition violated by the caller (bad shape, out-of-range value, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Object not in a usable state (empty codebook, untrained component, ...).
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A pipeline stage needs a checkpoint that does not exist.
class MissingCheckpoint : public InvalidState {
 public:
  MissingCheckpoint(std::string stage, const std::string& path)
      : InvalidState("missing checkpoint for stage '" + stage + "' (" + path + ")"),
        stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// Malformed binary payload. Carries the file and the byte offset of the fault.
class FormatError : public std::runtime_error {
 public:
  FormatError(std::string source, std::size_t offset, const std::string& what)
      : std::runtime_error(source + " @ offset " + std::to_string(offset) + ": " + what),
        source_(std::move(source)),
        offset_(offset) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::string source_;
  std::size_t offset_;
};

// Well-formed data that violates a cross-file invariant (manifest vs arrays).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration. `field()` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Non-finite loss or activations during training.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::string stage, std::int64_t step, const std::string& diagnostics)
      : std::runtime_error("training diverged in '" + stage + "' at step " + std::to_string(step) +
                           ": " + diagnostics),
        stage_(std::move(stage)),
        step_(step) {}

  const std::string& stage() const noexcept { return stage_; }
  std::int64_t step() const noexcept { return step_; }

 private:
  std::string stage_;
  std::int64_t step_;
};

}  // namespace pmtk
