#pragma once

#include <stdexcept>
#include <string>

namespace weaknesslab {

// Error taxonomy shared across the library. The CLI maps these onto exit
// codes: config/argument problems -> 2, data/format problems -> 3,
// numeric/solver/training failures -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A precondition on an operation's arguments was violated.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// An enumeration guard tripped (vocabulary, pattern width, state count).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; the message names the offending field.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// LP solver gave up (iteration cap, inconsistent tableau). Distinct from an
// infeasible verdict, which is a valid answer.
class SolverError : public Error {
 public:
  using Error::Error;
};

// The training policy admits no positive classification margin.
class DegeneratePolicyError : public Error {
 public:
  using Error::Error;
};

// SGD diverged; carries the epoch at which the loss became non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_ = -1;
};

// Experiment configuration is invalid.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Requested data is missing or unusable.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace weaknesslab
