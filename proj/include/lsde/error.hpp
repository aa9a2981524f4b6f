#pragma once

#include <stdexcept>
#include <string>

namespace lsde {

/// Base for all library errors. `exit_code()` is what the CLI returns.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 1; }
};

class InvalidInput : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class NotFound : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

/// Newton inversion of the Lamperti map did not converge.
class InversionFailure : public Error {
 public:
  InversionFailure(const std::string& what, std::string worst_point)
      : Error(what), worst_point_(std::move(worst_point)) {}
  const std::string& worst_point() const { return worst_point_; }

 private:
  std::string worst_point_;
};

/// Non-finite loss or gradient during training.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::string term, int epoch = -1)
      : Error(what), term_(std::move(term)), epoch_(epoch) {}
  const std::string& term() const { return term_; }
  int epoch() const { return epoch_; }
  int exit_code() const override { return 3; }

 private:
  std::string term_;
  int epoch_;
};

class DegenerateData : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 4; }
};

/// Wraps an error from one pipeline stage, keeping its exit code.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& cause)
      : Error(stage + ": " + cause.what()), stage_(stage), code_(cause.exit_code()) {}
  const std::string& stage() const { return stage_; }
  int exit_code() const override { return code_; }

 private:
  std::string stage_;
  int code_;
};

}  // namespace lsde
