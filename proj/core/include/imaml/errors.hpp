#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace imaml {

// Root of everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, int node)
      : Error(what), node_(node) {}
  int node() const noexcept { return node_; }

 private:
  int node_;
};

// Invalid hyperparameters or solver settings (lambda <= 0, missing strong
// convexity constants, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// CG met p^T M p <= 0.
class CurvatureError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

class LineSearchError : public Error {
 public:
  using Error::Error;
};

class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class OracleUnavailableError : public Error {
 public:
  using Error::Error;
};

// A per-task engine failure inside an outer step; wraps the original message.
class TaskError : public Error {
 public:
  TaskError(const std::string& what, std::uint64_t task_id)
      : Error(what), task_id_(task_id) {}
  std::uint64_t task_id() const noexcept { return task_id_; }

 private:
  std::uint64_t task_id_;
};

// Config schema violation; `path` is the dotted key path that failed.
class ValidationError : public Error {
 public:
  ValidationError(const std::string& what, std::string path)
      : Error(what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace imaml
