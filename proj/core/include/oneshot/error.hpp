#pragma once

#include <stdexcept>
#include <string>

namespace oneshot {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller violated an operation's precondition (bad shape, invalid config).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Reading or writing an artifact failed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// An optimization produced a non-finite loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Raised by the pipeline; carries the stage and client that failed.
class StageError : public Error {
 public:
  StageError(std::string stage, int client_id, const std::string& what)
      : Error("stage '" + stage + "'" +
              (client_id >= 0 ? " client " + std::to_string(client_id) : std::string()) +
              ": " + what),
        stage_(std::move(stage)),
        client_id_(client_id) {}

  const std::string& stage() const noexcept { return stage_; }
  int client_id() const noexcept { return client_id_; }

 private:
  std::string stage_;
  int client_id_;
};

}  // namespace oneshot
