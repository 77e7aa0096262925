#pragma once

#include <stdexcept>
#include <string>

namespace guide {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite or out-of-domain numeric input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Malformed persisted data. `path()` is a JSON-pointer-like location.
class ParseError : public Error {
 public:
  ParseError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

// Rejected curator operation batch.
class OpError : public Error {
 public:
  using Error::Error;
};

// LLM backend unavailable, timed out, or answered with garbage.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Stored artifacts disagree with recomputation.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace guide
