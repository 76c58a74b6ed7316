#pragma once

#include <stdexcept>
#include <string>

namespace rxtree {

// Base class for every error raised by the library. The CLI maps these to
// exit code 2; anything else escaping a command is reported as exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file: CSV, schema sidecar, reward matrix.
class LoadError : public Error {
 public:
  using Error::Error;
};

class ImputationError : public Error {
 public:
  using Error::Error;
};

// Violated precondition of an operation (shape mismatch, bad config, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Tree document rejected by import_tree / bind.
class TreeFormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace rxtree
