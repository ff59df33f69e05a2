#pragma once

#include <stdexcept>
#include <string>

namespace zutis {

/// Invalid argument or violated precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent data read from disk or passed between stages.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Prompt templates whose embeddings cancel out.
class DegeneratePromptError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Saliency detector could not produce a mask.
class DetectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace zutis
