#pragma once

#include <stdexcept>
#include <string>

namespace fsl {

// Root of every error thrown by the library. Subclasses are grouped by the
// exit code the command-line front end maps them to.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor / layer contract violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

// Batch statistics are undefined for a single-element population.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Zero-norm embedding handed to a cosine / L2-normalizing head.
class DegenerateFeatureError : public Error {
 public:
  using Error::Error;
};

// Support set does not contain the expected per-class rows.
class EpisodeShapeError : public Error {
 public:
  using Error::Error;
};

// Data-layout family.
class LayoutError : public Error {
 public:
  using Error::Error;
};

class SamplingError : public LayoutError {
 public:
  using LayoutError::LayoutError;
};

class DecodeError : public LayoutError {
 public:
  using LayoutError::LayoutError;
};

// Non-finite loss or activation during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Binary format family (weight archive, embedding cache, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedPayloadError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  ChecksumError(std::string tensor_name, const std::string& what)
      : FormatError(what), tensor_name_(std::move(tensor_name)) {}

  const std::string& tensor_name() const noexcept { return tensor_name_; }

 private:
  std::string tensor_name_;
};

class StaleCacheError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace fsl
