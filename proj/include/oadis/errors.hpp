#pragma once

#include <stdexcept>
#include <string>

namespace oadis {

// Base of all engine errors. The CLI maps categories to exit codes:
// config -> 2, data/format/vocabulary -> 3, everything else -> 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration (unknown key, invalid value, dim mismatch
// between config and checkpoint).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (bad magic, truncation, ragged embedding line).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Token or sample id not present in a vocabulary / store.
class VocabError : public Error {
 public:
  using Error::Error;
};

// Dataset-level problems that are not file-format issues.
class DataError : public Error {
 public:
  using Error::Error;
};

// No valid triplet mate exists for an anchor.
class MateNotFoundError : public DataError {
 public:
  using DataError::DataError;
};

// Split construction emptied the dataset.
class DegenerateDatasetError : public DataError {
 public:
  using DataError::DataError;
};

// Tensor shape disagreement.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// API precondition violated (non-scalar loss, empty anchor set, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Numeric failure (non-finite input, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Normalization of a (near-)zero vector.
class DegenerateVectorError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace oadis
