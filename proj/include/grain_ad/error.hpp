#pragma once

#include <stdexcept>
#include <string>

namespace grain_ad {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Missing / unreadable dataset files, empty pools, bad layouts.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Weight or model file missing, truncated or shape-mismatched.
class ModelLoadError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

// AUROC on single-class input and similar.
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <class E = InvalidArgument>
inline void require(bool cond, const std::string& what) {
  if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace grain_ad
