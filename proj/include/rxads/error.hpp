// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace rxads {

// Broad failure classes; the CLI maps them onto exit codes 2/3/4.
enum class ErrorClass { Config, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

#define RXADS_DEFINE_ERROR(Name, Cls)                                     \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(ErrorClass::Cls, what) {} \
  };

// Data-side failures
RXADS_DEFINE_ERROR(MalformedLine, Data)
RXADS_DEFINE_ERROR(FormatError, Data)
RXADS_DEFINE_ERROR(IoError, Data)
RXADS_DEFINE_ERROR(EmptyCapture, Data)
RXADS_DEFINE_ERROR(EmptyInput, Data)
RXADS_DEFINE_ERROR(EmptyBatch, Data)
RXADS_DEFINE_ERROR(LengthMismatch, Data)
RXADS_DEFINE_ERROR(VersionMismatch, Data)
RXADS_DEFINE_ERROR(ChecksumMismatch, Data)
RXADS_DEFINE_ERROR(NoConvergedSamples, Data)

// Configuration / architecture
RXADS_DEFINE_ERROR(ConfigError, Config)
RXADS_DEFINE_ERROR(BadArchitecture, Config)

// Numerics
RXADS_DEFINE_ERROR(NonFiniteLoss, Numeric)
RXADS_DEFINE_ERROR(NonFiniteIterate, Numeric)

#undef RXADS_DEFINE_ERROR

}  // namespace rxads
