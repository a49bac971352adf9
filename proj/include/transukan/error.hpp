#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tukan {

enum class ErrorKind {
  kDimension,
  kContract,
  kState,
  kNumeric,
  kFormat,
  kCorruption,
  kConfig,
  kData,
  kIo,
};

/// Base of every exception thrown by the library. The kind survives
/// re-wrapping, so callers can add context without losing the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TUKAN_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(Kind, what) {}       \
  };

TUKAN_DEFINE_ERROR(DimensionError, ErrorKind::kDimension)
TUKAN_DEFINE_ERROR(ContractError, ErrorKind::kContract)
TUKAN_DEFINE_ERROR(StateError, ErrorKind::kState)
TUKAN_DEFINE_ERROR(NumericError, ErrorKind::kNumeric)
TUKAN_DEFINE_ERROR(FormatError, ErrorKind::kFormat)
TUKAN_DEFINE_ERROR(CorruptionError, ErrorKind::kCorruption)
TUKAN_DEFINE_ERROR(ConfigError, ErrorKind::kConfig)
TUKAN_DEFINE_ERROR(DataError, ErrorKind::kData)
TUKAN_DEFINE_ERROR(IoError, ErrorKind::kIo)

#undef TUKAN_DEFINE_ERROR

/// Rethrows `e` as the same concrete type with "<context>: " prepended.
[[noreturn]] void rethrow_with_context(const Error& e, std::string_view context);

}  // namespace tukan
