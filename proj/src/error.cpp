#include "transukan/error.hpp"

namespace tukan {

void rethrow_with_context(const Error& e, std::string_view context) {
  const std::string msg = std::string(context) + ": " + e.what();
  switch (e.kind()) {
    case ErrorKind::kDimension: throw DimensionError(msg);
    case ErrorKind::kContract: throw ContractError(msg);
    case ErrorKind::kState: throw StateError(msg);
    case ErrorKind::kNumeric: throw NumericError(msg);
    case ErrorKind::kFormat: throw FormatError(msg);
    case ErrorKind::kCorruption: throw CorruptionError(msg);
    case ErrorKind::kConfig: throw ConfigError(msg);
    case ErrorKind::kData: throw DataError(msg);
    case ErrorKind::kIo: throw IoError(msg);
  }
  throw Error(e.kind(), msg);
}

}  // namespace tukan
