#pragma once

#include <stdexcept>

namespace hcbfill {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define HCBFILL_ERROR(Name)          \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  }

HCBFILL_ERROR(InvalidDistribution);
HCBFILL_ERROR(InvalidToken);
HCBFILL_ERROR(InvalidQuery);
HCBFILL_ERROR(InvalidInput);
HCBFILL_ERROR(ConfigError);
HCBFILL_ERROR(TooLarge);
// Transport-level failure: unreachable server, timeout, 5xx.
HCBFILL_ERROR(BackendUnavailable);
// The server answered but the payload violates the wire contract.
HCBFILL_ERROR(ProtocolError);
HCBFILL_ERROR(RunAborted);

#undef HCBFILL_ERROR

}  // namespace hcbfill
