#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rail {

enum class ErrorCode {
  InvalidArgument,
  InvalidObservation,
  NoPath,
  CursorTooOld,
  InvalidPath,
  TypeClash,
  NotFound,
  TooLarge,
  CorruptContent,
  MalformedMessage,
  UnsupportedVersion,
  InvalidTransform,
  NoWorkersAvailable,
  AmbiguousExternalId,
  MalformedQuery,
  UnknownFrame,
  SubscriptionOverflow,
  NoEndpointKnown,
  MalformedAnnouncement,
  UnknownModule,
  NoSlaveAvailable,
  FencedWrite,
  InvalidScenario,
  MalformedSnapshot,
  InvalidConfig,
  IoError,
};

/// Wire name of an error code, e.g. "NoPath". Used verbatim in consumer
/// protocol error frames.
std::string_view error_name(ErrorCode code) noexcept;

/// Every failure raised by the library. `reason()` carries a short machine
/// readable qualifier (e.g. "constraint_filtered" for NoPath).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string reason = {})
      : std::runtime_error(message), code_(code), reason_(std::move(reason)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  ErrorCode code_;
  std::string reason_;
};

}  // namespace rail
