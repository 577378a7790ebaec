#include "rail/error.hpp"

namespace rail {

std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidObservation: return "InvalidObservation";
    case ErrorCode::NoPath: return "NoPath";
    case ErrorCode::CursorTooOld: return "CursorTooOld";
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::TypeClash: return "TypeClash";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::TooLarge: return "TooLarge";
    case ErrorCode::CorruptContent: return "CorruptContent";
    case ErrorCode::MalformedMessage: return "MalformedMessage";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::InvalidTransform: return "InvalidTransform";
    case ErrorCode::NoWorkersAvailable: return "NoWorkersAvailable";
    case ErrorCode::AmbiguousExternalId: return "AmbiguousExternalId";
    case ErrorCode::MalformedQuery: return "MalformedQuery";
    case ErrorCode::UnknownFrame: return "UnknownFrame";
    case ErrorCode::SubscriptionOverflow: return "SubscriptionOverflow";
    case ErrorCode::NoEndpointKnown: return "NoEndpointKnown";
    case ErrorCode::MalformedAnnouncement: return "MalformedAnnouncement";
    case ErrorCode::UnknownModule: return "UnknownModule";
    case ErrorCode::NoSlaveAvailable: return "NoSlaveAvailable";
    case ErrorCode::FencedWrite: return "FencedWrite";
    case ErrorCode::InvalidScenario: return "InvalidScenario";
    case ErrorCode::MalformedSnapshot: return "MalformedSnapshot";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace rail
