#pragma once

// Session-less ingest datagrams. One JSON document per datagram:
//
//   {"v":1,"provider":{"id":"foo","type":"camera"},"seq":12,
//    "time_us":1700000000000000,"observations":[...]}
//
// Each observation is either a detection of an externally identified
// entity or an attribute upsert.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rail/attributes.hpp"
#include "rail/geometry.hpp"
#include "rail/ids.hpp"

namespace rail::ingest {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxObservations = 64;
inline constexpr std::size_t kMaxDatagramBytes = 60 * 1024;

struct ProviderInfo {
  std::string id;
  std::string type;

  friend bool operator==(const ProviderInfo&, const ProviderInfo&) = default;
};

/// Reference to an object by an external identifier such as a marker id.
struct ExternalRef {
  std::string kind;  // e.g. "marker.QR"
  std::string ext_id;

  friend auto operator<=>(const ExternalRef&, const ExternalRef&) = default;
  friend bool operator==(const ExternalRef&, const ExternalRef&) = default;
};

/// The provider saw `ref` at `pose` relative to itself.
struct Detection {
  ExternalRef ref;
  geo::Pose6D pose;
  double sigma = 0.0;
  double resolution = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct AttributeUpsert {
  std::variant<ObjectId, ExternalRef> object;
  std::vector<store::AttributeMutation> mutations;
  std::optional<geo::GeometryPrimitive> geometry;

  friend bool operator==(const AttributeUpsert&, const AttributeUpsert&) = default;
};

using ObservationItem = std::variant<Detection, AttributeUpsert>;

struct ProviderMessage {
  ProviderInfo provider;
  std::uint64_t seq = 0;
  std::int64_t time_us = 0;
  std::vector<ObservationItem> observations;

  friend bool operator==(const ProviderMessage&, const ProviderMessage&) = default;
};

/// Parses one datagram. Throws rail::Error with MalformedMessage,
/// UnsupportedVersion or InvalidTransform (a "tf_mat" that is not rigid).
/// Never throws anything else.
ProviderMessage decode_provider_message(std::string_view bytes);

/// Canonical encoding: compact JSON with sorted keys, poses as
/// {"t":[..],"q":[w,x,y,z]}.
std::string encode_provider_message(const ProviderMessage& m);
nlohmann::json to_json(const ProviderMessage& m);

/// Attribute path that holds the external id for `kind`:
/// "marker.QR" -> "marker.QR.id", and a bare "QR" maps to the same path.
std::string id_path_for_kind(std::string_view kind);

}  // namespace rail::ingest
