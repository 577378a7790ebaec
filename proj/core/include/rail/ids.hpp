#pragma once

#include <compare>
#include <functional>
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

namespace rail {

/// Identifier of a modelled entity. Objects and spatial frames share this
/// namespace: every object owns exactly the frame with the same id.
/// Non-empty, at most 128 bytes, no whitespace.
class EntityId {
 public:
  static constexpr std::size_t kMaxBytes = 128;

  EntityId() = default;
  /// Throws rail::Error(InvalidArgument) when the token is not a valid id.
  explicit EntityId(std::string value);

  static bool is_valid(std::string_view value) noexcept;

  const std::string& str() const noexcept { return value_; }
  bool empty() const noexcept { return value_.empty(); }

  friend auto operator<=>(const EntityId&, const EntityId&) = default;
  friend bool operator==(const EntityId&, const EntityId&) = default;

 private:
  std::string value_;
};

using FrameId = EntityId;
using ObjectId = EntityId;

void to_json(nlohmann::json& j, const EntityId& id);
void from_json(const nlohmann::json& j, EntityId& id);

}  // namespace rail

template <>
struct std::hash<rail::EntityId> {
  std::size_t operator()(const rail::EntityId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
