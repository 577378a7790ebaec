#include "rail/ids.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail {

EntityId::EntityId(std::string value) : value_(std::move(value)) {
  if (!is_valid(value_)) {
    throw Error(ErrorCode::InvalidArgument, "invalid entity id: \"" + value_ + "\"");
  }
}

bool EntityId::is_valid(std::string_view value) noexcept {
  if (value.empty() || value.size() > kMaxBytes) return false;
  return std::none_of(value.begin(), value.end(), [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
  });
}

void to_json(nlohmann::json& j, const EntityId& id) { j = id.str(); }

void from_json(const nlohmann::json& j, EntityId& id) {
  if (!j.is_string()) throw Error(ErrorCode::InvalidArgument, "entity id must be a string");
  id = EntityId(j.get<std::string>());
}

}  // namespace rail
