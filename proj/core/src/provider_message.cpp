#include "rail/provider_message.hpp"

#include <array>
#include <cmath>

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail::ingest {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedMessage, "malformed provider message: " + what);
}

const json& field(const json& obj, const char* name) {
  auto it = obj.find(name);
  if (it == obj.end()) malformed(std::string("missing \"") + name + "\"");
  return *it;
}

std::string string_field(const json& obj, const char* name, bool allow_empty = false) {
  const auto& v = field(obj, name);
  if (!v.is_string()) malformed(std::string("\"") + name + "\" must be a string");
  auto s = v.get<std::string>();
  if (s.empty() && !allow_empty) malformed(std::string("\"") + name + "\" must be non-empty");
  return s;
}

double number_field(const json& obj, const char* name) {
  const auto& v = field(obj, name);
  if (!v.is_number()) malformed(std::string("\"") + name + "\" must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) malformed(std::string("\"") + name + "\" must be finite");
  return d;
}

ExternalRef parse_ref(const json& obj) {
  ExternalRef r{string_field(obj, "kind"), string_field(obj, "ext_id")};
  store::split_path(id_path_for_kind(r.kind));
  return r;
}

geo::Pose6D parse_pose(const json& item) {
  const bool has_pose = item.contains("pose");
  const bool has_mat = item.contains("tf_mat");
  if (has_pose == has_mat) malformed("detection needs exactly one of \"pose\" and \"tf_mat\"");
  if (has_pose) return item.at("pose").get<geo::Pose6D>();
  const auto& m = item.at("tf_mat");
  if (!m.is_array() || m.size() != 16) malformed("\"tf_mat\" must hold 16 numbers");
  std::array<double, 16> a{};
  for (std::size_t i = 0; i < 16; ++i) {
    if (!m[i].is_number()) malformed("\"tf_mat\" must hold 16 numbers");
    a[i] = m[i].get<double>();
  }
  return geo::Pose6D::from_matrix(a);
}

ObservationItem parse_item(const json& item) {
  if (!item.is_object()) malformed("observation must be an object");
  const auto kind = string_field(item, "item");
  if (kind == "detection") {
    Detection d;
    d.ref = parse_ref(item);
    d.pose = parse_pose(item);
    d.sigma = number_field(item, "sigma");
    d.resolution = number_field(item, "res");
    if (d.sigma < 0) malformed("\"sigma\" must be >= 0");
    if (d.resolution <= 0) malformed("\"res\" must be > 0");
    return d;
  }
  if (kind == "attribute_upsert") {
    AttributeUpsert u;
    const auto& obj = field(item, "object");
    if (obj.is_string()) {
      u.object = ObjectId(obj.get<std::string>());
    } else if (obj.is_object()) {
      u.object = parse_ref(obj);
    } else {
      malformed("\"object\" must be an id or {kind, ext_id}");
    }
    const auto& muts = field(item, "mutations");
    if (!muts.is_array()) malformed("\"mutations\" must be an array");
    for (const auto& m : muts) {
      auto mut = m.get<store::AttributeMutation>();
      store::split_path(mut.path);
      u.mutations.push_back(std::move(mut));
    }
    if (item.contains("geometry")) u.geometry = item.at("geometry").get<geo::GeometryPrimitive>();
    return u;
  }
  malformed("unknown item type \"" + kind + "\"");
}

ProviderMessage parse(std::string_view bytes) {
  if (bytes.empty()) malformed("empty datagram");
  if (bytes.size() > kMaxDatagramBytes) malformed("datagram exceeds 60 KiB");
  json doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (doc.is_discarded()) malformed("not valid JSON");
  if (!doc.is_object()) malformed("top level must be an object");

  const auto& v = field(doc, "v");
  if (!v.is_number_integer()) malformed("\"v\" must be an integer");
  if (v.get<std::int64_t>() != kProtocolVersion) {
    throw Error(ErrorCode::UnsupportedVersion, "unsupported protocol version " + v.dump());
  }

  ProviderMessage m;
  const auto& provider = field(doc, "provider");
  if (!provider.is_object()) malformed("\"provider\" must be an object");
  m.provider.id = string_field(provider, "id");
  if (!EntityId::is_valid(m.provider.id)) malformed("provider id is not a valid entity id");
  m.provider.type = string_field(provider, "type", true);

  const auto& seq = field(doc, "seq");
  if (!seq.is_number_unsigned()) malformed("\"seq\" must be a non-negative integer");
  m.seq = seq.get<std::uint64_t>();
  const auto& t = field(doc, "time_us");
  if (!t.is_number_integer()) malformed("\"time_us\" must be an integer");
  m.time_us = t.get<std::int64_t>();

  const auto& obs = field(doc, "observations");
  if (!obs.is_array()) malformed("\"observations\" must be an array");
  if (obs.size() > kMaxObservations) malformed("more than 64 observations");
  m.observations.reserve(obs.size());
  for (const auto& item : obs) m.observations.push_back(parse_item(item));
  return m;
}

json ref_json(const ExternalRef& r) { return json{{"kind", r.kind}, {"ext_id", r.ext_id}}; }

}  // namespace

ProviderMessage decode_provider_message(std::string_view bytes) {
  try {
    return parse(bytes);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedMessage || e.code() == ErrorCode::UnsupportedVersion ||
        e.code() == ErrorCode::InvalidTransform) {
      throw;
    }
    malformed(e.what());
  } catch (const std::exception& e) {
    malformed(e.what());
  }
}

json to_json(const ProviderMessage& m) {
  json obs = json::array();
  for (const auto& item : m.observations) {
    if (const auto* d = std::get_if<Detection>(&item)) {
      json j = ref_json(d->ref);
      j["item"] = "detection";
      j["pose"] = d->pose;
      j["sigma"] = d->sigma;
      j["res"] = d->resolution;
      obs.push_back(std::move(j));
    } else {
      const auto& u = std::get<AttributeUpsert>(item);
      json j{{"item", "attribute_upsert"}, {"mutations", u.mutations}};
      if (const auto* id = std::get_if<ObjectId>(&u.object)) {
        j["object"] = *id;
      } else {
        j["object"] = ref_json(std::get<ExternalRef>(u.object));
      }
      if (u.geometry) j["geometry"] = *u.geometry;
      obs.push_back(std::move(j));
    }
  }
  return json{{"v", kProtocolVersion},
              {"provider", {{"id", m.provider.id}, {"type", m.provider.type}}},
              {"seq", m.seq},
              {"time_us", m.time_us},
              {"observations", std::move(obs)}};
}

std::string encode_provider_message(const ProviderMessage& m) { return to_json(m).dump(); }

std::string id_path_for_kind(std::string_view kind) {
  constexpr std::string_view prefix = "marker.";
  if (kind.starts_with(prefix)) kind.remove_prefix(prefix.size());
  return std::string(prefix) + std::string(kind) + ".id";
}

}  // namespace rail::ingest
