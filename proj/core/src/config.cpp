#include "rail/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rail/error.hpp"

namespace rail::config {

using nlohmann::json;

namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::InvalidConfig, "invalid config: " + what); }

std::string upper(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::toupper(c); });
  return s;
}

bool same_shape(const json& want, const json& got) {
  if (want.is_number_integer()) return got.is_number_integer();
  if (want.is_string()) return got.is_string();
  if (want.is_array()) {
    return got.is_array() && std::all_of(got.begin(), got.end(), [](const json& v) { return v.is_string(); });
  }
  return want.type() == got.type();
}

json parse_override(const std::string& name, const json& want, const std::string& text) {
  if (want.is_string()) return text;
  if (want.is_array()) {
    json out = json::array();
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) invalid(name + " must be an integer");
  return v;
}

template <typename T>
T ranged(const json& section, const char* key, std::int64_t lo, std::int64_t hi) {
  const auto v = section.at(key).get<std::int64_t>();
  if (v < lo || v > hi) {
    invalid(std::string(key) + " = " + std::to_string(v) + " is outside [" + std::to_string(lo) + ", " +
            std::to_string(hi) + "]");
  }
  return static_cast<T>(v);
}

ingest::UnknownIdPolicy policy_of(const std::string& s) {
  if (s == "create_provisional") return ingest::UnknownIdPolicy::create_provisional;
  if (s == "drop") return ingest::UnknownIdPolicy::drop;
  invalid("unknown_ids must be create_provisional or drop");
}

graph::PathPriority priority_of(const std::string& s) {
  if (s == "sigma_first") return graph::PathPriority::sigma_first;
  if (s == "resolution_first") return graph::PathPriority::resolution_first;
  invalid("priority must be sigma_first or resolution_first");
}

Config decode(const json& t) {
  Config c;
  constexpr std::int64_t kMax = INT64_MAX;
  const auto& node = t.at("node");
  c.node.id = node.at("id").get<std::string>();
  c.node.advertise_host = node.at("advertise_host").get<std::string>();
  if (!EntityId::is_valid(c.node.id)) invalid("node.id must be a non-empty token");

  const auto& d = t.at("discovery");
  c.discovery.port = ranged<std::uint16_t>(d, "port", 1, 65535);
  c.discovery.broadcast_addr = d.at("broadcast_addr").get<std::string>();
  c.discovery.announce_interval_us = ranged<std::int64_t>(d, "announce_interval_us", 1, kMax);

  const auto& h = t.at("health");
  c.health.heartbeat_interval_us = ranged<std::int64_t>(h, "heartbeat_interval_us", 1, kMax);
  c.health.suspect_after = ranged<int>(h, "suspect_after", 1, 1000);
  c.health.failed_after = ranged<int>(h, "failed_after", 1, 1000);
  if (c.health.failed_after <= c.health.suspect_after) invalid("failed_after must exceed suspect_after");
  c.health.decision_log = h.at("decision_log").get<std::string>();

  const auto& i = t.at("ingest");
  c.ingest.bind = i.at("bind").get<std::string>();
  c.ingest.port = ranged<std::uint16_t>(i, "port", 0, 65535);
  c.ingest.workers = ranged<unsigned>(i, "workers", 1, 4096);
  c.ingest.unknown_ids = policy_of(i.at("unknown_ids").get<std::string>());

  const auto& q = t.at("query");
  c.query.bind = q.at("bind").get<std::string>();
  c.query.port = ranged<std::uint16_t>(q, "port", 0, 65535);
  c.query.subscription_buffer = ranged<std::size_t>(q, "subscription_buffer", 1, kMax);
  c.query.max_frame_bytes = ranged<std::uint32_t>(q, "max_frame_bytes", 16, UINT32_MAX);

  const auto& s = t.at("store");
  c.store.feed_retention = ranged<std::size_t>(s, "feed_retention", 1, kMax);
  c.store.index_paths = s.at("index_paths").get<std::vector<std::string>>();
  c.store.blob_dir = s.at("blob_dir").get<std::string>();
  c.store.blob_max_bytes = ranged<std::uint64_t>(s, "blob_max_bytes", 1, kMax);
  c.store.priority = priority_of(s.at("priority").get<std::string>());

  const auto& r = t.at("replication");
  try {
    c.replication.mode = replication::mode_from_name(r.at("mode").get<std::string>());
  } catch (const Error&) {
    invalid("replication.mode must be sync or async");
  }
  c.replication.peer = r.at("peer").get<std::string>();
  return c;
}

}  // namespace

EnvironmentOptions Config::environment_options() const {
  EnvironmentOptions o;
  o.graph.feed_retention = store.feed_retention;
  o.graph.priority = store.priority;
  o.objects.feed_retention = store.feed_retention;
  o.objects.index_paths = store.index_paths;
  o.blob_max_bytes = store.blob_max_bytes;
  if (!store.blob_dir.empty()) o.blob_dir = store.blob_dir;
  return o;
}

json to_json(const Config& c) {
  return json{
      {"node", {{"id", c.node.id}, {"advertise_host", c.node.advertise_host}}},
      {"discovery",
       {{"port", c.discovery.port},
        {"broadcast_addr", c.discovery.broadcast_addr},
        {"announce_interval_us", c.discovery.announce_interval_us}}},
      {"health",
       {{"heartbeat_interval_us", c.health.heartbeat_interval_us},
        {"suspect_after", c.health.suspect_after},
        {"failed_after", c.health.failed_after},
        {"decision_log", c.health.decision_log}}},
      {"ingest",
       {{"bind", c.ingest.bind},
        {"port", c.ingest.port},
        {"workers", c.ingest.workers},
        {"unknown_ids",
         c.ingest.unknown_ids == ingest::UnknownIdPolicy::drop ? "drop" : "create_provisional"}}},
      {"query",
       {{"bind", c.query.bind},
        {"port", c.query.port},
        {"subscription_buffer", c.query.subscription_buffer},
        {"max_frame_bytes", c.query.max_frame_bytes}}},
      {"store",
       {{"feed_retention", c.store.feed_retention},
        {"index_paths", c.store.index_paths},
        {"blob_dir", c.store.blob_dir},
        {"blob_max_bytes", c.store.blob_max_bytes},
        {"priority",
         c.store.priority == graph::PathPriority::sigma_first ? "sigma_first" : "resolution_first"}}},
      {"replication", {{"mode", replication::mode_name(c.replication.mode)}, {"peer", c.replication.peer}}},
  };
}

json defaults() { return to_json(Config{}); }

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

Config from_json(const json& file, const EnvLookup& env) {
  json tree = defaults();
  if (!file.is_null()) {
    if (!file.is_object()) invalid("top level must be an object");
    for (const auto& [section, values] : file.items()) {
      if (!tree.contains(section)) invalid("unknown section \"" + section + "\"");
      if (!values.is_object()) invalid("section \"" + section + "\" must be an object");
      for (const auto& [key, value] : values.items()) {
        auto& slot = tree[section];
        if (!slot.contains(key)) invalid("unknown key \"" + section + "." + key + "\"");
        if (!same_shape(slot[key], value)) invalid("wrong type for \"" + section + "." + key + "\"");
        slot[key] = value;
      }
    }
  }
  if (env) {
    for (auto& [section, values] : tree.items()) {
      for (auto& [key, value] : values.items()) {
        const auto name = "RAIL_" + upper(section) + "_" + upper(key);
        if (auto text = env(name)) value = parse_override(name, value, *text);
      }
    }
  }
  return decode(tree);
}

Config load(const std::optional<std::filesystem::path>& path, const EnvLookup& env) {
  json file;
  if (path) {
    std::ifstream in(*path);
    if (!in) invalid("cannot read " + path->string());
    file = json::parse(in, nullptr, false);
    if (file.is_discarded()) invalid(path->string() + " is not valid JSON");
  }
  return from_json(file, env);
}

}  // namespace rail::config
