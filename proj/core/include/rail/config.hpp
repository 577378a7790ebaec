#pragma once

// Node configuration. Every key has a default, so an empty file (or none)
// yields a runnable single-node setup. Any key can be overridden from the
// environment as RAIL_<SECTION>_<KEY>, e.g. RAIL_DISCOVERY_PORT=48000.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/ingest.hpp"
#include "rail/replication.hpp"

namespace rail::config {

struct Config {
  struct Node {
    std::string id = "n1";
    std::string advertise_host = "127.0.0.1";
  } node;
  struct Discovery {
    std::uint16_t port = 47474;
    std::string broadcast_addr = "255.255.255.255";
    std::int64_t announce_interval_us = 1'000'000;
  } discovery;
  struct Health {
    std::int64_t heartbeat_interval_us = 500'000;
    int suspect_after = 1;
    int failed_after = 3;
    std::string decision_log = "rail-decisions.jsonl";
  } health;
  struct Ingest {
    std::string bind = "0.0.0.0";
    std::uint16_t port = 47400;
    unsigned workers = 4;
    ingest::UnknownIdPolicy unknown_ids = ingest::UnknownIdPolicy::create_provisional;
  } ingest;
  struct Query {
    std::string bind = "0.0.0.0";
    std::uint16_t port = 47401;
    std::size_t subscription_buffer = 10'000;
    std::uint32_t max_frame_bytes = 16u << 20;
  } query;
  struct Store {
    std::size_t feed_retention = std::size_t{1} << 20;
    std::vector<std::string> index_paths{"marker.*.id"};
    std::string blob_dir;  // empty: in memory
    std::uint64_t blob_max_bytes = std::uint64_t{256} << 20;
    graph::PathPriority priority = graph::PathPriority::sigma_first;
  } store;
  struct Replication {
    replication::Mode mode = replication::Mode::sync;
    std::string peer;  // replication peer address; empty runs unreplicated
  } replication;

  EnvironmentOptions environment_options() const;
};

/// The full tree with defaults, as documented config JSON.
nlohmann::json defaults();
nlohmann::json to_json(const Config& c);

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
/// Reads the process environment.
std::optional<std::string> process_env(const std::string& name);

/// Defaults, overlaid with `file` and then environment overrides. Unknown
/// sections or keys, wrong types and out-of-range values throw
/// InvalidConfig.
Config from_json(const nlohmann::json& file, const EnvLookup& env = process_env);
/// As from_json; a missing path means an empty file. Throws InvalidConfig.
Config load(const std::optional<std::filesystem::path>& path, const EnvLookup& env = process_env);

}  // namespace rail::config
