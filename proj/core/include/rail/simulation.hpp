#pragma once

// Deterministic whole-system simulation on a virtual clock: providers
// emitting datagrams over a lossy network, a master/slave pair with the
// management node watching heartbeats, and consumers following queries.
// One seeded RNG drives every random choice, so a scenario and a seed fully
// determine the report.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/ingest.hpp"
#include "rail/replication.hpp"

namespace rail::sim {

struct NetworkSpec {
  std::int64_t latency_us = 1000;
  std::int64_t jitter_us = 0;
  double drop_prob = 0.0;
  double dup_prob = 0.0;
};

struct EdgeSpec {
  ingest::ExternalRef ref;
  geo::Pose6D pose;
  double sigma = 0.01;
  double resolution = 0.001;
  double noise = 0.0;  // stddev of per-axis translation noise, metres
};

struct ProviderSpec {
  std::string id;
  std::string type = "camera";
  double rate_hz = 10.0;
  std::int64_t start_us = 0;
  std::optional<std::uint64_t> count;  // messages; unbounded until duration_us
  double drop_prob = 0.0;              // on top of the network's
  double dup_prob = 0.0;
  std::vector<EdgeSpec> edges;
};

struct ConsumerSpec {
  std::string id;
  std::vector<nlohmann::json> queries;  // request frames; "follow" ones subscribe
  std::int64_t poll_us = 100'000;
};

enum class FaultKind { kill_module, drop_link, restore_link, partition };

/// Targets: "master", "slave", "mgmt", "query", "worker:<k>",
/// "handler:<provider>", a node name; links are "a-b" where either side may
/// be a node, "master", "slave", "mgmt" or "clients"; partitions are groups
/// such as "master,clients|slave,mgmt". restore_link "all" heals everything.
struct FaultSpec {
  std::int64_t time_us = 0;
  FaultKind kind = FaultKind::kill_module;
  std::string target;
};

struct Scenario {
  std::uint64_t seed = 0;
  std::int64_t duration_us = 0;
  NetworkSpec network;
  replication::Mode mode = replication::Mode::sync;
  std::uint64_t lag_commits = 0;  // async only: commits held back from the slave
  std::size_t workers = 2;
  std::int64_t announce_interval_us = 1'000'000;
  std::int64_t heartbeat_interval_us = 500'000;
  std::int64_t mgmt_tick_us = 100'000;
  std::int64_t server_tick_us = 10'000;
  nlohmann::json map;  // snapshot document loaded into the first master
  std::vector<ProviderSpec> providers;
  std::vector<ConsumerSpec> consumers;
  std::vector<FaultSpec> faults;
};

/// Throws InvalidScenario.
Scenario parse_scenario(const nlohmann::json& doc);

/// A datagram that reached a serving ingest entry point.
struct Delivery {
  std::int64_t time_us = 0;
  std::string node;
  std::uint64_t epoch = 0;
  std::string bytes;
};

struct PromotionEntry {
  std::int64_t time_us = 0;
  replication::PromotionRecord record;
  std::string old_node;
  Cursors acked;  // highest cursors any consumer saw from the old master
  /// Digests of the old master's events up to `acked` and the same prefix
  /// on the promoted node; equal when nothing acknowledged was lost.
  std::string acked_old;
  std::string acked_new;
};

class Simulation {
 public:
  explicit Simulation(Scenario scenario);
  ~Simulation();

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  /// Runs to duration_us (or until nothing is scheduled) and returns the
  /// report. Calling it twice throws InvalidScenario.
  nlohmann::json run();

  const std::vector<Delivery>& deliveries() const;
  const std::vector<PromotionEntry>& promotions() const;
  /// Node currently serving as master; throws NotFound when there is none.
  const Environment& master() const;
  /// Environment of a node, or nullptr.
  const Environment* environment(const std::string& node) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

nlohmann::json run_scenario(const Scenario& scenario);

}  // namespace rail::sim
