#pragma once

// Management side: discovery announcements and heartbeats, the endpoint
// directory consumers and providers use to find the current master, and the
// health monitor that turns missed heartbeats into remediation actions.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace rail::control {

enum class Role { ingest, query, mgmt };

std::string_view role_name(Role r);
/// Throws InvalidArgument on an unknown name.
Role role_from_name(std::string_view name);

/// {"v":1,"role":"ingest","addr":"10.0.0.5:47400","epoch":3,"node":"n1"}
struct Announcement {
  Role role = Role::ingest;
  std::string addr;
  std::uint64_t epoch = 0;
  std::string node;

  friend bool operator==(const Announcement&, const Announcement&) = default;
};

std::string encode_announcement(const Announcement& a);
/// Throws MalformedAnnouncement.
Announcement decode_announcement(std::string_view bytes);

struct ModuleLoad {
  std::size_t providers = 0;
  std::size_t subscriptions = 0;
  double cpu_hint = 0.0;

  friend bool operator==(const ModuleLoad&, const ModuleLoad&) = default;
};

/// Heartbeats share the discovery socket: {"v":1,"hb":"worker-1","load":{..}}
struct Heartbeat {
  std::string module;
  ModuleLoad load;

  friend bool operator==(const Heartbeat&, const Heartbeat&) = default;
};

std::string encode_heartbeat(const Heartbeat& h);


/// Latest endpoint per role. Keeps the highest epoch seen; an entry goes
/// stale when no announcement for its role arrived within three intervals.
class EndpointDirectory {
 public:
  static constexpr std::int64_t kDefaultIntervalUs = 1'000'000;

  explicit EndpointDirectory(std::int64_t interval_us = kDefaultIntervalUs) : interval_us_(interval_us) {}

  /// Returns true when the entry for the role changed.
  bool observe(const Announcement& a, std::int64_t now_us);
  /// Throws NoEndpointKnown.
  Announcement lookup(Role role, std::int64_t now_us) const;
  std::optional<Announcement> peek(Role role) const;

 private:
  struct Entry {
    Announcement announcement;
    std::int64_t seen_us = 0;
  };

  std::int64_t interval_us_;
  std::map<Role, Entry> entries_;
};

enum class HealthState { alive, suspect, failed };
std::string_view health_name(HealthState s);

enum class ModuleKind { worker, query, master, slave, entry_point };
std::string_view kind_name(ModuleKind k);

struct ModuleInfo {
  std::string id;
  Role role = Role::ingest;
  std::string node;
  ModuleKind kind = ModuleKind::worker;
};

struct ModuleHealth {
  ModuleInfo info;
  std::int64_t last_heartbeat_us = 0;
  HealthState state = HealthState::alive;
  ModuleLoad load;
  std::vector<std::string> providers;  // workers only
};

void to_json(nlohmann::json& j, const ModuleHealth& h);

enum class ActionKind { reassign_provider, teardown_query, promote_slave, spawn_slave, respawn, role_unavailable };
std::string_view action_name(ActionKind k);

struct Action {
  ActionKind kind = ActionKind::respawn;
  std::string module;  // the failed module
  Role role = Role::ingest;
  std::string target;  // provider, slave id or node, depending on kind

  friend bool operator==(const Action&, const Action&) = default;
};

void to_json(nlohmann::json& j, const Action& a);
/// Throws InvalidArgument on an unknown name.
ActionKind action_from_name(std::string_view name);

/// Remediation decisions are broadcast too: {"v":1,"decision":{"action":..}}
std::string encode_decision(const Action& a);

using DiscoveryDatagram = std::variant<Announcement, Heartbeat, Action>;
/// Throws MalformedAnnouncement.
DiscoveryDatagram decode_discovery(std::string_view bytes);

struct HealthOptions {
  std::int64_t interval_us = 500'000;
  int suspect_after = 1;  // intervals of silence
  int failed_after = 3;
};

/// Heartbeat bookkeeping and failure detection. Single-threaded; the owner
/// serializes calls.
class HealthMonitor {
 public:
  explicit HealthMonitor(HealthOptions options = {}) : options_(options) {}

  void register_module(const ModuleInfo& info, std::int64_t now_us);
  void remove_module(const std::string& id);

  /// Throws UnknownModule. A failed module stays failed; it has to come back
  /// under a new id.
  const ModuleHealth& process_heartbeat(const std::string& id, std::int64_t now_us,
                                        std::optional<ModuleLoad> load = std::nullopt);
  void set_providers(const std::string& id, std::vector<std::string> providers);

  /// Recomputes every state and returns the actions for modules that failed
  /// since the previous call, ordered by module id.
  std::vector<Action> detect_failures(std::int64_t now_us);

  /// Throws UnknownModule.
  const ModuleHealth& health(const std::string& id) const;
  std::vector<ModuleHealth> modules() const;

 private:
  HealthState state_at(const ModuleHealth& h, std::int64_t now_us) const;

  HealthOptions options_;
  std::map<std::string, ModuleHealth> modules_;
};

/// Append-only line-delimited JSON log of remediation decisions.
class DecisionLog {
 public:
  explicit DecisionLog(const std::filesystem::path& path);
  void append(const nlohmann::json& entry);

 private:
  std::ofstream out_;
};

}  // namespace rail::control
