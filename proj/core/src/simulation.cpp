#include "rail/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <queue>
#include <random>
#include <set>
#include <sstream>

#include "rail/control.hpp"
#include "rail/digest.hpp"
#include "rail/error.hpp"
#include "rail/query.hpp"
#include "rail/snapshot.hpp"
#include "rail/subscription.hpp"

namespace rail::sim {

using nlohmann::json;

namespace {

constexpr const char* kMgmtNode = "n1";
constexpr const char* kClients = "clients";
constexpr int kIngestPort = 47400;
constexpr int kQueryPort = 47401;

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::InvalidScenario, "invalid scenario: " + what);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) invalid(where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      invalid("unknown field " + where + "." + key);
    }
  }
}

std::int64_t integer(const json& obj, const char* key, std::int64_t fallback, const std::string& where,
                     std::int64_t min = 0) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number_integer()) invalid(where + "." + key + " must be an integer");
  if (it->is_number_unsigned() && it->get<std::uint64_t>() > static_cast<std::uint64_t>(INT64_MAX)) {
    invalid(where + "." + key + " is out of range");
  }
  const auto v = it->get<std::int64_t>();
  if (v < min) invalid(where + "." + key + " must be >= " + std::to_string(min));
  return v;
}

double number(const json& obj, const char* key, double fallback, const std::string& where, double min,
              double max) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  if (!it->is_number()) invalid(where + "." + key + " must be a number");
  const auto v = it->get<double>();
  if (!std::isfinite(v) || v < min || v > max) {
    invalid(where + "." + key + " must lie in [" + std::to_string(min) + ", " + std::to_string(max) + "]");
  }
  return v;
}

std::string text(const json& obj, const char* key, const std::string& where, std::optional<std::string> fallback = {}) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    if (fallback) return *fallback;
    invalid(where + "." + key + " is required");
  }
  if (!it->is_string() || it->get_ref<const std::string&>().empty()) {
    invalid(where + "." + key + " must be a non-empty string");
  }
  return it->get<std::string>();
}

const json& array_at(const json& obj, const char* key, const std::string& where) {
  static const json kEmpty = json::array();
  auto it = obj.find(key);
  if (it == obj.end()) return kEmpty;
  if (!it->is_array()) invalid(where + "." + key + " must be an array");
  return *it;
}

bool is_node_name(std::string_view s) {
  return s.size() > 1 && s[0] == 'n' &&
         std::all_of(s.begin() + 1, s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

bool is_endpoint_name(const std::string& s) {
  return s == "master" || s == "slave" || s == "mgmt" || s == kClients || is_node_name(s);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

void validate_fault_target(const FaultSpec& f, std::size_t workers, const std::string& where) {
  const auto& t = f.target;
  switch (f.kind) {
    case FaultKind::kill_module: {
      if (t == "master" || t == "slave" || t == "mgmt" || t == "query" || is_node_name(t)) return;
      if (t.rfind("handler:", 0) == 0 && t.size() > 8) return;
      if (t.rfind("worker:", 0) == 0) {
        const auto k = t.substr(7);
        if (!k.empty() && std::all_of(k.begin(), k.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
            k.size() < 6 && static_cast<std::size_t>(std::stoi(k)) < workers) {
          return;
        }
      }
      invalid(where + ".target \"" + t + "\" names no module");
    }
    case FaultKind::drop_link:
    case FaultKind::restore_link: {
      if (f.kind == FaultKind::restore_link && t == "all") return;
      const auto ends = split(t, '-');
      if (ends.size() != 2 || !is_endpoint_name(ends[0]) || !is_endpoint_name(ends[1]) || ends[0] == ends[1]) {
        invalid(where + ".target \"" + t + "\" must be \"a-b\"");
      }
      return;
    }
    case FaultKind::partition: {
      const auto groups = split(t, '|');
      if (groups.size() < 2) invalid(where + ".target needs at least two groups");
      for (const auto& g : groups) {
        const auto members = split(g, ',');
        if (members.empty()) invalid(where + ".target has an empty group");
        for (const auto& m : members) {
          if (!is_endpoint_name(m)) invalid(where + ".target member \"" + m + "\" is unknown");
        }
      }
      return;
    }
  }
}

FaultKind fault_kind(const std::string& s, const std::string& where) {
  if (s == "kill_module") return FaultKind::kill_module;
  if (s == "drop_link") return FaultKind::drop_link;
  if (s == "restore_link") return FaultKind::restore_link;
  if (s == "partition") return FaultKind::partition;
  invalid(where + ".kind \"" + s + "\" is unknown");
}

std::string fault_kind_name(FaultKind k) {
  switch (k) {
    case FaultKind::kill_module: return "kill_module";
    case FaultKind::drop_link: return "drop_link";
    case FaultKind::restore_link: return "restore_link";
    case FaultKind::partition: return "partition";
  }
  return "?";
}

json cursors_json(const Cursors& c) { return json{{"graph", c.graph}, {"objects", c.objects}}; }

/// Hash of a store's committed events up to an absolute seq bound.
std::string prefix_digest(const Environment& env, const Cursors& bound) {
  json events = json::array();
  for (const auto& e : env.graph().log().read_committed(0, bound.graph)) events.push_back(e);
  for (const auto& e : env.objects().log().read_committed(0, bound.objects)) events.push_back(e);
  return sha256_hex(events.dump());
}

}  // namespace

Scenario parse_scenario(const json& doc) {
  check_keys(doc,
             {"seed", "duration_us", "network", "replication", "workers", "announce_interval_us",
              "heartbeat_interval_us", "mgmt_tick_us", "server_tick_us", "map", "providers", "consumers",
              "faults"},
             "scenario");
  Scenario s;
  if (auto it = doc.find("seed"); it != doc.end()) {
    if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
      invalid("scenario.seed must be a non-negative integer");
    }
    s.seed = it->get<std::uint64_t>();
  }
  s.duration_us = integer(doc, "duration_us", 0, "scenario");
  s.workers = static_cast<std::size_t>(integer(doc, "workers", 2, "scenario", 1));
  s.announce_interval_us = integer(doc, "announce_interval_us", s.announce_interval_us, "scenario", 1);
  s.heartbeat_interval_us = integer(doc, "heartbeat_interval_us", s.heartbeat_interval_us, "scenario", 1);
  s.mgmt_tick_us = integer(doc, "mgmt_tick_us", s.mgmt_tick_us, "scenario", 1);
  s.server_tick_us = integer(doc, "server_tick_us", s.server_tick_us, "scenario", 1);

  if (auto it = doc.find("network"); it != doc.end()) {
    check_keys(*it, {"latency_us", "jitter_us", "drop_prob", "dup_prob"}, "network");
    s.network.latency_us = integer(*it, "latency_us", s.network.latency_us, "network");
    s.network.jitter_us = integer(*it, "jitter_us", 0, "network");
    s.network.drop_prob = number(*it, "drop_prob", 0.0, "network", 0.0, 1.0);
    s.network.dup_prob = number(*it, "dup_prob", 0.0, "network", 0.0, 1.0);
  }
  if (auto it = doc.find("replication"); it != doc.end()) {
    check_keys(*it, {"mode", "lag_commits"}, "replication");
    try {
      s.mode = replication::mode_from_name(text(*it, "mode", "replication", std::string("sync")));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::InvalidScenario) throw;
      invalid(std::string("replication.mode: ") + e.what());
    }
    s.lag_commits = static_cast<std::uint64_t>(integer(*it, "lag_commits", 0, "replication"));
    if (s.lag_commits > 0 && s.mode == replication::Mode::sync) {
      invalid("replication.lag_commits requires async mode");
    }
  }
  if (auto it = doc.find("map"); it != doc.end()) {
    if (!it->is_object()) invalid("scenario.map must be a snapshot object");
    s.map = *it;
  }

  std::set<std::string> ids;
  const auto& providers = array_at(doc, "providers", "scenario");
  for (std::size_t i = 0; i < providers.size(); ++i) {
    const auto where = "providers[" + std::to_string(i) + "]";
    const auto& p = providers[i];
    check_keys(p, {"id", "type", "rate_hz", "start_us", "count", "drop_prob", "dup_prob", "edges"}, where);
    ProviderSpec spec;
    spec.id = text(p, "id", where);
    if (!ids.insert(spec.id).second) invalid(where + ".id \"" + spec.id + "\" is not unique");
    spec.type = text(p, "type", where, std::string("camera"));
    spec.rate_hz = number(p, "rate_hz", spec.rate_hz, where, 1e-3, 1e6);
    spec.start_us = integer(p, "start_us", 0, where);
    if (p.contains("count")) spec.count = static_cast<std::uint64_t>(integer(p, "count", 0, where));
    spec.drop_prob = number(p, "drop_prob", 0.0, where, 0.0, 1.0);
    spec.dup_prob = number(p, "dup_prob", 0.0, where, 0.0, 1.0);
    const auto& edges = array_at(p, "edges", where);
    if (edges.size() > ingest::kMaxObservations) invalid(where + ".edges exceeds one datagram");
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto ew = where + ".edges[" + std::to_string(k) + "]";
      const auto& e = edges[k];
      check_keys(e, {"kind", "ext_id", "pose", "sigma", "resolution", "noise"}, ew);
      EdgeSpec es;
      es.ref = {text(e, "kind", ew), text(e, "ext_id", ew)};
      if (auto pose = e.find("pose"); pose != e.end()) {
        try {
          es.pose = pose->get<geo::Pose6D>();
        } catch (const std::exception& ex) {
          invalid(ew + ".pose: " + ex.what());
        }
      }
      es.sigma = number(e, "sigma", es.sigma, ew, 0.0, 1e9);
      es.resolution = number(e, "resolution", es.resolution, ew, 0.0, 1e9);
      es.noise = number(e, "noise", 0.0, ew, 0.0, 1e9);
      spec.edges.push_back(std::move(es));
    }
    s.providers.push_back(std::move(spec));
  }

  ids.clear();
  const auto& consumers = array_at(doc, "consumers", "scenario");
  for (std::size_t i = 0; i < consumers.size(); ++i) {
    const auto where = "consumers[" + std::to_string(i) + "]";
    const auto& c = consumers[i];
    check_keys(c, {"id", "queries", "poll_us"}, where);
    ConsumerSpec spec;
    spec.id = text(c, "id", where);
    if (!ids.insert(spec.id).second) invalid(where + ".id \"" + spec.id + "\" is not unique");
    spec.poll_us = integer(c, "poll_us", spec.poll_us, where, 1);
    const auto& queries = array_at(c, "queries", where);
    for (std::size_t k = 0; k < queries.size(); ++k) {
      try {
        (void)query::parse_query(queries[k]);
      } catch (const Error& e) {
        invalid(where + ".queries[" + std::to_string(k) + "]: " + e.what());
      }
      spec.queries.push_back(queries[k]);
    }
    s.consumers.push_back(std::move(spec));
  }

  const auto& faults = array_at(doc, "faults", "scenario");
  for (std::size_t i = 0; i < faults.size(); ++i) {
    const auto where = "faults[" + std::to_string(i) + "]";
    const auto& f = faults[i];
    check_keys(f, {"time_us", "kind", "target"}, where);
    FaultSpec spec;
    spec.time_us = integer(f, "time_us", 0, where);
    spec.kind = fault_kind(text(f, "kind", where), where);
    spec.target = text(f, "target", where);
    validate_fault_target(spec, s.workers, where);
    s.faults.push_back(std::move(spec));
  }
  return s;
}

// ---------------------------------------------------------------------------

struct Simulation::Impl {
  struct Event {
    std::int64_t time;
    std::uint64_t order;
    std::function<void()> fn;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return std::tie(a.time, a.order) > std::tie(b.time, b.order);
    }
  };

  struct Node {
    bool alive = true;
    std::unique_ptr<Environment> env;
    std::unique_ptr<ingest::EntryPoint> entry;  // set while serving as master
    std::set<std::string> dead_workers;
  };

  struct Session {
    std::string node;
    std::uint64_t epoch = 0;
    std::vector<std::size_t> query_index;
    std::vector<std::unique_ptr<query::Subscription>> subs;
    bool broken = false;
  };

  struct Provider {
    Provider(ProviderSpec s, std::int64_t interval_us) : spec(std::move(s)), dir(interval_us) {}

    ProviderSpec spec;
    control::EndpointDirectory dir;
    std::uint64_t seq = 0;
    std::uint64_t sent = 0, no_endpoint = 0, delivered = 0, rejected = 0, lost_at_worker = 0, applied = 0;
    ingest::ApplyReport totals;
    std::map<std::uint64_t, std::uint64_t> applied_by_epoch;
  };

  struct Consumer {
    Consumer(ConsumerSpec s, std::int64_t interval_us) : spec(std::move(s)), dir(interval_us) {}

    ConsumerSpec spec;
    std::vector<query::Query> parsed;
    control::EndpointDirectory dir;
    std::uint64_t session = 0;
    std::optional<std::uint64_t> last_epoch;
    std::map<std::size_t, std::optional<json>> state;
    std::uint64_t sessions = 0, connect_failures = 0, frames = 0, deltas = 0, overflows = 0;
    std::uint64_t responses_ok = 0, responses_error = 0;
    json switches = json::array();
  };

  Scenario sc;
  std::mt19937_64 rng;
  std::int64_t now = 0;
  std::uint64_t order = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue;
  bool ran = false;

  std::map<std::string, Node> nodes;
  std::string master_node;
  std::string slave_node;
  int next_node = 2;
  std::unique_ptr<replication::ReplicationLink> link;
  control::HealthMonitor health;

  std::vector<Provider> providers;
  std::vector<Consumer> consumers;
  std::map<std::uint64_t, Session> sessions;
  std::uint64_t next_session = 1;
  std::set<std::pair<std::string, std::string>> blocked;

  std::map<std::pair<std::string, std::uint64_t>, Cursors> acked;
  std::vector<Delivery> deliveries;
  std::vector<PromotionEntry> promotions;
  json decisions = json::array();
  std::map<std::string, ingest::IngestCounters> retired_counters;
  std::map<std::int64_t, std::uint64_t> latency;
  std::uint64_t net_sent = 0, net_dropped = 0, net_duplicated = 0, net_blocked = 0;

  explicit Impl(Scenario s)
      : sc(std::move(s)),
        rng(sc.seed),
        health(control::HealthOptions{sc.heartbeat_interval_us, 1, 3}) {
    for (const auto& p : sc.providers) providers.emplace_back(p, sc.announce_interval_us);
    for (const auto& c : sc.consumers) {
      Consumer state(c, sc.announce_interval_us);
      for (const auto& q : c.queries) {
        try {
          state.parsed.push_back(query::parse_query(q));
        } catch (const Error& e) {
          invalid("consumer " + c.id + ": " + e.what());
        }
      }
      consumers.push_back(std::move(state));
    }

    nodes[kMgmtNode];
    const auto first = spawn_env_node();
    if (!sc.map.is_null()) {
      try {
        snapshot::import_json(*nodes[first].env, sc.map);
      } catch (const Error& e) {
        invalid(std::string("map: ") + e.what());
      }
    }
    start_serving(first);
    spawn_slave();
  }

  // -- primitives ----------------------------------------------------------

  double uniform() { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

  double gaussian() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  void at(std::int64_t time, std::function<void()> fn) { queue.push({time, order++, std::move(fn)}); }

  /// Runs `fn` at `start` and then every `period` while it returns true.
  void every(std::int64_t start, std::int64_t period, std::function<bool()> fn) {
    at(start, [this, start, period, fn] {
      if (fn() && start + period <= sc.duration_us) every(start + period, period, fn);
    });
  }

  static std::pair<std::string, std::string> link_key(const std::string& a, const std::string& b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
  }

  bool reachable(const std::string& a, const std::string& b) const {
    return a == b || !blocked.contains(link_key(a, b));
  }

  /// Lossy datagram. Delivery runs `on_arrival`, possibly twice.
  void datagram(const std::string& from, const std::string& to, double extra_drop, double extra_dup,
                const std::function<void()>& on_arrival) {
    ++net_sent;
    if (!reachable(from, to)) {
      ++net_blocked;
      return;
    }
    const double drop = std::min(1.0, sc.network.drop_prob + extra_drop);
    const double dup = std::min(1.0, sc.network.dup_prob + extra_dup);
    const bool dropped = uniform() < drop;
    const bool duplicated = uniform() < dup;
    if (dropped) {
      ++net_dropped;
      return;
    }
    const int copies = duplicated ? 2 : 1;
    if (duplicated) ++net_duplicated;
    for (int i = 0; i < copies; ++i) {
      const auto jitter = sc.network.jitter_us > 0
                              ? static_cast<std::int64_t>(uniform() * static_cast<double>(sc.network.jitter_us))
                              : 0;
      at(now + sc.network.latency_us + jitter, on_arrival);
    }
  }

  /// Ordered, lossless stream; false when the path is cut.
  bool stream(const std::string& from, const std::string& to, std::function<void()> on_arrival) {
    if (!reachable(from, to)) return false;
    at(now + sc.network.latency_us, std::move(on_arrival));
    return true;
  }

  std::string resolve_endpoint(const std::string& name) const {
    if (name == "master") return master_node;
    if (name == "slave") return slave_node;
    if (name == "mgmt") return kMgmtNode;
    return name;
  }

  void decide(json entry) {
    entry["time_us"] = now;
    decisions.push_back(std::move(entry));
  }

  // -- nodes ---------------------------------------------------------------

  std::string spawn_env_node() {
    const auto name = "n" + std::to_string(next_node++);
    auto& n = nodes[name];
    n.env = std::make_unique<Environment>(EnvironmentOptions{}, [this] { return now; });
    every(now, sc.heartbeat_interval_us, [this, name] { return heartbeat(name); });
    return name;
  }

  static std::string worker_name(std::size_t k) { return "worker-" + std::to_string(k); }
  static std::string env_module(const std::string& node) { return "env@" + node; }

  void start_serving(const std::string& name) {
    auto& n = nodes.at(name);
    n.entry = std::make_unique<ingest::EntryPoint>(*n.env);
    n.dead_workers.clear();
    for (std::size_t k = 0; k < sc.workers; ++k) {
      n.entry->add_worker(worker_name(k));
      health.register_module({worker_name(k) + "@" + name, control::Role::ingest, name, control::ModuleKind::worker},
                             now);
    }
    health.register_module({env_module(name), control::Role::ingest, name, control::ModuleKind::master}, now);
    master_node = name;
    announce(name);
    every(now + sc.announce_interval_us, sc.announce_interval_us, [this, name] { return announce(name); });
  }

  void stop_serving(Node& n, const std::string& name) {
    if (!n.entry) return;
    retired_counters[name] = n.entry->counters();
    n.entry.reset();
    for (auto& [id, s] : sessions) {
      if (s.node == name) s.broken = true;
    }
  }

  void spawn_slave() {
    if (master_node.empty() || !nodes.at(master_node).alive) return;
    link.reset();
    if (!slave_node.empty()) health.remove_module(env_module(slave_node));
    const auto name = spawn_env_node();
    link = std::make_unique<replication::ReplicationLink>(*nodes.at(master_node).env, *nodes.at(name).env, sc.mode);
    slave_node = name;
    health.register_module({env_module(name), control::Role::ingest, name, control::ModuleKind::slave}, now);
  }

  bool heartbeat(const std::string& name) {
    auto& n = nodes.at(name);
    if (!n.alive) return false;
    std::vector<std::string> modules{env_module(name)};
    if (n.entry) {
      for (std::size_t k = 0; k < sc.workers; ++k) {
        if (!n.dead_workers.contains(worker_name(k))) modules.push_back(worker_name(k) + "@" + name);
      }
    }
    for (const auto& m : modules) {
      const auto bytes = control::encode_heartbeat({m, {}});
      datagram(name, kMgmtNode, 0.0, 0.0, [this, bytes] {
        if (!nodes.at(kMgmtNode).alive) return;
        const auto hb = std::get<control::Heartbeat>(control::decode_discovery(bytes));
        try {
          health.process_heartbeat(hb.module, now);
        } catch (const Error&) {
          // a module the monitor already dropped
        }
      });
    }
    return true;
  }

  bool announce(const std::string& name) {
    auto& n = nodes.at(name);
    if (!n.alive || !n.entry) return false;
    const auto epoch = n.env->epoch();
    for (const auto role : {control::Role::ingest, control::Role::query}) {
      const auto port = role == control::Role::ingest ? kIngestPort : kQueryPort;
      const auto bytes = control::encode_announcement({role, name + ":" + std::to_string(port), epoch, name});
      for (const auto& [other, _] : nodes) {
        if (other == name) continue;
        datagram(name, other, 0.0, 0.0, [this, other, bytes] { hear_announcement(other, bytes); });
      }
      for (std::size_t i = 0; i < providers.size(); ++i) {
        datagram(name, kClients, 0.0, 0.0, [this, i, bytes] {
          providers[i].dir.observe(control::decode_announcement(bytes), now);
        });
      }
      for (std::size_t i = 0; i < consumers.size(); ++i) {
        datagram(name, kClients, 0.0, 0.0, [this, i, bytes] {
          consumers[i].dir.observe(control::decode_announcement(bytes), now);
        });
      }
    }
    return true;
  }

  void hear_announcement(const std::string& name, const std::string& bytes) {
    auto& n = nodes.at(name);
    if (!n.alive || !n.entry) return;
    const auto a = control::decode_announcement(bytes);
    if (a.epoch <= n.env->epoch()) return;
    // A newer master exists: step down.
    stop_serving(n, name);
    n.env->demote(a.epoch);
    decide({{"action", "fenced"}, {"node", name}, {"epoch", a.epoch}});
  }

  // -- management ----------------------------------------------------------

  bool mgmt_tick() {
    if (!nodes.at(kMgmtNode).alive) return false;
    if (auto it = nodes.find(master_node); it != nodes.end() && it->second.entry) {
      for (std::size_t k = 0; k < sc.workers; ++k) {
        try {
          health.set_providers(worker_name(k) + "@" + master_node, it->second.entry->providers_on(worker_name(k)));
        } catch (const Error&) {
        }
      }
    }
    for (const auto& action : health.detect_failures(now)) {
      decide(action);
      execute(action);
    }
    return true;
  }

  void execute(const control::Action& action) {
    switch (action.kind) {
      case control::ActionKind::reassign_provider: {
        const auto at_sign = action.module.find('@');
        const auto worker = action.module.substr(0, at_sign);
        const auto node = action.module.substr(at_sign + 1);
        auto& n = nodes.at(node);
        if (!n.entry) return;
        n.entry->set_worker_alive(worker, false);
        try {
          n.entry->assign_handler(action.target);
        } catch (const Error&) {
          decide({{"action", "reassign_failed"}, {"target", action.target}});
        }
        return;
      }
      case control::ActionKind::promote_slave:
        promote(action.target.substr(action.target.find('@') + 1));
        return;
      case control::ActionKind::spawn_slave:
        if (action.target == slave_node) spawn_slave();
        return;
      default:
        return;
    }
  }

  void promote(const std::string& name) {
    auto& sn = nodes.at(name);
    if (!sn.alive || name != slave_node) return;
    const auto old = master_node;
    auto& on = nodes.at(old);
    link.reset();
    const auto old_epoch = on.env->epoch();
    const auto record = replication::promote_slave(sn.env.get(), control::Role::ingest, name, on.env->heads());

    PromotionEntry entry;
    entry.time_us = now;
    entry.record = record;
    entry.old_node = old;
    if (auto it = acked.find({old, old_epoch}); it != acked.end()) entry.acked = it->second;
    entry.acked_old = prefix_digest(*on.env, entry.acked);
    entry.acked_new = prefix_digest(*sn.env, entry.acked);
    promotions.push_back(entry);

    // A live old master keeps serving until it hears the new epoch.
    if (!on.alive) stop_serving(on, old);
    health.remove_module(env_module(old));
    for (std::size_t k = 0; k < sc.workers; ++k) health.remove_module(worker_name(k) + "@" + old);
    health.remove_module(env_module(name));
    slave_node.clear();
    decide({{"action", "promoted"}, {"record", record}});
    start_serving(name);
    at(now + sc.announce_interval_us, [this] {
      if (slave_node.empty()) spawn_slave();
    });
  }

  // -- faults --------------------------------------------------------------

  void fault(const FaultSpec& f) {
    decide({{"action", "fault"}, {"kind", fault_kind_name(f.kind)}, {"target", f.target}});
    switch (f.kind) {
      case FaultKind::kill_module: kill(f.target); return;
      case FaultKind::drop_link:
      case FaultKind::restore_link: {
        if (f.target == "all") {
          blocked.clear();
          return;
        }
        const auto ends = split(f.target, '-');
        const auto key = link_key(resolve_endpoint(ends[0]), resolve_endpoint(ends[1]));
        if (f.kind == FaultKind::drop_link) {
          blocked.insert(key);
        } else {
          blocked.erase(key);
        }
        return;
      }
      case FaultKind::partition: {
        std::vector<std::vector<std::string>> groups;
        for (const auto& g : split(f.target, '|')) {
          groups.emplace_back();
          for (const auto& m : split(g, ',')) groups.back().push_back(resolve_endpoint(m));
        }
        for (std::size_t i = 0; i < groups.size(); ++i) {
          for (std::size_t j = i + 1; j < groups.size(); ++j) {
            for (const auto& a : groups[i]) {
              for (const auto& b : groups[j]) {
                if (a != b) blocked.insert(link_key(a, b));
              }
            }
          }
        }
        return;
      }
    }
  }

  void kill(const std::string& target) {
    auto* master = master_node.empty() ? nullptr : &nodes.at(master_node);
    if (target.rfind("worker:", 0) == 0) {
      if (!master || !master->entry) return;
      // The entry point learns about it from the management node.
      master->dead_workers.insert(worker_name(std::stoul(target.substr(7))));
      return;
    }
    if (target.rfind("handler:", 0) == 0) {
      if (master && master->entry) master->entry->kill_handler(target.substr(8));
      return;
    }
    if (target == "query") {
      for (auto& [id, s] : sessions) {
        if (s.node == master_node) s.broken = true;
      }
      return;
    }
    const auto name = resolve_endpoint(target);
    auto it = nodes.find(name);
    if (it == nodes.end()) return;
    it->second.alive = false;
    if (name == slave_node && link) link->set_connected(false);
  }

  // -- data path -----------------------------------------------------------

  bool provider_tick(std::size_t i) {
    auto& p = providers[i];
    if (p.spec.count && p.seq >= *p.spec.count) return false;
    ingest::ProviderMessage m;
    m.provider = {p.spec.id, p.spec.type};
    m.seq = ++p.seq;
    m.time_us = now;
    for (const auto& e : p.spec.edges) {
      auto pose = e.pose;
      if (e.noise > 0) {
        pose.t.x += e.noise * gaussian();
        pose.t.y += e.noise * gaussian();
        pose.t.z += e.noise * gaussian();
      }
      m.observations.emplace_back(ingest::Detection{e.ref, pose, e.sigma, e.resolution});
    }
    ++p.sent;
    std::string target;
    try {
      target = p.dir.lookup(control::Role::ingest, now).node;
    } catch (const Error&) {
      ++p.no_endpoint;
      return true;
    }
    auto bytes = ingest::encode_provider_message(m);
    const auto sent_at = now;
    datagram(kClients, target, p.spec.drop_prob, p.spec.dup_prob,
             [this, i, target, bytes = std::move(bytes), sent_at] { ingest_arrival(i, target, bytes, sent_at); });
    return true;
  }

  void ingest_arrival(std::size_t i, const std::string& name, const std::string& bytes, std::int64_t sent_at) {
    auto& n = nodes.at(name);
    auto& p = providers[i];
    if (!n.alive) return;
    if (!n.entry) {
      ++p.rejected;
      return;
    }
    if (const auto w = n.entry->worker_of(p.spec.id); w && n.dead_workers.contains(*w)) {
      ++p.lost_at_worker;
      return;
    }
    const auto epoch = n.env->epoch();
    deliveries.push_back({now, name, epoch, bytes});
    ++p.delivered;
    if (auto r = n.entry->handle_datagram(bytes)) {
      ++p.applied;
      p.totals += *r;
      ++p.applied_by_epoch[epoch];
      std::int64_t bucket = 1;
      while (bucket < now - sent_at) bucket *= 2;
      ++latency[bucket];
    }
  }

  bool server_tick() {
    if (link) {
      const bool up = nodes.at(master_node).alive && nodes.at(slave_node).alive && reachable(master_node, slave_node);
      link->set_connected(up);
      if (up) {
        if (sc.mode == replication::Mode::sync) {
          link->pump();
        } else {
          const auto heads = nodes.at(master_node).env->heads();
          const auto hold = [this](std::uint64_t h) { return h > sc.lag_commits ? h - sc.lag_commits : 0; };
          link->pump_until({hold(heads.graph), hold(heads.objects)});
        }
      }
    }
    for (std::size_t ci = 0; ci < consumers.size(); ++ci) {
      const auto sid = consumers[ci].session;
      auto it = sessions.find(sid);
      if (it == sessions.end() || it->second.broken) continue;
      auto& s = it->second;
      const auto& n = nodes.at(s.node);
      if (!n.alive || !n.entry) {
        s.broken = true;
        continue;
      }
      for (std::size_t k = 0; k < s.subs.size() && !s.broken; ++k) {
        auto& sub = *s.subs[k];
        sub.pump();
        for (auto& frame : sub.take()) {
          const auto qi = s.query_index[k];
          if (!stream(s.node, kClients, [this, ci, sid, qi, frame = std::move(frame)] {
                frame_arrival(ci, sid, qi, frame);
              })) {
            s.broken = true;
            break;
          }
        }
      }
    }
    return true;
  }

  void frame_arrival(std::size_t ci, std::uint64_t sid, std::size_t qi, const json& frame) {
    auto& c = consumers[ci];
    if (c.session != sid) return;
    auto& s = sessions.at(sid);
    ++c.frames;
    if (frame.value("error", "") == "SubscriptionOverflow") {
      ++c.overflows;
      s.broken = true;
      return;
    }
    if (frame.contains("delta")) ++c.deltas;
    c.state[qi] = query::apply_frame(c.parsed[qi].params, c.state[qi], frame);
    auto& ack = acked[{s.node, s.epoch}];
    for (const char* key : {"as_of", "seq"}) {
      if (auto it = frame.find(key); it != frame.end() && it->is_object()) {
        ack.graph = std::max(ack.graph, it->value("graph", std::uint64_t{0}));
        ack.objects = std::max(ack.objects, it->value("objects", std::uint64_t{0}));
      }
    }
  }

  bool consumer_tick(std::size_t ci) {
    auto& c = consumers[ci];
    if (auto it = sessions.find(c.session); it != sessions.end()) {
      auto& s = it->second;
      const auto known = c.dir.peek(control::Role::query);
      if (!s.broken && known && known->epoch > s.epoch) s.broken = true;
      if (!s.broken) {
        poll_requests(ci, s.node);
        return true;
      }
      sessions.erase(it);
      c.session = 0;
    }
    control::Announcement a;
    try {
      a = c.dir.lookup(control::Role::query, now);
    } catch (const Error&) {
      ++c.connect_failures;
      return true;
    }
    auto nit = nodes.find(a.node);
    if (nit == nodes.end() || !nit->second.alive || !nit->second.entry || !reachable(kClients, a.node)) {
      ++c.connect_failures;
      return true;
    }
    auto& env = *nit->second.env;
    Session s;
    s.node = a.node;
    s.epoch = env.epoch();
    for (std::size_t k = 0; k < c.parsed.size(); ++k) {
      if (!c.parsed[k].follow) continue;
      s.query_index.push_back(k);
      s.subs.push_back(std::make_unique<query::Subscription>(env, c.parsed[k]));
    }
    c.state.clear();
    const auto sid = next_session++;
    sessions.emplace(sid, std::move(s));
    c.session = sid;
    ++c.sessions;
    if (c.last_epoch != env.epoch()) {
      c.switches.push_back({{"time_us", now}, {"node", a.node}, {"epoch", env.epoch()}});
      c.last_epoch = env.epoch();
    }
    poll_requests(ci, a.node);
    return true;
  }

  /// One-shot queries: request and response each cross the network once.
  void poll_requests(std::size_t ci, const std::string& node) {
    const auto& c = consumers[ci];
    for (std::size_t k = 0; k < c.parsed.size(); ++k) {
      if (c.parsed[k].follow) continue;
      stream(kClients, node, [this, ci, k, node] {
        const auto& n = nodes.at(node);
        if (!n.alive || !n.entry) return;
        auto response = query::handle_request(*n.env, consumers[ci].spec.queries[k]);
        stream(node, kClients, [this, ci, response = std::move(response)] {
          auto& c = consumers[ci];
          if (response.value("ok", false)) {
            ++c.responses_ok;
          } else {
            ++c.responses_error;
          }
        });
      });
    }
  }

  // -- driver --------------------------------------------------------------

  json run() {
    if (ran) invalid("a simulation runs once");
    ran = true;
    for (const auto& f : sc.faults) at(f.time_us, [this, f] { fault(f); });
    every(sc.mgmt_tick_us, sc.mgmt_tick_us, [this] { return mgmt_tick(); });
    every(0, sc.server_tick_us, [this] { return server_tick(); });
    for (std::size_t i = 0; i < providers.size(); ++i) {
      const auto period = std::max<std::int64_t>(1, std::llround(1e6 / providers[i].spec.rate_hz));
      every(providers[i].spec.start_us, period, [this, i] { return provider_tick(i); });
    }
    for (std::size_t i = 0; i < consumers.size(); ++i) {
      every(0, consumers[i].spec.poll_us, [this, i] { return consumer_tick(i); });
    }
    while (!queue.empty() && queue.top().time <= sc.duration_us) {
      auto ev = queue.top();
      queue.pop();
      now = ev.time;
      ev.fn();
    }
    now = sc.duration_us;
    return report();
  }

  json report() const {
    json r;
    r["seed"] = sc.seed;
    r["duration_us"] = sc.duration_us;
    r["master"] = master_node;
    r["epoch"] = nodes.at(master_node).env->epoch();

    json ps = json::object();
    for (const auto& p : providers) {
      json by_epoch = json::object();
      for (const auto& [e, n] : p.applied_by_epoch) by_epoch[std::to_string(e)] = n;
      ps[p.spec.id] = {{"sent", p.sent},
                       {"no_endpoint", p.no_endpoint},
                       {"delivered", p.delivered},
                       {"rejected", p.rejected},
                       {"lost_at_worker", p.lost_at_worker},
                       {"applied", p.applied},
                       {"edges_applied", p.totals.edges_applied},
                       {"edges_superseded", p.totals.edges_superseded},
                       {"items_dropped", p.totals.items_dropped},
                       {"applied_by_epoch", by_epoch}};
    }
    r["providers"] = ps;

    json cs = json::object();
    for (const auto& c : consumers) {
      json states = json::object();
      for (const auto& [k, v] : c.state) states[std::to_string(k)] = v ? *v : json();
      cs[c.spec.id] = {{"sessions", c.sessions},
                       {"connect_failures", c.connect_failures},
                       {"frames", c.frames},
                       {"deltas", c.deltas},
                       {"overflows", c.overflows},
                       {"responses_ok", c.responses_ok},
                       {"responses_error", c.responses_error},
                       {"switches", c.switches},
                       {"state_digest", sha256_hex(states.dump())}};
    }
    r["consumers"] = cs;

    json pr = json::array();
    for (const auto& p : promotions) {
      pr.push_back({{"time_us", p.time_us},
                    {"old_node", p.old_node},
                    {"record", p.record},
                    {"acked", cursors_json(p.acked)},
                    {"acked_preserved", p.acked_old == p.acked_new}});
    }
    r["promotions"] = pr;
    r["decisions"] = decisions;

    json stores = json::object();
    json ingest_counters = json::object();
    for (const auto& [name, n] : nodes) {
      if (!n.env) continue;
      stores[name] = {{"alive", n.alive},
                      {"role", n.env->role() == StoreRole::master ? "master" : "replica"},
                      {"epoch", n.env->epoch()},
                      {"heads", cursors_json(n.env->heads())},
                      {"digests", n.env->digests()}};
      if (n.entry) {
        ingest_counters[name] = n.entry->counters();
      } else if (auto it = retired_counters.find(name); it != retired_counters.end()) {
        ingest_counters[name] = it->second;
      }
    }
    r["stores"] = stores;
    r["ingest"] = ingest_counters;

    json hist = json::object();
    for (const auto& [bucket, n] : latency) hist[std::to_string(bucket)] = n;
    r["apply_latency_us"] = hist;
    r["network"] = {{"sent", net_sent}, {"dropped", net_dropped}, {"duplicated", net_duplicated}, {"blocked", net_blocked}};
    return r;
  }
};

Simulation::Simulation(Scenario scenario) : impl_(std::make_unique<Impl>(std::move(scenario))) {}
Simulation::~Simulation() = default;

json Simulation::run() { return impl_->run(); }

const std::vector<Delivery>& Simulation::deliveries() const { return impl_->deliveries; }
const std::vector<PromotionEntry>& Simulation::promotions() const { return impl_->promotions; }

const Environment& Simulation::master() const {
  auto it = impl_->nodes.find(impl_->master_node);
  if (it == impl_->nodes.end() || !it->second.env) throw Error(ErrorCode::NotFound, "no master node");
  return *it->second.env;
}

const Environment* Simulation::environment(const std::string& node) const {
  auto it = impl_->nodes.find(node);
  return it == impl_->nodes.end() ? nullptr : it->second.env.get();
}

json run_scenario(const Scenario& scenario) { return Simulation(scenario).run(); }

}  // namespace rail::sim
