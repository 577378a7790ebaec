#pragma once

// Ingest side of the service: the entry point that routes providers to
// handlers, and the per-provider handlers that resolve external ids through
// a change-feed invalidated cache and relay observations into the stores.

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rail/environment.hpp"
#include "rail/provider_message.hpp"

namespace rail::ingest {

enum class UnknownIdPolicy { create_provisional, drop };

struct HandlerOptions {
  UnknownIdPolicy unknown_ids = UnknownIdPolicy::create_provisional;
};

struct ApplyReport {
  std::size_t edges_applied = 0;
  std::size_t edges_superseded = 0;
  std::size_t objects_touched = 0;
  std::size_t items_dropped = 0;

  ApplyReport& operator+=(const ApplyReport& o);
  friend bool operator==(const ApplyReport&, const ApplyReport&) = default;
};

void to_json(nlohmann::json& j, const ApplyReport& r);

/// (kind, ext_id) -> ObjectId, kept coherent with the objects store by
/// consuming its change feed. Not thread-safe; owned by one handler.
class IdCache {
 public:
  struct Entry {
    ObjectId id;
    std::uint64_t loaded_at_seq = 0;
  };

  const Entry* find(const ExternalRef& key) const;
  void put(const ExternalRef& key, Entry entry);
  /// Applies one objects-store event: drops entries that map to the changed
  /// object and entries whose key appears among its marker attributes.
  /// Returns the number of entries dropped.
  std::size_t invalidate(const ChangeEvent& event);
  void clear();
  std::size_t size() const { return entries_.size(); }
  std::uint64_t invalidations() const { return invalidations_; }

 private:
  void drop(const ExternalRef& key);

  std::map<ExternalRef, Entry> entries_;
  std::map<ObjectId, std::set<ExternalRef>> by_object_;
  std::uint64_t invalidations_ = 0;
};

/// Provisional object id for an unregistered external id.
ObjectId provisional_id(const ExternalRef& ref);

/// Serves one provider. Messages are applied strictly one at a time.
class ProviderHandler {
 public:
  ProviderHandler(std::string provider_id, Environment& env, HandlerOptions options = {});

  ProviderHandler(const ProviderHandler&) = delete;
  ProviderHandler& operator=(const ProviderHandler&) = delete;

  const std::string& provider_id() const { return provider_id_; }

  /// Applies every item; item failures are counted, never propagated.
  ApplyReport apply(const ProviderMessage& m);

  /// Cached lookup of an external id. Throws AmbiguousExternalId, or
  /// NotFound when the id is unknown and the policy is drop.
  ObjectId resolve_external_id(const ExternalRef& ref);

  /// find_objects calls issued for id lookups.
  std::uint64_t store_queries() const { return store_queries_; }
  const IdCache& cache() const { return cache_; }
  std::uint64_t faults() const { return faults_; }

 private:
  void drain_feed();
  ObjectId resolve_locked(const ExternalRef& ref);
  void ensure_sensor(const ProviderInfo& p, ApplyReport& report);

  std::string provider_id_;
  Environment& env_;
  HandlerOptions options_;
  std::mutex mutex_;
  IdCache cache_;
  std::uint64_t feed_cursor_ = 0;
  std::set<std::pair<ObjectId, std::uint64_t>> own_writes_;
  bool sensor_known_ = false;
  std::uint64_t store_queries_ = 0;
  std::uint64_t faults_ = 0;
};

/// Drop counters of the entry point.
struct IngestCounters {
  std::uint64_t datagrams = 0;
  std::uint64_t applied = 0;
  std::uint64_t malformed = 0;
  std::uint64_t unsupported_version = 0;
  std::uint64_t invalid_transform = 0;
  std::uint64_t no_workers = 0;
  std::uint64_t handler_faults = 0;
  std::uint64_t reassignments = 0;
};

void to_json(nlohmann::json& j, const IngestCounters& c);

/// The ingest load balancer. Keeps a stable provider -> handler assignment
/// and places new handlers on the least loaded live worker.
class EntryPoint {
 public:
  explicit EntryPoint(Environment& env, HandlerOptions options = {});

  void add_worker(const std::string& worker);
  void set_worker_alive(const std::string& worker, bool alive);
  /// Secondary load signal from the control plane; providers per worker is
  /// the primary one.
  void report_load(const std::string& worker, double cpu_hint);

  /// Handler currently serving `provider_id`, creating or reassigning one as
  /// needed. Throws NoWorkersAvailable.
  std::shared_ptr<ProviderHandler> assign_handler(const std::string& provider_id);
  std::optional<std::string> worker_of(const std::string& provider_id) const;

  /// Marks the handler dead; the next message from its provider is routed to
  /// a fresh handler.
  void kill_handler(const std::string& provider_id);

  /// Decodes and applies one datagram. Every failure is counted and
  /// swallowed; returns the report when the message was applied.
  std::optional<ApplyReport> handle_datagram(std::string_view bytes);
  std::optional<ApplyReport> handle(const ProviderMessage& m);

  IngestCounters counters() const;
  std::map<std::string, std::size_t> providers_per_worker() const;
  std::vector<std::string> providers_on(const std::string& worker) const;

 private:
  struct Worker {
    bool alive = true;
    double cpu_hint = 0.0;
    std::set<std::string> providers;
  };
  struct Assignment {
    std::string worker;
    std::shared_ptr<ProviderHandler> handler;
    bool dead = false;
  };

  std::shared_ptr<ProviderHandler> assign_locked(const std::string& provider_id);

  Environment& env_;
  HandlerOptions options_;
  mutable std::mutex mutex_;
  std::map<std::string, Worker> workers_;
  std::map<std::string, Assignment> assignments_;
  IngestCounters counters_;
};

}  // namespace rail::ingest
