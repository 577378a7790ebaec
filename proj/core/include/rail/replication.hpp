#pragma once

// Master/slave mirroring by change-feed shipping, and slave promotion.
//
// In synchronous mode the master's feeds are gated: an event becomes visible
// to subscribers only after the slave has applied it, so anything a consumer
// has seen survives a promotion.

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "rail/control.hpp"
#include "rail/environment.hpp"

namespace rail::replication {

enum class Mode { sync, async };

std::string_view mode_name(Mode m);
/// Throws InvalidArgument.
Mode mode_from_name(std::string_view name);

class ReplicationLink {
 public:
  /// Demotes `slave` to a replica of `master`. In sync mode the master's
  /// feeds are gated and every commit ships immediately.
  ReplicationLink(Environment& master, Environment& slave, Mode mode);
  ~ReplicationLink();

  ReplicationLink(const ReplicationLink&) = delete;
  ReplicationLink& operator=(const ReplicationLink&) = delete;

  /// Ships up to `limit` committed events per store that the slave lacks and
  /// mirrors missing blobs. Returns the number of events shipped.
  std::size_t pump(std::size_t limit = SIZE_MAX);
  /// Ships events with seq <= `bound` per store (used to hold a fixed lag).
  std::size_t pump_until(Cursors bound);

  /// Master committed heads minus slave heads.
  Cursors lag() const;
  Mode mode() const { return mode_; }

  /// A disconnected link ships nothing; in sync mode master visibility
  /// stalls until it reconnects.
  void set_connected(bool connected);
  bool connected() const;
  /// True once the slave rejected a shipment from an older epoch.
  bool fenced() const;

  /// Stops shipping and ungates the master (e.g. the slave died).
  void detach();
  bool attached() const;

 private:
  std::size_t pump_locked(Cursors bound);

  Environment& master_;
  Environment& slave_;
  Mode mode_;
  mutable std::mutex mutex_;
  bool connected_ = true;
  bool fenced_ = false;
  bool attached_ = true;
};

struct PromotionRecord {
  control::Role role = control::Role::ingest;
  std::string node;
  std::uint64_t old_epoch = 0;
  std::uint64_t new_epoch = 0;
  Cursors promoted_at;  // the replicated prefix the new master starts from
  Cursors lost;         // commits the old master had beyond that prefix
};

void to_json(nlohmann::json& j, const PromotionRecord& r);

/// Turns a replica into the master at epoch + 1. `master_heads` is the last
/// known committed head of the old master and only feeds the loss report.
/// Throws NoSlaveAvailable when `slave` is null or not a replica.
PromotionRecord promote_slave(Environment* slave, control::Role role, const std::string& node,
                              std::optional<Cursors> master_heads);

/// Announcement the promoted node broadcasts.
control::Announcement announcement_for(const PromotionRecord& r, const std::string& addr);

}  // namespace rail::replication
