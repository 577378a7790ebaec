#pragma once

// Sequenced commit log shared by the stores. Every mutation appends one
// ChangeEvent; change-feed streams and replicas consume it by cursor.
//
// Two heads are tracked: `head()` is the last committed event, and
// `visible_head()` the last event released to subscribers. They differ only
// while a synchronous replica has not yet applied the tail, which is what lets
// "delivered to a subscriber" imply "present on the replica".

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace rail {

enum class StoreKind { graph, objects };
enum class ChangeKind { edge_upsert, edge_remove, object_upsert, object_delete };

std::string_view to_string(StoreKind s) noexcept;
std::string_view to_string(ChangeKind k) noexcept;
StoreKind store_kind_from_string(std::string_view s);
ChangeKind change_kind_from_string(std::string_view s);

struct ChangeEvent {
  std::uint64_t seq = 0;
  StoreKind store = StoreKind::graph;
  ChangeKind kind = ChangeKind::edge_upsert;
  nlohmann::json payload;

  friend bool operator==(const ChangeEvent&, const ChangeEvent&) = default;
};

void to_json(nlohmann::json& j, const ChangeEvent& e);
void from_json(const nlohmann::json& j, ChangeEvent& e);

/// Wakes waiters on any of several logs (a subscription watches two stores).
class CommitNotifier {
 public:
  void notify();
  /// Blocks until the generation moves past `seen` or the deadline passes.
  /// Returns the current generation.
  std::uint64_t wait(std::uint64_t seen, std::chrono::steady_clock::time_point deadline);
  std::uint64_t generation() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t generation_ = 0;
};

class ChangeLog {
 public:
  static constexpr std::size_t kDefaultRetention = std::size_t{1} << 20;

  ChangeLog(StoreKind store, std::shared_ptr<CommitNotifier> notifier,
            std::size_t retention = kDefaultRetention);

  StoreKind store() const { return store_; }

  /// Appends a new event and returns its seq. Caller holds the owning store's
  /// write lock so append order is commit order.
  std::uint64_t append(ChangeKind kind, nlohmann::json payload);
  /// Appends an event replicated from a master; its seq must be head()+1.
  void append_replicated(const ChangeEvent& event);

  std::uint64_t head() const;
  std::uint64_t visible_head() const;

  /// When gated, visibility advances only through release().
  void set_gated(bool gated);
  bool gated() const;
  void release(std::uint64_t seq);

  /// Events with cursor < seq <= min(limit, head). Throws CursorTooOld when
  /// the history after `cursor` has been compacted away.
  std::vector<ChangeEvent> read_committed(std::uint64_t cursor,
                                          std::uint64_t limit = UINT64_MAX) const;
  /// As read_committed, bounded by visible_head().
  std::vector<ChangeEvent> read_visible(std::uint64_t cursor,
                                        std::uint64_t limit = UINT64_MAX) const;

  /// Throws CursorTooOld if `cursor` can no longer be served.
  void check_cursor(std::uint64_t cursor) const;

  /// Drops retained events with seq <= `seq` (never beyond visible_head()).
  void compact_through(std::uint64_t seq);
  /// Discards everything after `seq` (used when a promoted replica truncates
  /// to its replicated prefix; only valid on logs nobody has seen past seq).
  void truncate_after(std::uint64_t seq);

  CommitNotifier& notifier() { return *notifier_; }

 private:
  std::vector<ChangeEvent> read_locked(std::uint64_t cursor, std::uint64_t limit) const;
  void trim_locked();

  StoreKind store_;
  std::shared_ptr<CommitNotifier> notifier_;
  std::size_t retention_;

  mutable std::mutex mutex_;
  std::deque<ChangeEvent> events_;
  std::uint64_t first_retained_ = 1;
  std::uint64_t head_ = 0;
  std::uint64_t visible_ = 0;
  bool gated_ = false;
};

/// One consumer's position in a log. Each event is yielded exactly once.
class ChangeStream {
 public:
  ChangeStream(ChangeLog& log, std::uint64_t cursor);

  std::uint64_t cursor() const { return cursor_; }
  /// All visible events after the cursor; advances the cursor.
  std::vector<ChangeEvent> poll();
  /// Waits up to `timeout` for the next visible event.
  std::optional<ChangeEvent> next(std::chrono::milliseconds timeout);

 private:
  ChangeLog* log_;
  std::uint64_t cursor_;
  std::deque<ChangeEvent> pending_;
};

}  // namespace rail
