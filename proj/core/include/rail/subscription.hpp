#pragma once

// Follow-mode queries. A Subscription re-evaluates its query whenever the
// stores' visible heads move past events that can affect it, and turns the
// difference into delta frames:
//
//   {"sub":7,"seq":{"graph":124},"delta":"changed","payload":{...}}
//
// The first frame in the outbox is always the ordinary response frame for
// the initial evaluation. Frames are only released once the state they
// describe is visible (replicated, in synchronous mode).

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/query.hpp"

namespace rail::query {

class Subscription {
 public:
  static constexpr std::size_t kDefaultCapacity = 10'000;

  /// Throws MalformedQuery when `q` is not followable.
  Subscription(Environment& env, Query q, std::size_t capacity = kDefaultCapacity);

  Subscription(const Subscription&) = delete;
  Subscription& operator=(const Subscription&) = delete;

  const Query& query() const { return query_; }

  /// Checks the feeds and queues delta frames. Returns the number queued.
  std::size_t pump();
  /// Removes up to `max` queued frames in delivery order.
  std::vector<nlohmann::json> take(std::size_t max = SIZE_MAX);
  std::size_t pending() const;

  /// Cursors of the last evaluation whose frames were queued.
  Cursors delivered() const;
  bool overflowed() const;
  bool closed() const;
  void close();

 private:
  struct Evaluation {
    std::optional<nlohmann::json> result;
    nlohmann::json error;  // error frame body when result is empty
    Cursors at;
  };

  Evaluation evaluate() const;
  bool relevant(const Cursors& from, const Cursors& to) const;
  void deliver_locked(Evaluation ev);
  void queue_locked(std::vector<nlohmann::json> frames);

  Environment& env_;
  Query query_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  bool started_ = false;
  std::optional<Evaluation> pending_;
  std::optional<nlohmann::json> current_;
  Cursors delivered_;
  std::deque<nlohmann::json> outbox_;
  bool overflowed_ = false;
  bool closed_ = false;
};

/// Client-side fold: applies one frame (the initial response or a delta) to
/// the subscriber's copy of the result. An empty state means the query
/// currently fails (e.g. NoPath).
std::optional<nlohmann::json> apply_frame(const Params& params, std::optional<nlohmann::json> state,
                                          const nlohmann::json& frame);

}  // namespace rail::query
