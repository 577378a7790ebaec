#include "rail/change_feed.hpp"

#include <algorithm>

#include "rail/error.hpp"

namespace rail {

std::string_view to_string(StoreKind s) noexcept {
  return s == StoreKind::graph ? "graph" : "objects";
}

std::string_view to_string(ChangeKind k) noexcept {
  switch (k) {
    case ChangeKind::edge_upsert: return "edge_upsert";
    case ChangeKind::edge_remove: return "edge_remove";
    case ChangeKind::object_upsert: return "object_upsert";
    case ChangeKind::object_delete: return "object_delete";
  }
  return "unknown";
}

StoreKind store_kind_from_string(std::string_view s) {
  if (s == "graph") return StoreKind::graph;
  if (s == "objects") return StoreKind::objects;
  throw Error(ErrorCode::InvalidArgument, "unknown store kind: " + std::string(s));
}

ChangeKind change_kind_from_string(std::string_view s) {
  if (s == "edge_upsert") return ChangeKind::edge_upsert;
  if (s == "edge_remove") return ChangeKind::edge_remove;
  if (s == "object_upsert") return ChangeKind::object_upsert;
  if (s == "object_delete") return ChangeKind::object_delete;
  throw Error(ErrorCode::InvalidArgument, "unknown change kind: " + std::string(s));
}

void to_json(nlohmann::json& j, const ChangeEvent& e) {
  j = nlohmann::json{{"seq", e.seq},
                     {"store", to_string(e.store)},
                     {"kind", to_string(e.kind)},
                     {"payload", e.payload}};
}

void from_json(const nlohmann::json& j, ChangeEvent& e) {
  e.seq = j.at("seq").get<std::uint64_t>();
  e.store = store_kind_from_string(j.at("store").get<std::string>());
  e.kind = change_kind_from_string(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
}

void CommitNotifier::notify() {
  {
    std::lock_guard lock(mutex_);
    ++generation_;
  }
  cv_.notify_all();
}

std::uint64_t CommitNotifier::wait(std::uint64_t seen,
                                   std::chrono::steady_clock::time_point deadline) {
  std::unique_lock lock(mutex_);
  cv_.wait_until(lock, deadline, [&] { return generation_ != seen; });
  return generation_;
}

std::uint64_t CommitNotifier::generation() const {
  std::lock_guard lock(mutex_);
  return generation_;
}

ChangeLog::ChangeLog(StoreKind store, std::shared_ptr<CommitNotifier> notifier,
                     std::size_t retention)
    : store_(store),
      notifier_(notifier ? std::move(notifier) : std::make_shared<CommitNotifier>()),
      retention_(std::max<std::size_t>(retention, 1)) {}

std::uint64_t ChangeLog::append(ChangeKind kind, nlohmann::json payload) {
  std::uint64_t seq = 0;
  bool visible_now = false;
  {
    std::lock_guard lock(mutex_);
    seq = ++head_;
    events_.push_back(ChangeEvent{seq, store_, kind, std::move(payload)});
    if (!gated_) {
      visible_ = head_;
      visible_now = true;
    }
    trim_locked();
  }
  if (visible_now) notifier_->notify();
  return seq;
}

void ChangeLog::append_replicated(const ChangeEvent& event) {
  bool visible_now = false;
  {
    std::lock_guard lock(mutex_);
    if (event.store != store_ || event.seq != head_ + 1) {
      throw Error(ErrorCode::InvalidArgument, "replicated event out of sequence");
    }
    head_ = event.seq;
    events_.push_back(event);
    if (!gated_) {
      visible_ = head_;
      visible_now = true;
    }
    trim_locked();
  }
  if (visible_now) notifier_->notify();
}

std::uint64_t ChangeLog::head() const {
  std::lock_guard lock(mutex_);
  return head_;
}

std::uint64_t ChangeLog::visible_head() const {
  std::lock_guard lock(mutex_);
  return visible_;
}

void ChangeLog::set_gated(bool gated) {
  {
    std::lock_guard lock(mutex_);
    gated_ = gated;
    if (!gated_) visible_ = head_;
  }
  notifier_->notify();
}

bool ChangeLog::gated() const {
  std::lock_guard lock(mutex_);
  return gated_;
}

void ChangeLog::release(std::uint64_t seq) {
  {
    std::lock_guard lock(mutex_);
    const auto target = std::min(seq, head_);
    if (target <= visible_) return;
    visible_ = target;
  }
  notifier_->notify();
}

void ChangeLog::check_cursor(std::uint64_t cursor) const {
  std::lock_guard lock(mutex_);
  if (cursor + 1 < first_retained_) {
    throw Error(ErrorCode::CursorTooOld,
                "cursor " + std::to_string(cursor) + " precedes retained history");
  }
}

std::vector<ChangeEvent> ChangeLog::read_locked(std::uint64_t cursor, std::uint64_t limit) const {
  if (cursor + 1 < first_retained_) {
    throw Error(ErrorCode::CursorTooOld,
                "cursor " + std::to_string(cursor) + " precedes retained history");
  }
  std::vector<ChangeEvent> out;
  const std::uint64_t last = std::min(limit, head_);
  for (std::uint64_t s = cursor + 1; s <= last; ++s) {
    out.push_back(events_[s - first_retained_]);
  }
  return out;
}

std::vector<ChangeEvent> ChangeLog::read_committed(std::uint64_t cursor,
                                                   std::uint64_t limit) const {
  std::lock_guard lock(mutex_);
  return read_locked(cursor, limit);
}

std::vector<ChangeEvent> ChangeLog::read_visible(std::uint64_t cursor, std::uint64_t limit) const {
  std::lock_guard lock(mutex_);
  return read_locked(cursor, std::min(limit, visible_));
}

void ChangeLog::compact_through(std::uint64_t seq) {
  std::lock_guard lock(mutex_);
  seq = std::min(seq, visible_);
  while (first_retained_ <= seq && !events_.empty()) {
    events_.pop_front();
    ++first_retained_;
  }
}

void ChangeLog::truncate_after(std::uint64_t seq) {
  std::lock_guard lock(mutex_);
  while (head_ > seq && !events_.empty()) {
    events_.pop_back();
    --head_;
  }
  head_ = std::min(head_, seq);
  visible_ = std::min(visible_, head_);
}

void ChangeLog::trim_locked() {
  while (events_.size() > retention_ && first_retained_ <= visible_) {
    events_.pop_front();
    ++first_retained_;
  }
}

ChangeStream::ChangeStream(ChangeLog& log, std::uint64_t cursor) : log_(&log), cursor_(cursor) {
  log.check_cursor(cursor);
}

std::vector<ChangeEvent> ChangeStream::poll() {
  std::vector<ChangeEvent> out(std::make_move_iterator(pending_.begin()),
                               std::make_move_iterator(pending_.end()));
  pending_.clear();
  auto fresh = log_->read_visible(cursor_);
  if (!fresh.empty()) cursor_ = fresh.back().seq;
  out.insert(out.end(), std::make_move_iterator(fresh.begin()),
             std::make_move_iterator(fresh.end()));
  return out;
}

std::optional<ChangeEvent> ChangeStream::next(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (pending_.empty()) {
      const auto gen = log_->notifier().generation();
      auto fresh = log_->read_visible(cursor_);
      if (!fresh.empty()) {
        cursor_ = fresh.back().seq;
        pending_.assign(std::make_move_iterator(fresh.begin()),
                        std::make_move_iterator(fresh.end()));
      } else {
        if (std::chrono::steady_clock::now() >= deadline) return std::nullopt;
        log_->notifier().wait(gen, deadline);
        continue;
      }
    }
    ChangeEvent e = std::move(pending_.front());
    pending_.pop_front();
    return e;
  }
}

}  // namespace rail
