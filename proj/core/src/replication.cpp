#include "rail/replication.hpp"

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail::replication {

using nlohmann::json;

std::string_view mode_name(Mode m) { return m == Mode::sync ? "sync" : "async"; }

Mode mode_from_name(std::string_view name) {
  if (name == "sync") return Mode::sync;
  if (name == "async") return Mode::async;
  throw Error(ErrorCode::InvalidArgument, "unknown replication mode \"" + std::string(name) + "\"");
}

ReplicationLink::ReplicationLink(Environment& master, Environment& slave, Mode mode)
    : master_(master), slave_(slave), mode_(mode) {
  slave_.demote(master_.epoch());
  if (mode_ == Mode::sync) {
    master_.set_feed_gating(true);
    master_.set_commit_hook([this] { pump(); });
  }
  pump();
}

ReplicationLink::~ReplicationLink() { detach(); }

void ReplicationLink::detach() {
  std::lock_guard lock(mutex_);
  if (!attached_) return;
  attached_ = false;
  if (mode_ == Mode::sync) {
    master_.set_commit_hook(nullptr);
    master_.set_feed_gating(false);
  }
}

bool ReplicationLink::attached() const {
  std::lock_guard lock(mutex_);
  return attached_;
}

void ReplicationLink::set_connected(bool connected) {
  std::lock_guard lock(mutex_);
  connected_ = connected;
}

bool ReplicationLink::connected() const {
  std::lock_guard lock(mutex_);
  return connected_;
}

bool ReplicationLink::fenced() const {
  std::lock_guard lock(mutex_);
  return fenced_;
}

Cursors ReplicationLink::lag() const {
  const auto m = master_.heads();
  const auto s = slave_.heads();
  return {m.graph > s.graph ? m.graph - s.graph : 0, m.objects > s.objects ? m.objects - s.objects : 0};
}

std::size_t ReplicationLink::pump(std::size_t limit) {
  std::lock_guard lock(mutex_);
  const auto heads = slave_.heads();
  const auto ahead = [limit](std::uint64_t from) -> std::uint64_t {
    return limit >= UINT64_MAX - from ? UINT64_MAX : from + limit;
  };
  return pump_locked({ahead(heads.graph), ahead(heads.objects)});
}

std::size_t ReplicationLink::pump_until(Cursors bound) {
  std::lock_guard lock(mutex_);
  return pump_locked(bound);
}

std::size_t ReplicationLink::pump_locked(Cursors bound) {
  if (!attached_ || !connected_ || fenced_) return 0;
  const auto epoch = master_.epoch();
  std::size_t shipped = 0;
  try {
    const auto heads = slave_.heads();
    for (const auto& e : master_.graph().log().read_committed(heads.graph, bound.graph)) {
      slave_.apply_replicated(e, epoch);
      ++shipped;
    }
    for (const auto& e : master_.objects().log().read_committed(heads.objects, bound.objects)) {
      slave_.apply_replicated(e, epoch);
      ++shipped;
    }
    if (master_.blobs().size() != slave_.blobs().size()) {
      for (const auto& ref : master_.blobs().manifest()) {
        if (slave_.blobs().describe(ref.hash)) continue;
        slave_.apply_replicated_blob(master_.blobs().get_blob(ref), ref.media_type, epoch);
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::FencedWrite) throw;
    fenced_ = true;
  }
  if (mode_ == Mode::sync) {
    const auto replicated = slave_.heads();
    master_.graph().log().release(replicated.graph);
    master_.objects().log().release(replicated.objects);
  }
  return shipped;
}

void to_json(json& j, const PromotionRecord& r) {
  j = json{{"role", control::role_name(r.role)},
           {"node", r.node},
           {"old_epoch", r.old_epoch},
           {"new_epoch", r.new_epoch},
           {"promoted_at", r.promoted_at},
           {"lost", r.lost}};
}

PromotionRecord promote_slave(Environment* slave, control::Role role, const std::string& node,
                              std::optional<Cursors> master_heads) {
  if (slave == nullptr || slave->role() != StoreRole::replica) {
    throw Error(ErrorCode::NoSlaveAvailable, "no live slave for role " + std::string(control::role_name(role)));
  }
  PromotionRecord r;
  r.role = role;
  r.node = node;
  r.old_epoch = slave->epoch();
  r.new_epoch = r.old_epoch + 1;
  r.promoted_at = slave->heads();
  if (master_heads) {
    r.lost = {master_heads->graph > r.promoted_at.graph ? master_heads->graph - r.promoted_at.graph : 0,
              master_heads->objects > r.promoted_at.objects ? master_heads->objects - r.promoted_at.objects : 0};
  }
  slave->promote(r.new_epoch);
  return r;
}

control::Announcement announcement_for(const PromotionRecord& r, const std::string& addr) {
  return {r.role, addr, r.new_epoch, r.node};
}

}  // namespace rail::replication
