#include "rail/environment.hpp"

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail {

void to_json(nlohmann::json& j, const Cursors& c) {
  j = nlohmann::json{{"graph", c.graph}, {"objects", c.objects}};
}

void from_json(const nlohmann::json& j, Cursors& c) {
  c.graph = j.value("graph", std::uint64_t{0});
  c.objects = j.value("objects", std::uint64_t{0});
}

namespace {

std::unique_ptr<store::BlobBackend> make_backend(const EnvironmentOptions& o) {
  if (o.blob_dir) return std::make_unique<store::DirectoryBlobBackend>(*o.blob_dir);
  return std::make_unique<store::MemoryBlobBackend>();
}

}  // namespace

Environment::Environment(EnvironmentOptions options, Clock clock)
    : notifier_(std::make_shared<CommitNotifier>()),
      graph_(std::make_unique<graph::SpatialGraph>(options.graph, notifier_)),
      objects_(std::make_unique<store::ObjectStore>(options.objects, notifier_)),
      blobs_(std::make_unique<store::BlobStore>(make_backend(options), options.blob_max_bytes)),
      clock_(clock ? std::move(clock) : Clock(graph::wall_clock_us)) {}

void Environment::set_clock(Clock clock) { clock_ = clock ? std::move(clock) : Clock(graph::wall_clock_us); }

Cursors Environment::heads() const { return {graph_->log().head(), objects_->log().head()}; }

Cursors Environment::visible_heads() const {
  return {graph_->log().visible_head(), objects_->log().visible_head()};
}

StoreRole Environment::role() const {
  std::lock_guard lock(role_mutex_);
  return role_;
}

std::uint64_t Environment::epoch() const {
  std::lock_guard lock(role_mutex_);
  return epoch_;
}

void Environment::promote(std::uint64_t epoch) {
  std::lock_guard lock(role_mutex_);
  if (epoch <= epoch_ && role_ == StoreRole::master) {
    throw Error(ErrorCode::InvalidArgument, "promotion epoch must increase");
  }
  epoch_ = std::max(epoch, epoch_);
  role_ = StoreRole::master;
}

void Environment::demote(std::uint64_t epoch) {
  std::lock_guard lock(role_mutex_);
  epoch_ = std::max(epoch, epoch_);
  role_ = StoreRole::replica;
}

void Environment::check_writable() const {
  std::lock_guard lock(role_mutex_);
  if (role_ != StoreRole::master) {
    throw Error(ErrorCode::FencedWrite, "store is a replica at epoch " + std::to_string(epoch_));
  }
}

void Environment::check_replica(std::uint64_t master_epoch) const {
  std::lock_guard lock(role_mutex_);
  if (role_ == StoreRole::master || master_epoch < epoch_) {
    throw Error(ErrorCode::FencedWrite,
                "rejecting replicated write from epoch " + std::to_string(master_epoch) +
                    " (local epoch " + std::to_string(epoch_) + ")");
  }
}

void Environment::apply_replicated_blob(const std::string& content, const std::string& media_type,
                                        std::uint64_t master_epoch) {
  check_replica(master_epoch);
  blobs_->put_blob(content, media_type);
}

void Environment::apply_replicated(const ChangeEvent& event, std::uint64_t master_epoch) {
  check_replica(master_epoch);
  if (event.store == StoreKind::graph) {
    graph_->apply_replicated(event);
  } else {
    objects_->apply_replicated(event);
  }
}

void Environment::set_feed_gating(bool gated) {
  graph_->log().set_gated(gated);
  objects_->log().set_gated(gated);
}

void Environment::set_commit_hook(std::function<void()> hook) {
  std::lock_guard lock(role_mutex_);
  commit_hook_ = std::move(hook);
}

void Environment::after_commit() {
  std::function<void()> hook;
  {
    std::lock_guard lock(role_mutex_);
    hook = commit_hook_;
  }
  if (hook) hook();
}

graph::EdgeUpdateResult Environment::upsert_edge(const graph::TransformObservation& obs) {
  check_writable();
  const auto r = graph_->upsert_edge(obs);
  if (r == graph::EdgeUpdateResult::applied) after_commit();
  return r;
}

std::size_t Environment::remove_provider(const std::string& provider) {
  check_writable();
  const auto n = graph_->remove_provider(provider);
  if (n > 0) after_commit();
  return n;
}

std::uint64_t Environment::upsert_object(const ObjectId& id, const store::ObjectUpdate& update) {
  check_writable();
  const auto rev = objects_->upsert_object(id, update);
  after_commit();
  return rev;
}

std::uint64_t Environment::delete_object(const ObjectId& id) {
  check_writable();
  const auto rev = objects_->delete_object(id);
  after_commit();
  return rev;
}

store::BlobRef Environment::put_blob(const std::string& content, const std::string& media_type) {
  check_writable();
  return blobs_->put_blob(content, media_type);
}

bool Environment::restore_object(const store::ObjectDocument& doc) {
  check_writable();
  const bool changed = objects_->restore(doc);
  if (changed) after_commit();
  return changed;
}

void Environment::ensure_frame(const FrameId& frame) {
  check_writable();
  graph_->ensure_frame(frame);
}

nlohmann::json Environment::digests() const {
  return nlohmann::json{
      {"graph", graph_->digest()}, {"objects", objects_->digest()}, {"blobs", blobs_->digest()}};
}

}  // namespace rail
