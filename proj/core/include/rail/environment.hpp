#pragma once

// The environmental model: spatial graph, objects database and blob store
// behind one write path. The write path enforces master/replica roles and
// epoch fencing and runs the post-commit hook that drives synchronous
// replication.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "rail/blob_store.hpp"
#include "rail/object_store.hpp"
#include "rail/spatial_graph.hpp"

namespace rail {

/// A pair of store cursors (last commit seq per store).
struct Cursors {
  std::uint64_t graph = 0;
  std::uint64_t objects = 0;

  friend bool operator==(const Cursors&, const Cursors&) = default;
};

void to_json(nlohmann::json& j, const Cursors& c);
void from_json(const nlohmann::json& j, Cursors& c);

enum class StoreRole { master, replica };

struct EnvironmentOptions {
  graph::SpatialGraph::Options graph;
  store::ObjectStore::Options objects;
  std::uint64_t blob_max_bytes = store::BlobStore::kDefaultMaxBytes;
  std::optional<std::filesystem::path> blob_dir;
};

class Environment {
 public:
  using Clock = std::function<std::int64_t()>;

  explicit Environment(EnvironmentOptions options = {}, Clock clock = nullptr);

  Environment(const Environment&) = delete;
  Environment& operator=(const Environment&) = delete;

  graph::SpatialGraph& graph() { return *graph_; }
  const graph::SpatialGraph& graph() const { return *graph_; }
  store::ObjectStore& objects() { return *objects_; }
  const store::ObjectStore& objects() const { return *objects_; }
  store::BlobStore& blobs() { return *blobs_; }
  const store::BlobStore& blobs() const { return *blobs_; }
  CommitNotifier& notifier() { return *notifier_; }

  std::int64_t now_us() const { return clock_(); }
  void set_clock(Clock clock);

  /// Runs f(const GraphState&, const ObjectState&, Cursors) with both stores
  /// share-locked, so the pair of states is a consistent snapshot.
  template <typename F>
  decltype(auto) read_snapshot(F&& f) const {
    auto g = graph_->lock_shared();
    auto o = objects_->lock_shared();
    return f(graph_->state_unlocked(), objects_->state_unlocked(),
             Cursors{graph_->log().head(), objects_->log().head()});
  }

  Cursors heads() const;
  Cursors visible_heads() const;

  // Master write path. Each throws FencedWrite on a replica and runs the
  // commit hook after a successful mutation.
  graph::EdgeUpdateResult upsert_edge(const graph::TransformObservation& obs);
  std::size_t remove_provider(const std::string& provider);
  std::uint64_t upsert_object(const ObjectId& id, const store::ObjectUpdate& update);
  std::uint64_t delete_object(const ObjectId& id);
  store::BlobRef put_blob(const std::string& content, const std::string& media_type);
  bool restore_object(const store::ObjectDocument& doc);
  void ensure_frame(const FrameId& frame);

  StoreRole role() const;
  std::uint64_t epoch() const;
  /// Becomes master at `epoch` (must exceed the current epoch).
  void promote(std::uint64_t epoch);
  /// Becomes a replica following a master at `epoch`; writes are rejected.
  void demote(std::uint64_t epoch);
  /// Applies an event shipped by the master at `master_epoch`. Throws
  /// FencedWrite when that epoch is older than ours or we are master.
  void apply_replicated(const ChangeEvent& event, std::uint64_t master_epoch);
  /// Stores a blob shipped by the master; fenced like apply_replicated.
  void apply_replicated_blob(const std::string& content, const std::string& media_type,
                             std::uint64_t master_epoch);

  /// Gate change-feed visibility on replication acknowledgement.
  void set_feed_gating(bool gated);
  void set_commit_hook(std::function<void()> hook);

  nlohmann::json digests() const;

 private:
  void check_writable() const;
  void check_replica(std::uint64_t master_epoch) const;
  void after_commit();

  std::shared_ptr<CommitNotifier> notifier_;
  std::unique_ptr<graph::SpatialGraph> graph_;
  std::unique_ptr<store::ObjectStore> objects_;
  std::unique_ptr<store::BlobStore> blobs_;
  Clock clock_;

  mutable std::mutex role_mutex_;
  StoreRole role_ = StoreRole::master;
  std::uint64_t epoch_ = 1;
  std::function<void()> commit_hook_;
};

}  // namespace rail
