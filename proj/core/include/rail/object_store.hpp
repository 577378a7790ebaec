#pragma once

// The objects database: a document store of entities carrying arbitrary
// attribute trees, an optional geometry primitive and references to blobs.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/attributes.hpp"
#include "rail/change_feed.hpp"
#include "rail/geometry.hpp"
#include "rail/ids.hpp"

namespace rail::store {

/// Attribute marking an auto-created placeholder object; its value names the
/// provider that caused the creation.
inline constexpr const char* kProvisionalSourceAttr = "rail.provisional_source";

struct BlobRef {
  std::string hash;  // SHA-256, lowercase hex
  std::uint64_t size = 0;
  std::string media_type;

  friend bool operator==(const BlobRef&, const BlobRef&) = default;
};

void to_json(nlohmann::json& j, const BlobRef& b);
void from_json(const nlohmann::json& j, BlobRef& b);

struct ObjectDocument {
  ObjectId id;
  nlohmann::json attributes = nlohmann::json::object();
  std::optional<geo::GeometryPrimitive> geometry;
  std::map<std::string, BlobRef> blobs;
  std::uint64_t rev = 0;

  /// True iff the document carries kProvisionalSourceAttr.
  bool provisional() const;

  friend bool operator==(const ObjectDocument&, const ObjectDocument&) = default;
};

void to_json(nlohmann::json& j, const ObjectDocument& d);
void from_json(const nlohmann::json& j, ObjectDocument& d);

/// Everything one upsert_object call may change. Applied atomically: either
/// every mutation commits under a single new revision or none does.
struct ObjectUpdate {
  std::vector<AttributeMutation> mutations;
  std::optional<geo::GeometryPrimitive> geometry;
  bool clear_geometry = false;
  std::map<std::string, BlobRef> attach_blobs;
  std::vector<std::string> detach_blobs;
};

void to_json(nlohmann::json& j, const ObjectUpdate& u);
void from_json(const nlohmann::json& j, ObjectUpdate& u);

/// Read-only view of the documents, obtained via ObjectStore::read().
class ObjectState {
 public:
  const std::map<ObjectId, ObjectDocument>& documents() const { return docs_; }
  const ObjectDocument* find(const ObjectId& id) const;

  /// Matching documents in ascending id order. Uses the equality index for
  /// an eq clause on an indexed path when one is present.
  std::vector<ObjectDocument> find_objects(const AttributePredicate& p) const;
  /// Unindexed linear scan (reference behaviour of find_objects).
  std::vector<ObjectDocument> scan(const AttributePredicate& p) const;

  nlohmann::json to_json() const;

 private:
  friend class ObjectStore;

  std::map<ObjectId, ObjectDocument> docs_;
  // concrete path -> scalar value key -> ids
  std::map<std::string, std::map<std::string, std::set<ObjectId>>> index_;
  std::vector<std::vector<std::string>> index_patterns_;
};

class ObjectStore {
 public:
  struct Options {
    /// Dotted patterns whose scalar values get an equality index; "*"
    /// matches exactly one segment.
    std::vector<std::string> index_paths{"marker.*.id"};
    std::size_t feed_retention = ChangeLog::kDefaultRetention;
  };

  explicit ObjectStore(std::shared_ptr<CommitNotifier> notifier = nullptr);
  ObjectStore(Options options, std::shared_ptr<CommitNotifier> notifier);

  ObjectStore(const ObjectStore&) = delete;
  ObjectStore& operator=(const ObjectStore&) = delete;

  /// Creates the document if absent, applies the update, bumps rev once and
  /// emits one change event. Returns the new rev. Throws InvalidPath or
  /// TypeClash (nothing is committed in that case).
  std::uint64_t upsert_object(const ObjectId& id, const ObjectUpdate& update);
  std::uint64_t upsert_object(const ObjectId& id, std::vector<AttributeMutation> mutations,
                              std::optional<geo::GeometryPrimitive> geometry = std::nullopt);

  /// Throws NotFound.
  ObjectDocument get_object(const ObjectId& id) const;
  std::optional<ObjectDocument> try_get(const ObjectId& id) const;
  std::vector<ObjectDocument> find_objects(const AttributePredicate& p) const;

  /// Removes the document and returns its last revision. Spatial frames are
  /// untouched. Throws NotFound.
  std::uint64_t delete_object(const ObjectId& id);

  /// Restores a document verbatim (snapshot import). No-op returning false
  /// when an identical document (ignoring rev) already exists.
  bool restore(const ObjectDocument& doc);

  template <typename F>
  decltype(auto) read(F&& f) const {
    std::shared_lock lock(mutex_);
    return f(state_, log_.head());
  }

  std::shared_lock<std::shared_mutex> lock_shared() const { return std::shared_lock(mutex_); }
  const ObjectState& state_unlocked() const { return state_; }

  std::size_t size() const;

  ChangeLog& log() { return log_; }
  const ChangeLog& log() const { return log_; }

  void apply_replicated(const ChangeEvent& event);

  nlohmann::json to_json() const;
  std::string digest() const;

 private:
  void index_remove(const ObjectDocument& doc);
  void index_add(const ObjectDocument& doc);
  void put_locked(ObjectDocument doc);

  Options options_;
  mutable std::shared_mutex mutex_;
  ObjectState state_;
  std::map<ObjectId, std::uint64_t> tombstones_;
  ChangeLog log_;
};

/// Object change feed restricted to events whose post-state matches a
/// predicate (deletes pass when their pre-state matched).
class ObjectChangeStream {
 public:
  ObjectChangeStream(ChangeLog& log, std::uint64_t cursor, AttributePredicate filter = {});

  std::uint64_t cursor() const { return stream_.cursor(); }
  std::vector<ChangeEvent> poll();
  std::optional<ChangeEvent> next(std::chrono::milliseconds timeout);

  bool passes(const ChangeEvent& e) const;

 private:
  ChangeStream stream_;
  AttributePredicate filter_;
};

inline ObjectChangeStream object_changes(ObjectStore& store, std::uint64_t cursor,
                                         AttributePredicate filter = {}) {
  return ObjectChangeStream(store.log(), cursor, std::move(filter));
}

/// Scalar key used by the equality index, or nullopt for non-scalars.
std::optional<std::string> index_key(const nlohmann::json& value);

}  // namespace rail::store
