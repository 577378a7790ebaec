#pragma once

// The spatial database: a directed multigraph whose nodes are entity frames
// and whose edges are the latest transform observation per
// (parent, child, provider). Queries search it for the composed transform
// with the lowest accumulated uncertainty.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "rail/change_feed.hpp"
#include "rail/geometry.hpp"
#include "rail/ids.hpp"

namespace rail::graph {

/// One weighted, timestamped edge sample. `pose` expresses the child frame
/// in the parent frame. `sigma` is a 1-sd positional uncertainty (m),
/// `resolution` the smallest distinguishable displacement (m, larger is
/// coarser).
struct TransformObservation {
  FrameId parent;
  FrameId child;
  std::string provider;
  geo::Pose6D pose;
  double sigma = 0.0;
  double resolution = 0.0;
  std::int64_t time_us = 0;
  std::uint64_t seq = 0;

  friend bool operator==(const TransformObservation&, const TransformObservation&) = default;
};

void to_json(nlohmann::json& j, const TransformObservation& o);
void from_json(const nlohmann::json& j, TransformObservation& o);

/// Throws rail::Error(InvalidObservation) describing the first violated rule.
void validate(const TransformObservation& obs);

struct EdgeKey {
  FrameId parent;
  FrameId child;
  std::string provider;

  friend auto operator<=>(const EdgeKey&, const EdgeKey&) = default;
  friend bool operator==(const EdgeKey&, const EdgeKey&) = default;
};

void to_json(nlohmann::json& j, const EdgeKey& k);
void from_json(const nlohmann::json& j, EdgeKey& k);

inline EdgeKey key_of(const TransformObservation& o) { return {o.parent, o.child, o.provider}; }

enum class EdgeUpdateResult { applied, superseded };

/// Query-side filters. Every present bound must be > 0.
struct PathConstraints {
  std::optional<double> max_sigma;
  std::optional<double> max_resolution;
  std::optional<std::int64_t> max_age_us;
  std::optional<std::uint32_t> max_hops;

  /// Throws InvalidArgument on a non-positive bound.
  void validate() const;
};

void to_json(nlohmann::json& j, const PathConstraints& c);
void from_json(const nlohmann::json& j, PathConstraints& c);

enum class Direction { forward, inverse };

struct PathStep {
  EdgeKey key;
  Direction direction = Direction::forward;

  friend bool operator==(const PathStep&, const PathStep&) = default;
};

/// `pose` maps coordinates of the destination frame into the source frame.
/// sigma = sqrt(sum of squared edge sigmas), resolution = max edge resolution.
struct PathResult {
  geo::Pose6D pose;
  double sigma = 0.0;
  double resolution = 0.0;
  std::uint32_t hops = 0;
  std::vector<PathStep> edges;
  std::optional<std::int64_t> oldest_time_us;
};

void to_json(nlohmann::json& j, const PathResult& r);
void from_json(const nlohmann::json& j, PathResult& r);

// NoPath reasons carried in rail::Error::reason().
inline constexpr const char* kReasonUnknownFrame = "unknown_frame";
inline constexpr const char* kReasonDisconnected = "disconnected";
inline constexpr const char* kReasonConstraintFiltered = "constraint_filtered";

/// Which objective dominates when ranking candidate paths. Uncertainty comes
/// first by default; the remaining levels are always hop count, then the
/// lexicographic EdgeKey sequence.
enum class PathPriority { sigma_first, resolution_first };

/// Immutable view of the graph contents. Obtained through
/// SpatialGraph::read(); all queries are const and lock-free on this type.
class GraphState {
 public:
  bool has_frame(const FrameId& f) const { return frames_.contains(f); }
  const std::set<FrameId>& frames() const { return frames_; }
  const std::map<EdgeKey, TransformObservation>& edges() const { return edges_; }
  /// Keys of edges touching `f` in either direction, or nullptr.
  const std::set<EdgeKey>* incident(const FrameId& f) const {
    auto it = incident_.find(f);
    return it == incident_.end() ? nullptr : &it->second;
  }

  /// Throws rail::Error(NoPath) with a reason when no admissible path exists.
  PathResult best_path(const FrameId& src, const FrameId& dst, const PathConstraints& c,
                       std::int64_t now_us, PathPriority priority = PathPriority::sigma_first) const;

  /// Optimal paths from `src` to every admissible reachable frame (src
  /// included, with the empty path). Same ranking as best_path.
  std::map<FrameId, PathResult> best_paths_from(const FrameId& src, const PathConstraints& c,
                                                std::int64_t now_us,
                                                PathPriority priority = PathPriority::sigma_first) const;

  /// Reachability ignoring all constraints.
  bool connected(const FrameId& a, const FrameId& b) const;

  /// {"frames":[...],"edges":[...]} sorted; the canonical export form.
  nlohmann::json to_json() const;

 private:
  friend class SpatialGraph;

  std::set<FrameId> frames_;
  std::map<EdgeKey, TransformObservation> edges_;
  std::map<FrameId, std::set<EdgeKey>> incident_;
};

class SpatialGraph {
 public:
  struct Options {
    std::size_t feed_retention = ChangeLog::kDefaultRetention;
    PathPriority priority = PathPriority::sigma_first;
  };

  explicit SpatialGraph(std::shared_ptr<CommitNotifier> notifier = nullptr);
  SpatialGraph(Options options, std::shared_ptr<CommitNotifier> notifier);

  SpatialGraph(const SpatialGraph&) = delete;
  SpatialGraph& operator=(const SpatialGraph&) = delete;

  /// Last-write-wins per EdgeKey, ordered by (time_us, seq). Frames are
  /// created on first reference. Throws InvalidObservation.
  EdgeUpdateResult upsert_edge(const TransformObservation& obs);
  /// Removes every edge from `provider`; one change event per edge.
  std::size_t remove_provider(const std::string& provider);

  PathResult best_path(const FrameId& src, const FrameId& dst, const PathConstraints& c = {},
                       std::optional<std::int64_t> now_us = std::nullopt) const;

  /// Runs `f(const GraphState&, std::uint64_t committed_head)` under a
  /// shared lock.
  template <typename F>
  decltype(auto) read(F&& f) const {
    std::shared_lock lock(mutex_);
    return f(state_, log_.head());
  }

  std::shared_lock<std::shared_mutex> lock_shared() const { return std::shared_lock(mutex_); }
  /// Caller must hold lock_shared().
  const GraphState& state_unlocked() const { return state_; }

  PathPriority priority() const { return options_.priority; }
  std::size_t edge_count() const;
  std::size_t frame_count() const;

  ChangeLog& log() { return log_; }
  const ChangeLog& log() const { return log_; }
  /// Graph changes after `cursor`, in commit order, each exactly once.
  ChangeStream graph_changes(std::uint64_t cursor) { return ChangeStream(log_, cursor); }

  /// Applies an event produced by a master's log (replication).
  void apply_replicated(const ChangeEvent& event);

  /// Adds a frame with no edges (snapshot import of isolated frames).
  void ensure_frame(const FrameId& frame);

  nlohmann::json to_json() const;
  /// SHA-256 of the canonical export.
  std::string digest() const;

 private:
  void insert_locked(const TransformObservation& obs);
  void erase_locked(const EdgeKey& key);

  Options options_;
  mutable std::shared_mutex mutex_;
  GraphState state_;
  ChangeLog log_;
};

/// Microseconds since the Unix epoch from the system clock.
std::int64_t wall_clock_us();

}  // namespace rail::graph
