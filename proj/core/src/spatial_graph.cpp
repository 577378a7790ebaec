#include "rail/spatial_graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>

#include <nlohmann/json.hpp>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::graph {

using nlohmann::json;

std::int64_t wall_clock_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void to_json(json& j, const TransformObservation& o) {
  j = json{{"parent", o.parent},     {"child", o.child},     {"provider", o.provider},
           {"pose", o.pose},         {"sigma", o.sigma},     {"res", o.resolution},
           {"time_us", o.time_us},   {"seq", o.seq}};
}

void from_json(const json& j, TransformObservation& o) {
  o.parent = j.at("parent").get<FrameId>();
  o.child = j.at("child").get<FrameId>();
  o.provider = j.at("provider").get<std::string>();
  o.pose = j.at("pose").get<geo::Pose6D>();
  o.sigma = j.at("sigma").get<double>();
  o.resolution = j.at("res").get<double>();
  o.time_us = j.at("time_us").get<std::int64_t>();
  o.seq = j.at("seq").get<std::uint64_t>();
}

void validate(const TransformObservation& obs) {
  if (obs.parent.empty() || obs.child.empty()) {
    throw Error(ErrorCode::InvalidObservation, "observation frames must be set");
  }
  if (obs.parent == obs.child) {
    throw Error(ErrorCode::InvalidObservation, "parent and child frame are identical");
  }
  if (obs.provider.empty()) {
    throw Error(ErrorCode::InvalidObservation, "observation provider must be non-empty");
  }
  if (!(obs.sigma >= 0.0) || !std::isfinite(obs.sigma)) {
    throw Error(ErrorCode::InvalidObservation, "sigma must be finite and >= 0");
  }
  if (!(obs.resolution > 0.0) || !std::isfinite(obs.resolution)) {
    throw Error(ErrorCode::InvalidObservation, "resolution must be finite and > 0");
  }
}

void to_json(json& j, const EdgeKey& k) {
  j = json{{"parent", k.parent}, {"child", k.child}, {"provider", k.provider}};
}

void from_json(const json& j, EdgeKey& k) {
  k.parent = j.at("parent").get<FrameId>();
  k.child = j.at("child").get<FrameId>();
  k.provider = j.at("provider").get<std::string>();
}

void PathConstraints::validate() const {
  if (max_sigma && !(*max_sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "max_sigma must be > 0");
  if (max_resolution && !(*max_resolution > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "max_resolution must be > 0");
  }
  if (max_age_us && *max_age_us <= 0) throw Error(ErrorCode::InvalidArgument, "max_age_us must be > 0");
  if (max_hops && *max_hops == 0) throw Error(ErrorCode::InvalidArgument, "max_hops must be > 0");
}

void to_json(json& j, const PathConstraints& c) {
  j = json::object();
  if (c.max_sigma) j["max_sigma"] = *c.max_sigma;
  if (c.max_resolution) j["max_resolution"] = *c.max_resolution;
  if (c.max_age_us) j["max_age_us"] = *c.max_age_us;
  if (c.max_hops) j["max_hops"] = *c.max_hops;
}

void from_json(const json& j, PathConstraints& c) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "constraints must be an object");
  c = {};
  if (j.contains("max_sigma")) c.max_sigma = j.at("max_sigma").get<double>();
  if (j.contains("max_resolution")) c.max_resolution = j.at("max_resolution").get<double>();
  if (j.contains("max_age_us")) c.max_age_us = j.at("max_age_us").get<std::int64_t>();
  if (j.contains("max_hops")) c.max_hops = j.at("max_hops").get<std::uint32_t>();
  c.validate();
}

void to_json(json& j, const PathResult& r) {
  json edges = json::array();
  for (const auto& step : r.edges) {
    json e = step.key;
    e["dir"] = step.direction == Direction::forward ? "forward" : "inverse";
    edges.push_back(std::move(e));
  }
  j = json{{"pose", r.pose},         {"sigma", r.sigma}, {"resolution", r.resolution},
           {"hops", r.hops},         {"edges", edges},
           {"oldest_time_us", r.oldest_time_us ? json(*r.oldest_time_us) : json(nullptr)}};
}

void from_json(const json& j, PathResult& r) {
  r.pose = j.at("pose").get<geo::Pose6D>();
  r.sigma = j.at("sigma").get<double>();
  r.resolution = j.at("resolution").get<double>();
  r.hops = j.at("hops").get<std::uint32_t>();
  r.edges.clear();
  for (const auto& e : j.at("edges")) {
    r.edges.push_back({e.get<EdgeKey>(), e.at("dir").get<std::string>() == "forward"
                                             ? Direction::forward
                                             : Direction::inverse});
  }
  const auto& oldest = j.at("oldest_time_us");
  r.oldest_time_us = oldest.is_null() ? std::nullopt : std::optional(oldest.get<std::int64_t>());
}

namespace {

// A partial path in the label-setting search. Labels are ranked
// lexicographically by (primary, secondary, hops, edge-key sequence), where
// primary/secondary are the squared-sigma sum and the max resolution in the
// order chosen by PathPriority.
struct Label {
  FrameId node;
  double sigma_sq = 0.0;
  double resolution = 0.0;
  std::uint32_t hops = 0;
  geo::Pose6D pose;
  std::optional<std::int64_t> oldest;
  std::vector<PathStep> steps;
};

int compare_keys(const std::vector<PathStep>& a, const std::vector<PathStep>& b) {
  const auto n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i].key < b[i].key) return -1;
    if (b[i].key < a[i].key) return 1;
  }
  if (a.size() != b.size()) return a.size() < b.size() ? -1 : 1;
  return 0;
}

struct LabelOrder {
  PathPriority priority;

  // true iff a ranks strictly before b
  bool less(const Label& a, const Label& b) const {
    const double a1 = priority == PathPriority::sigma_first ? a.sigma_sq : a.resolution;
    const double b1 = priority == PathPriority::sigma_first ? b.sigma_sq : b.resolution;
    if (a1 != b1) return a1 < b1;
    const double a2 = priority == PathPriority::sigma_first ? a.resolution : a.sigma_sq;
    const double b2 = priority == PathPriority::sigma_first ? b.resolution : b.sigma_sq;
    if (a2 != b2) return a2 < b2;
    if (a.hops != b.hops) return a.hops < b.hops;
    return compare_keys(a.steps, b.steps) < 0;
  }
};

// `a` dominates `b` (same node) when every extension of `a` ranks no worse
// than the same extension of `b` and stays admissible whenever b's does.
// Rounding of the sigma sum is monotone, and key sequences only matter
// between equal-length paths. A sigma gap wider than `robust_gap` survives
// any further chain of additions, so it decides on its own.
struct Dominance {
  bool sigma_first = true;
  bool bounded_hops = false;
  bool bounded_resolution = false;
  double robust_gap = 0.0;

  bool operator()(const Label& a, const Label& b) const {
    const bool res_ok = a.resolution <= b.resolution;
    if (b.sigma_sq - a.sigma_sq > robust_gap && (!bounded_hops || a.hops <= b.hops) &&
        (res_ok || (sigma_first && !bounded_resolution))) {
      return true;
    }
    if (a.sigma_sq > b.sigma_sq || !res_ok) return false;
    if (a.hops != b.hops) return a.hops < b.hops;
    return compare_keys(a.steps, b.steps) <= 0;
  }
};

PathResult to_result(const Label& l) {
  PathResult r;
  r.pose = l.pose;
  r.sigma = std::sqrt(l.sigma_sq);
  r.resolution = l.resolution;
  r.hops = l.hops;
  r.edges = l.steps;
  r.oldest_time_us = l.oldest;
  return r;
}

class PathSearch {
 public:
  PathSearch(const GraphState& g, const PathConstraints& c, std::int64_t now_us,
             PathPriority priority)
      : graph_(g), constraints_(c), now_us_(now_us), order_{priority} {
    // Each addition can shrink a gap by at most one ulp of the running sum,
    // and no simple path is longer than the frame count or heavier than all
    // edges together. The factor 4 absorbs rounding in these bounds.
    double total = 0.0;
    for (const auto& [key, edge] : g.edges()) total += edge.sigma * edge.sigma;
    const auto steps = static_cast<double>(g.frames().size() + 1);
    dominates_ = {priority == PathPriority::sigma_first, c.max_hops.has_value(), c.max_resolution.has_value(),
                  4.0 * steps * std::numeric_limits<double>::epsilon() * total};
  }

  // Runs until `stop_at` is settled (or exhaustion when not given). Returns
  // the settled best label per frame, first-settled = optimal.
  std::map<FrameId, Label> run(const FrameId& src, const FrameId* stop_at) {
    std::map<FrameId, Label> best;
    auto cmp = [this](const std::size_t a, const std::size_t b) {
      return order_.less(arena_[b], arena_[a]);
    };
    std::priority_queue<std::size_t, std::vector<std::size_t>, decltype(cmp)> open(cmp);

    Label start;
    start.node = src;
    arena_.push_back(std::move(start));
    open.push(0);

    while (!open.empty()) {
      const std::size_t idx = open.top();
      open.pop();
      const Label label = arena_[idx];
      auto& front = settled_[label.node];
      if (std::any_of(front.begin(), front.end(),
                      [&](const Label& s) { return dominates_(s, label); })) {
        continue;
      }
      front.push_back(label);
      best.try_emplace(label.node, label);
      if (stop_at && label.node == *stop_at) break;

      const auto* incident = graph_.incident(label.node);
      if (incident == nullptr) continue;
      for (const EdgeKey& key : *incident) {
        const TransformObservation& edge = graph_.edges().at(key);
        if (constraints_.max_age_us && now_us_ - edge.time_us > *constraints_.max_age_us) continue;
        const bool forward = key.parent == label.node;
        Label next;
        next.node = forward ? key.child : key.parent;
        next.sigma_sq = label.sigma_sq + edge.sigma * edge.sigma;
        next.resolution = std::max(label.resolution, edge.resolution);
        next.hops = label.hops + 1;
        if (!admissible(next)) continue;
        const auto& target_front = settled_[next.node];
        next.steps = label.steps;
        next.steps.push_back({key, forward ? Direction::forward : Direction::inverse});
        if (std::any_of(target_front.begin(), target_front.end(),
                        [&](const Label& s) { return dominates_(s, next); })) {
          continue;
        }
        next.pose = geo::compose(label.pose, forward ? edge.pose : geo::invert(edge.pose));
        next.oldest = label.oldest ? std::min(*label.oldest, edge.time_us) : edge.time_us;
        arena_.push_back(std::move(next));
        open.push(arena_.size() - 1);
      }
    }
    return best;
  }

 private:
  bool admissible(const Label& l) const {
    if (constraints_.max_hops && l.hops > *constraints_.max_hops) return false;
    if (constraints_.max_resolution && l.resolution > *constraints_.max_resolution) return false;
    if (constraints_.max_sigma && std::sqrt(l.sigma_sq) > *constraints_.max_sigma) return false;
    return true;
  }

  const GraphState& graph_;
  const PathConstraints& constraints_;
  std::int64_t now_us_;
  LabelOrder order_;
  Dominance dominates_;
  std::vector<Label> arena_;
  std::map<FrameId, std::vector<Label>> settled_;
};

}  // namespace

PathResult GraphState::best_path(const FrameId& src, const FrameId& dst, const PathConstraints& c,
                                 std::int64_t now_us, PathPriority priority) const {
  c.validate();
  if (src == dst) return PathResult{};
  if (!has_frame(src) || !has_frame(dst)) {
    throw Error(ErrorCode::NoPath, "no path from " + src.str() + " to " + dst.str(),
                kReasonUnknownFrame);
  }
  PathSearch search(*this, c, now_us, priority);
  auto best = search.run(src, &dst);
  if (auto it = best.find(dst); it != best.end()) return to_result(it->second);
  throw Error(ErrorCode::NoPath, "no path from " + src.str() + " to " + dst.str(),
              connected(src, dst) ? kReasonConstraintFiltered : kReasonDisconnected);
}

std::map<FrameId, PathResult> GraphState::best_paths_from(const FrameId& src,
                                                          const PathConstraints& c,
                                                          std::int64_t now_us,
                                                          PathPriority priority) const {
  c.validate();
  std::map<FrameId, PathResult> out;
  if (!has_frame(src)) return out;
  PathSearch search(*this, c, now_us, priority);
  for (auto& [frame, label] : search.run(src, nullptr)) out.emplace(frame, to_result(label));
  return out;
}

bool GraphState::connected(const FrameId& a, const FrameId& b) const {
  if (a == b) return true;
  if (!has_frame(a) || !has_frame(b)) return false;
  std::set<FrameId> seen{a};
  std::deque<FrameId> queue{a};
  while (!queue.empty()) {
    const FrameId cur = queue.front();
    queue.pop_front();
    auto it = incident_.find(cur);
    if (it == incident_.end()) continue;
    for (const EdgeKey& k : it->second) {
      const FrameId& other = k.parent == cur ? k.child : k.parent;
      if (other == b) return true;
      if (seen.insert(other).second) queue.push_back(other);
    }
  }
  return false;
}

json GraphState::to_json() const {
  json frames = json::array();
  for (const auto& f : frames_) frames.push_back(f);
  json edges = json::array();
  for (const auto& [_, obs] : edges_) edges.push_back(obs);
  return json{{"frames", std::move(frames)}, {"edges", std::move(edges)}};
}

SpatialGraph::SpatialGraph(std::shared_ptr<CommitNotifier> notifier)
    : SpatialGraph(Options{}, std::move(notifier)) {}

SpatialGraph::SpatialGraph(Options options, std::shared_ptr<CommitNotifier> notifier)
    : options_(options), log_(StoreKind::graph, std::move(notifier), options.feed_retention) {}

void SpatialGraph::insert_locked(const TransformObservation& obs) {
  const EdgeKey key = key_of(obs);
  state_.frames_.insert(obs.parent);
  state_.frames_.insert(obs.child);
  state_.edges_.insert_or_assign(key, obs);
  state_.incident_[obs.parent].insert(key);
  state_.incident_[obs.child].insert(key);
}

void SpatialGraph::erase_locked(const EdgeKey& key) {
  state_.edges_.erase(key);
  for (const FrameId* f : {&key.parent, &key.child}) {
    auto it = state_.incident_.find(*f);
    if (it == state_.incident_.end()) continue;
    it->second.erase(key);
    if (it->second.empty()) state_.incident_.erase(it);
  }
}

EdgeUpdateResult SpatialGraph::upsert_edge(const TransformObservation& obs) {
  validate(obs);
  std::unique_lock lock(mutex_);
  const EdgeKey key = key_of(obs);
  if (auto it = state_.edges_.find(key); it != state_.edges_.end()) {
    const auto& live = it->second;
    const bool newer =
        obs.time_us > live.time_us || (obs.time_us == live.time_us && obs.seq > live.seq);
    if (!newer) return EdgeUpdateResult::superseded;
  }
  insert_locked(obs);
  log_.append(ChangeKind::edge_upsert, json(obs));
  return EdgeUpdateResult::applied;
}

std::size_t SpatialGraph::remove_provider(const std::string& provider) {
  std::unique_lock lock(mutex_);
  std::vector<EdgeKey> doomed;
  for (const auto& [key, _] : state_.edges_) {
    if (key.provider == provider) doomed.push_back(key);
  }
  for (const auto& key : doomed) {
    erase_locked(key);
    log_.append(ChangeKind::edge_remove, json(key));
  }
  return doomed.size();
}

PathResult SpatialGraph::best_path(const FrameId& src, const FrameId& dst,
                                   const PathConstraints& c,
                                   std::optional<std::int64_t> now_us) const {
  const std::int64_t now = now_us ? *now_us : wall_clock_us();
  std::shared_lock lock(mutex_);
  return state_.best_path(src, dst, c, now, options_.priority);
}

std::size_t SpatialGraph::edge_count() const {
  std::shared_lock lock(mutex_);
  return state_.edges_.size();
}

std::size_t SpatialGraph::frame_count() const {
  std::shared_lock lock(mutex_);
  return state_.frames_.size();
}

void SpatialGraph::apply_replicated(const ChangeEvent& event) {
  if (event.store != StoreKind::graph) {
    throw Error(ErrorCode::InvalidArgument, "object event applied to graph store");
  }
  std::unique_lock lock(mutex_);
  if (event.kind == ChangeKind::edge_upsert) {
    const auto obs = event.payload.get<TransformObservation>();
    validate(obs);
    insert_locked(obs);
  } else if (event.kind == ChangeKind::edge_remove) {
    erase_locked(event.payload.get<EdgeKey>());
  } else {
    throw Error(ErrorCode::InvalidArgument, "unexpected event kind for graph store");
  }
  log_.append_replicated(event);
}

void SpatialGraph::ensure_frame(const FrameId& frame) {
  std::unique_lock lock(mutex_);
  state_.frames_.insert(frame);
}

json SpatialGraph::to_json() const {
  std::shared_lock lock(mutex_);
  return state_.to_json();
}

std::string SpatialGraph::digest() const { return sha256_hex(to_json().dump()); }

}  // namespace rail::graph
