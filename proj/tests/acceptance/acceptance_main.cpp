// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Each check compares the system against a reference that
// does not share its code path.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/error.hpp"
#include "rail/ingest.hpp"
#include "rail/provider_message.hpp"
#include "rail/query.hpp"
#include "rail/simulation.hpp"
#include "rail/snapshot.hpp"
#include "rail/subscription.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/range_fixture.hpp"
#include "support/sim_fixture.hpp"

namespace {

using namespace rail;
using nlohmann::json;
using testing::pick;
using testing::uniform;

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects the first failure; later checks still run so the detail line
/// reports the totals.
class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && pass_) {
      pass_ = false;
      first_ = what;
    }
  }
  std::size_t checks() const { return checks_; }
  Outcome outcome(const std::string& summary) const { return {pass_, pass_ ? summary : first_ + "; " + summary}; }

 private:
  bool pass_ = true;
  std::size_t checks_ = 0;
  std::string first_;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome geometry_kernel() {
  constexpr double kTol = 1e-9;
  std::mt19937_64 rng(1001);
  Verdict v;
  double worst = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    const auto a = testing::random_pose(rng), b = testing::random_pose(rng), c = testing::random_pose(rng);
    const geo::Vec3 p{uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)};
    const geo::Vec3 q{uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)};

    const double assoc = geo::max_abs_difference(geo::compose(geo::compose(a, b), c),
                                                 geo::compose(a, geo::compose(b, c)));
    const double inv = std::max(geo::max_abs_difference(geo::compose(a, geo::invert(a)), geo::Pose6D::identity()),
                                geo::max_abs_difference(geo::compose(geo::invert(a), a), geo::Pose6D::identity()));
    const auto ab = geo::compose(a, b);
    const double unit = std::abs(ab.q.norm() - 1.0);
    const double dist = std::abs((geo::transform_point(ab, p) - geo::transform_point(ab, q)).norm() - (p - q).norm());
    const double matrix =
        testing::max_diff(testing::MatPose::of(ab), testing::MatPose::of(a).then(testing::MatPose::of(b)));
    const double round_trip = (geo::transform_point(geo::invert(a), geo::transform_point(a, p)) - p).norm();
    for (double e : {assoc, inv, unit, dist, matrix, round_trip}) worst = std::max(worst, e);
    v.check(assoc <= kTol, "associativity off by " + fmt(assoc) + " at case " + std::to_string(i));
    v.check(inv <= kTol, "inverse round trip off by " + fmt(inv) + " at case " + std::to_string(i));
    v.check(unit <= kTol && dist <= kTol, "norm not preserved at case " + std::to_string(i));
    v.check(matrix <= kTol, "disagrees with matrix algebra at case " + std::to_string(i));
    v.check(round_trip <= kTol, "point round trip off at case " + std::to_string(i));
  }
  return v.outcome("10000 cases, " + std::to_string(v.checks()) + " checks, worst error " + fmt(worst));
}

// 2 -------------------------------------------------------------------------

Outcome path_optimality() {
  constexpr std::int64_t kNow = 1'000'000;
  std::mt19937_64 rng(2002);
  Verdict v;
  std::size_t pairs = 0, reachable = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto edges = testing::random_graph(rng, 8, 16, kNow);
    graph::SpatialGraph g;
    for (const auto& e : edges) g.upsert_edge(e);
    const auto c = pick(rng, 2) == 0 ? graph::PathConstraints{} : testing::random_constraints(rng);
    const bool res_first = trial % 5 == 0;
    const auto priority = res_first ? graph::PathPriority::resolution_first : graph::PathPriority::sigma_first;
    const auto where = "trial " + std::to_string(trial);
    g.read([&](const graph::GraphState& s, std::uint64_t) {
      for (const auto& src : s.frames()) {
        for (const auto& dst : s.frames()) {
          ++pairs;
          const auto want = testing::enumerate_best_path(edges, src, dst, c, kNow, res_first);
          std::optional<graph::PathResult> got;
          try {
            got = s.best_path(src, dst, c, kNow, priority);
          } catch (const Error& e) {
            v.check(e.code() == ErrorCode::NoPath, where + ": unexpected error " + e.what());
          }
          v.check(got.has_value() == want.has_value(), where + ": reachability differs " + src.str() + "->" + dst.str());
          if (!got || !want) continue;
          ++reachable;
          v.check(std::abs(got->sigma - std::sqrt(want->sigma_sq)) <= 1e-12, where + ": sigma differs");
          v.check(got->resolution == want->resolution && got->hops == want->hops, where + ": ranking differs");
          v.check(got->edges == want->steps, where + ": edge list differs " + src.str() + "->" + dst.str());
          v.check(testing::max_diff(testing::MatPose::of(got->pose), want->pose) <= 1e-9, where + ": pose differs");
        }
      }
      return 0;
    });
  }
  return v.outcome("1000 graphs, " + std::to_string(pairs) + " frame pairs, " + std::to_string(reachable) +
                   " with paths");
}

// 3 -------------------------------------------------------------------------

Outcome range_equivalence() {
  std::mt19937_64 rng(3003);
  Verdict v;
  std::size_t hits = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto f = testing::random_range_fixture(rng, 100);
    Environment env({}, [now = f.now_us] { return now; });
    testing::load(env, f);
    const auto got = env.read_snapshot([&](const auto& g, const auto& o, Cursors) {
      return query::range_query(g, o, f.query, f.now_us);
    });
    const auto want = testing::range_oracle(f);
    hits += want.hits.size();
    const auto mismatch = testing::compare_range(got, want);
    v.check(mismatch.empty(), "fixture " + std::to_string(trial) + ": " + mismatch);
  }
  return v.outcome("200 fixtures, " + std::to_string(hits) + " hits");
}

// 4 -------------------------------------------------------------------------

Outcome lossy_ingest() {
  Verdict v;
  std::size_t delivered = 0, dropped = 0, duplicated = 0, sent = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 rng(4000 + seed);
    const auto map = testing::marker_map(16);
    json doc{{"seed", seed}, {"duration_us", 3'000'000}, {"map", map.snapshot}};
    doc["network"] = {{"jitter_us", 30'000}};
    doc["providers"] = json::array();
    for (int i = 0; i < 4; ++i) {
      auto p = testing::provider_json(rng, "cam-" + std::to_string(i), 1 + pick(rng, 6), 16, 40.0, 0.02);
      p["drop_prob"] = 0.3;
      p["dup_prob"] = 0.3;
      doc["providers"].push_back(p);
    }
    sim::Simulation s(sim::parse_scenario(doc));
    const auto report = s.run();
    const auto where = "seed " + std::to_string(seed);
    v.check(testing::compare_replay(s.master(), testing::replay_oracle(map, s.deliveries())).empty(),
            where + ": final state differs from delivered-subset replay");

    // Providers never resend: each seq is one fixed payload, and the number
    // sent is exactly the schedule's tick count.
    std::map<std::pair<std::string, std::uint64_t>, std::string> payload;
    for (const auto& d : s.deliveries()) {
      const auto m = json::parse(d.bytes);
      const auto key = std::pair(m.at("provider").at("id").get<std::string>(), m.at("seq").get<std::uint64_t>());
      auto [it, fresh] = payload.emplace(key, d.bytes);
      v.check(fresh || it->second == d.bytes, where + ": a seq was sent with two payloads");
    }
    for (const auto& [id, p] : report.at("providers").items()) {
      const auto n = p.at("sent").get<std::uint64_t>();
      v.check(n == 3'000'000 / 25'000 + 1, where + ": " + id + " sent " + std::to_string(n) + " messages");
      for (const auto& [key, bytes] : payload) {
        v.check(key.first != id || (key.second >= 1 && key.second <= n), where + ": " + id + " seq beyond what was sent");
      }
      sent += n;
    }
    delivered += s.deliveries().size();
    dropped += report.at("network").at("dropped").get<std::size_t>();
    duplicated += report.at("network").at("duplicated").get<std::size_t>();
  }
  v.check(dropped > 0 && duplicated > 0, "the network neither dropped nor duplicated");
  return v.outcome("20 scenarios, " + std::to_string(sent) + " sent, " + std::to_string(dropped) + " dropped, " +
                   std::to_string(duplicated) + " duplicated, " + std::to_string(delivered) + " delivered");
}

// 5 -------------------------------------------------------------------------

/// Client-side fold written against the documented frame shapes. Keyed
/// deltas must be consistent with the current state, so a replayed or
/// skipped delta shows up as a violation.
class Fold {
 public:
  explicit Fold(bool keyed, bool range) : keyed_(keyed), range_(range) {}

  std::string apply(const json& frame) {
    if (frame.contains("ok")) {
      if (!frame.at("ok").get<bool>()) {
        state_.reset();
        return {};
      }
      set(frame.at("result"));
      return {};
    }
    const auto kind = frame.at("delta").get<std::string>();
    const auto& payload = frame.at("payload");
    if (payload.contains("result")) {
      if (kind == "entered" && state_) return "whole-result entered twice";
      set(payload.at("result"));
      return {};
    }
    if (payload.contains("error")) {
      if (!state_) return "left while absent";
      state_.reset();
      return {};
    }
    if (!state_ || !keyed_) return "keyed delta without a keyed result";
    if (payload.contains("excluded_unreachable")) {
      excluded_ = payload.at("excluded_unreachable");
      return {};
    }
    const auto id = payload.at("id").get<std::string>();
    const bool present = items_.contains(id);
    if (kind == "entered") {
      if (present) return "entered twice: " + id;
      items_[id] = payload.at("item");
    } else if (kind == "changed") {
      if (!present) return "changed while absent: " + id;
      if (items_[id] == payload.at("item")) return "changed without a change: " + id;
      items_[id] = payload.at("item");
    } else if (kind == "left") {
      if (!present) return "left while absent: " + id;
      items_.erase(id);
    } else {
      return "unknown delta " + kind;
    }
    return {};
  }

  /// The folded result in the order a fresh query reports it.
  std::optional<json> result() const {
    if (!state_) return std::nullopt;
    if (!keyed_) return std::optional<json>(std::in_place, whole_);
    std::vector<json> items;
    for (const auto& [id, item] : items_) items.push_back(item);
    if (!range_) return std::optional<json>(std::in_place, items);  // map order is id order
    std::stable_sort(items.begin(), items.end(), [](const json& a, const json& b) {
      return a.at("distance").get<double>() < b.at("distance").get<double>();
    });
    return std::optional<json>(std::in_place, json{{"excluded_unreachable", excluded_}, {"hits", items}});
  }

 private:
  void set(const json& result) {
    state_ = true;
    whole_ = result;
    items_.clear();
    if (!keyed_) return;
    for (const auto& item : range_ ? result.at("hits") : result) items_[item.at("id").get<std::string>()] = item;
    if (range_) excluded_ = result.at("excluded_unreachable");
  }

  bool keyed_;
  bool range_;
  std::optional<bool> state_;
  json whole_;
  std::map<std::string, json> items_;
  json excluded_;
};

Outcome change_feed_soundness() {
  constexpr std::int64_t kNow = 1'000'000;
  std::mt19937_64 rng(5005);
  Environment env({}, [] { return kNow; });
  env.ensure_frame(FrameId("f0"));
  env.ensure_frame(FrameId("f1"));
  const std::vector<std::string> requests = {
      R"({"id":1,"op":"find_objects","where":[{"path":"type","op":"eq","value":"AGV"}],"follow":true})",
      R"({"id":2,"op":"find_objects","follow":true})",
      R"({"id":3,"op":"get_object","object":"o1","follow":true})",
      R"({"id":4,"op":"get_transform","src":"f0","dst":"f3","follow":true})",
      R"({"id":5,"op":"range_query","frame":"f0","center":[0,0,0],"radius":4,"follow":true})",
      R"({"id":6,"op":"range_query","frame":"f1","center":[1,0,0],"radius":2,"where":[{"path":"type","op":"eq","value":"AGV"}],"follow":true})",
  };
  struct Follower {
    query::Query q;
    std::unique_ptr<query::Subscription> sub;
    Fold fold;
    Cursors last;
    std::size_t frames = 0;
  };
  std::vector<Follower> followers;
  for (const auto& r : requests) {
    auto q = query::parse_query(json::parse(r));
    const bool range = std::holds_alternative<query::RangeQuery>(q.params);
    const bool keyed = range || std::holds_alternative<query::FindObjects>(q.params);
    auto sub = std::make_unique<query::Subscription>(env, q);
    followers.push_back({q, std::move(sub), Fold(keyed, range), {}, 0});
  }

  Verdict v;
  auto fresh = [&](const query::Query& q) -> std::optional<json> {
    try {
      return query::execute_query(env, q).result;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  auto drain = [&](Follower& f, int commit) {
    f.sub->pump();
    for (const auto& frame : f.sub->take()) {
      ++f.frames;
      if (frame.contains("seq")) {
        for (const auto& [store, seq] : frame.at("seq").items()) {
          auto& last = store == "graph" ? f.last.graph : f.last.objects;
          v.check(seq.get<std::uint64_t>() >= last, "seq moved backwards at commit " + std::to_string(commit));
          last = seq.get<std::uint64_t>();
        }
      }
      const auto err = f.fold.apply(frame);
      v.check(err.empty(), "commit " + std::to_string(commit) + ": " + err);
    }
  };

  static const char* kTypes[] = {"AGV", "shelf", "door"};
  int commits = 0;
  while (commits < 1000) {
    const auto roll = pick(rng, 10);
    const auto obj = ObjectId("o" + std::to_string(pick(rng, 8)));
    const auto f1 = "f" + std::to_string(pick(rng, 6));
    auto f2 = "f" + std::to_string(pick(rng, 6));
    if (f2 == f1) f2 = "o" + std::to_string(pick(rng, 8));
    if (roll < 4) {
      env.upsert_edge(testing::obs(f1, f2, "p" + std::to_string(pick(rng, 3)), testing::random_pose(rng, 3),
                                   uniform(rng, 0, 0.05), 0.001, kNow, static_cast<std::uint64_t>(commits)));
    } else if (roll < 8) {
      store::ObjectUpdate u;
      u.mutations = {store::AttributeMutation::set("type", kTypes[pick(rng, 3)])};
      if (pick(rng, 2) == 0) u.geometry = geo::GeometryPrimitive::sphere(uniform(rng, 0.1, 1));
      env.upsert_object(obj, u);
    } else if (roll < 9) {
      if (!env.objects().try_get(obj)) continue;
      env.delete_object(obj);
    } else {
      if (env.remove_provider("p" + std::to_string(pick(rng, 3))) == 0) continue;
    }
    ++commits;
    // Drain at irregular points so re-evaluations coalesce several commits.
    if (pick(rng, 3) != 0 && commits != 1000) continue;
    for (auto& f : followers) {
      drain(f, commits);
      v.check(f.sub->delivered() == env.heads(), "delivery cursor behind at commit " + std::to_string(commits));
      v.check(f.fold.result() == fresh(f.q), "folded state differs from a fresh query at commit " +
                                                 std::to_string(commits) + " for id " + std::to_string(f.q.id.get<int>()));
    }
  }
  std::size_t frames = 0;
  for (const auto& f : followers) frames += f.frames;
  const auto heads = env.heads();
  return v.outcome(std::to_string(commits) + " commits (graph " + std::to_string(heads.graph) + ", objects " +
                   std::to_string(heads.objects) + "), 6 subscriptions, " + std::to_string(frames) + " frames");
}

// 6 -------------------------------------------------------------------------

Outcome failover() {
  Verdict v;
  std::int64_t worst_switch = 0;
  std::size_t acked_events = 0;
  const int schedules = 120;
  for (int k = 0; k < schedules; ++k) {
    std::mt19937_64 rng(6000 + static_cast<std::uint64_t>(k));
    const auto map = testing::marker_map(10);
    const std::int64_t announce = 1'000'000;
    const std::int64_t kill_at = 1'500'000 + static_cast<std::int64_t>(pick(rng, 2'500'000));
    json doc{{"seed", 60'000 + k}, {"duration_us", 9'000'000}, {"map", map.snapshot}};
    doc["network"] = {{"latency_us", 500 + pick(rng, 2000)}, {"jitter_us", pick(rng, 3000)}};
    doc["workers"] = 1 + pick(rng, 3);
    doc["providers"] = json::array();
    const auto n_providers = 1 + pick(rng, 3);
    for (std::size_t i = 0; i < n_providers; ++i) {
      auto p = testing::provider_json(rng, "cam-" + std::to_string(i), 1 + pick(rng, 4), 10,
                                      uniform(rng, 5.0, 40.0), 0.01);
      p["drop_prob"] = uniform(rng, 0.0, 0.3);
      doc["providers"].push_back(p);
    }
    doc["consumers"] = json::array();
    const auto n_consumers = 1 + pick(rng, 2);
    for (std::size_t i = 0; i < n_consumers; ++i) {
      json q{{"id", 1}, {"op", "range_query"}, {"follow", true}, {"frame", "cam-0"},
             {"center", {0, 0, 0}}, {"radius", uniform(rng, 1.0, 6.0)}};
      json f{{"id", 2}, {"op", "find_objects"}, {"follow", true}};
      doc["consumers"].push_back({{"id", "c" + std::to_string(i)}, {"queries", {q, f}}});
    }
    doc["faults"] = {{{"time_us", kill_at}, {"kind", "kill_module"}, {"target", "master"}}};

    sim::Simulation s(sim::parse_scenario(doc));
    const auto report = s.run();
    const auto where = "schedule " + std::to_string(k);
    v.check(s.promotions().size() == 1, where + ": " + std::to_string(s.promotions().size()) + " promotions");
    if (s.promotions().size() != 1) continue;
    const auto& promo = s.promotions().front();
    v.check(promo.record.new_epoch > promo.record.old_epoch, where + ": epoch did not increase");

    // Every event a subscriber was shown by the old master is present,
    // identically, on the promoted one.
    const auto* old_env = s.environment(promo.old_node);
    const auto* new_env = s.environment(promo.record.node);
    v.check(old_env != nullptr && new_env != nullptr, where + ": stores missing");
    if (old_env == nullptr || new_env == nullptr) continue;
    v.check(promo.acked.graph + promo.acked.objects > 0, where + ": nothing was acknowledged before the kill");
    auto same_prefix = [](const ChangeLog& a, const ChangeLog& b, std::uint64_t upto) {
      const auto ea = a.read_committed(0, upto);
      return ea.size() == upto && ea == b.read_committed(0, upto);
    };
    v.check(same_prefix(old_env->graph().log(), new_env->graph().log(), promo.acked.graph) &&
                same_prefix(old_env->objects().log(), new_env->objects().log(), promo.acked.objects),
            where + ": an acknowledged write is missing after promotion");
    acked_events += promo.acked.graph + promo.acked.objects;

    for (const auto& [id, c] : report.at("consumers").items()) {
      std::optional<std::int64_t> switched;
      for (const auto& sw : c.at("switches")) {
        if (sw.at("epoch").get<std::uint64_t>() == promo.record.new_epoch) {
          switched = sw.at("time_us").get<std::int64_t>();
          break;
        }
      }
      v.check(switched.has_value(), where + ": " + id + " never reached the new master");
      if (!switched) continue;
      worst_switch = std::max(worst_switch, *switched - promo.time_us);
      v.check(*switched - promo.time_us <= announce, where + ": " + id + " re-resolved after " +
                                                         std::to_string(*switched - promo.time_us) + " us");
    }
    for (const auto& [id, p] : report.at("providers").items()) {
      const auto& by_epoch = p.at("applied_by_epoch");
      const auto key = std::to_string(promo.record.new_epoch);
      v.check(by_epoch.contains(key) && by_epoch.at(key).get<int>() > 0, where + ": " + id + " did not resume");
    }
  }
  return v.outcome(std::to_string(schedules) + " schedules, " + std::to_string(acked_events) +
                   " acknowledged events preserved, slowest re-resolve " + std::to_string(worst_switch) + " us");
}

// 7 -------------------------------------------------------------------------

/// Reads the marker id straight off the exported documents.
std::optional<ObjectId> uncached_lookup(const Environment& env, const std::string& key, bool& ambiguous) {
  std::optional<ObjectId> found;
  ambiguous = false;
  const auto exported = snapshot::export_json(env);
  for (const auto& doc : exported.at("objects")) {
    const auto& a = doc.at("attributes");
    if (!a.contains("marker") || !a.at("marker").contains("QR")) continue;
    const auto& qr = a.at("marker").at("QR");
    if (!qr.contains("id") || qr.at("id") != key) continue;
    ambiguous = found.has_value();
    found = ObjectId(doc.at("id").get<std::string>());
  }
  return found;
}

Outcome id_cache_economy() {
  Environment env;
  const int keys = 25;
  auto marker = [](const std::string& k) {
    store::ObjectUpdate u;
    u.mutations = {store::AttributeMutation::set("marker.QR.id", k)};
    return u;
  };
  for (int i = 0; i < keys; ++i) env.upsert_object(ObjectId("o" + std::to_string(i)), marker("k" + std::to_string(i)));
  ingest::ProviderHandler h("cam", env, {ingest::UnknownIdPolicy::drop});
  std::mt19937_64 rng(7007);
  Verdict v;
  std::set<std::string> looked_up;
  std::string last;
  int mutations = 0;
  for (int i = 0; i < 1000; ++i) {
    if (i % 100 == 50) {
      // Touch the object behind the most recent lookup; half the time the
      // marker moves to a fresh object.
      ++mutations;
      bool amb = false;
      const auto owner = uncached_lookup(env, last, amb);
      if (owner && pick(rng, 2) == 0) {
        env.delete_object(*owner);
        env.upsert_object(ObjectId("moved-" + std::to_string(i)), marker(last));
      } else if (owner) {
        store::ObjectUpdate note;
        note.mutations = {store::AttributeMutation::set("note", i)};
        env.upsert_object(*owner, note);
      }
    }
    const auto key = "k" + std::to_string(pick(rng, keys));
    looked_up.insert(key);
    last = key;
    bool ambiguous = false;
    const auto want = uncached_lookup(env, key, ambiguous);
    try {
      const auto got = h.resolve_external_id({"marker.QR", key});
      v.check(want && !ambiguous && got == *want, "lookup " + std::to_string(i) + " of " + key + " gave " + got.str() +
                                                          " instead of " + (want ? want->str() : std::string("nothing")));
    } catch (const Error& e) {
      v.check(!want || ambiguous, "lookup " + std::to_string(i) + " of " + key + " failed: " + e.what());
    }
  }
  const auto queries = h.store_queries();
  const auto invalidations = h.cache().invalidations();
  v.check(invalidations == 10, std::to_string(invalidations) + " invalidations instead of 10");
  v.check(queries <= looked_up.size() + invalidations,
          std::to_string(queries) + " store queries exceed " + std::to_string(looked_up.size()) + " keys + " +
              std::to_string(invalidations) + " invalidations");
  return v.outcome("1000 lookups, " + std::to_string(looked_up.size()) + " keys, " + std::to_string(mutations) +
                   " mutations, " + std::to_string(invalidations) + " invalidations, " + std::to_string(queries) +
                   " store queries");
}

// 8 -------------------------------------------------------------------------

constexpr const char* kQrMessage =
    R"({"v":1,"provider":{"id":"foo","type":"camera"},"seq":12,"time_us":1700000000000000,)"
    R"("observations":[{"item":"detection","kind":"marker.QR","ext_id":"bar",)"
    R"("pose":{"t":[0.1,0.2,0.3],"q":[1.0,0.0,0.0,0.0]},"sigma":0.01,"res":0.001}]})";

Outcome wire_conformance() {
  Verdict v;
  Environment env({}, [] { return std::int64_t{1'700'000'000'000'000}; });
  {
    store::ObjectUpdate cam;
    cam.mutations = {store::AttributeMutation::set("sensor.type", "camera")};
    env.upsert_object(ObjectId("foo"), cam);
    store::ObjectUpdate bar;
    bar.mutations = {store::AttributeMutation::set("marker.QR.id", "bar")};
    env.upsert_object(ObjectId("bar"), bar);
  }
  ingest::EntryPoint entry(env);
  entry.add_worker("worker-0");
  const auto report = entry.handle_datagram(kQrMessage);
  v.check(report && report->edges_applied == 1, "the QR message did not apply one edge");
  v.check(env.graph().edge_count() == 1, std::to_string(env.graph().edge_count()) + " edges in the graph");
  const auto resp = query::handle_request(env, {{"id", 1}, {"op", "get_transform"}, {"src", "foo"}, {"dst", "bar"}});
  v.check(resp.at("ok") == true, "get_transform foo->bar failed: " + resp.dump());
  if (resp.at("ok") == true) {
    const auto& r = resp.at("result");
    v.check(r.at("hops") == 1 && r.at("edges").size() == 1, "path is not the single foo->bar edge");
    v.check(r.at("edges")[0].at("parent") == "foo" && r.at("edges")[0].at("child") == "bar" &&
                r.at("edges")[0].at("dir") == "forward",
            "edge is not foo->bar");
    const auto t = r.at("pose").at("t").get<std::vector<double>>();
    v.check(std::abs(t[0] - 0.1) <= 1e-12 && std::abs(t[1] - 0.2) <= 1e-12 && std::abs(t[2] - 0.3) <= 1e-12,
            "pose differs from the message");
    v.check(std::abs(r.at("sigma").get<double>() - 0.01) <= 1e-12 && r.at("resolution") == 0.001,
            "uncertainty differs from the message");
  }

  // Fuzz the full datagram path; anything escaping handle_datagram fails.
  std::mt19937_64 rng(8008);
  const std::string seed = kQrMessage;
  std::size_t escaped = 0;
  const auto before = entry.counters();
  for (int i = 0; i < 100'000; ++i) {
    std::string bytes;
    switch (i % 4) {
      case 0:
        bytes.resize(pick(rng, 300));
        for (auto& c : bytes) c = static_cast<char>(pick(rng, 256));
        break;
      case 1: {
        // Structurally valid JSON with wrong shapes.
        static const char* kValues[] = {"null", "1", "-1e308", "\"x\"", "[]", "{}", "true", "[1,2,3]", "1.5"};
        json m = json::parse(seed);
        static const char* kPaths[] = {"/v", "/provider", "/provider/id", "/seq", "/time_us", "/observations",
                                       "/observations/0/pose", "/observations/0/pose/q",
                                       "/observations/0/sigma", "/observations/0/item", "/observations/0/ext_id"};
        const json::json_pointer at(kPaths[pick(rng, 11)]);
        if (m.contains(at)) m[at] = json::parse(kValues[pick(rng, 9)]);
        bytes = m.dump();
        break;
      }
      default: {
        bytes = seed;
        const auto edits = 1 + pick(rng, 8);
        for (std::size_t k = 0; k < edits && !bytes.empty(); ++k) {
          const auto at = pick(rng, bytes.size());
          switch (pick(rng, 3)) {
            case 0: bytes[at] = static_cast<char>(pick(rng, 256)); break;
            case 1: bytes.erase(at, 1 + pick(rng, 8)); break;
            default: bytes.insert(at, 1, "{}[]\",:0-e."[pick(rng, 11)]); break;
          }
        }
      }
    }
    try {
      entry.handle_datagram(bytes);
    } catch (...) {
      ++escaped;
    }
  }
  const auto after = entry.counters();
  v.check(escaped == 0, std::to_string(escaped) + " datagrams escaped the error contract");
  v.check(after.datagrams - before.datagrams == 100'000, "datagram counter disagrees");
  v.check(after.datagrams == after.applied + after.malformed + after.unsupported_version + after.invalid_transform +
                                 after.no_workers + after.handler_faults,
          "counters do not account for every datagram");
  v.check(after.handler_faults == 0, std::to_string(after.handler_faults) + " handler faults");
  const auto rejected = (after.malformed - before.malformed) + (after.unsupported_version - before.unsupported_version) +
                        (after.invalid_transform - before.invalid_transform);
  return v.outcome("QR message -> 1 edge foo->bar; 100000 fuzzed datagrams, " + std::to_string(rejected) +
                   " rejected, 0 crashes");
}

// 9 -------------------------------------------------------------------------

json busy_scenario(std::uint64_t seed) {
  std::mt19937_64 rng(9000 + seed);
  const auto map = testing::marker_map(8);
  json doc{{"seed", seed}, {"duration_us", 5'000'000}, {"map", map.snapshot}};
  doc["network"] = {{"jitter_us", 5000}, {"drop_prob", 0.05}, {"dup_prob", 0.05}};
  doc["replication"] = {{"mode", seed % 2 == 0 ? "sync" : "async"}, {"lag_commits", seed % 2 == 0 ? 0 : 3}};
  doc["providers"] = json::array();
  for (int i = 0; i < 3; ++i) {
    auto p = testing::provider_json(rng, "cam-" + std::to_string(i), 3, 8, 25.0, 0.02);
    p["drop_prob"] = 0.2;
    p["dup_prob"] = 0.2;
    doc["providers"].push_back(p);
  }
  doc["consumers"] = {{{"id", "c0"},
                       {"queries",
                        {{{"id", 1}, {"op", "range_query"}, {"follow", true}, {"frame", "cam-0"}, {"center", {0, 0, 0}},
                          {"radius", 5.0}},
                         {{"id", 2}, {"op", "get_transform"}, {"src", "cam-0"}, {"dst", "cam-1"}}}}}};
  doc["faults"] = {{{"time_us", 1'200'000}, {"kind", "kill_module"}, {"target", "worker:0"}},
                   {{"time_us", 2'000'000}, {"kind", "kill_module"}, {"target", "master"}},
                   {{"time_us", 3'500'000}, {"kind", "drop_link"}, {"target", "mgmt-slave"}},
                   {{"time_us", 4'000'000}, {"kind", "restore_link"}, {"target", "all"}}};
  return doc;
}

Outcome determinism() {
  Verdict v;
  std::size_t bytes = 0;
  std::set<std::string> distinct;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto doc = busy_scenario(seed);
    sim::Simulation a(sim::parse_scenario(doc));
    sim::Simulation b(sim::parse_scenario(doc));
    const auto ra = snapshot::canonical_text(a.run());
    const auto rb = snapshot::canonical_text(b.run());
    v.check(ra == rb, "seed " + std::to_string(seed) + ": reports differ");
    v.check(snapshot::export_text(a.master()) == snapshot::export_text(b.master()),
            "seed " + std::to_string(seed) + ": master stores differ");
    v.check(a.master().digests() == b.master().digests(), "seed " + std::to_string(seed) + ": digests differ");
    bytes += ra.size();
    distinct.insert(ra);
  }
  v.check(distinct.size() == 20, "different seeds produced identical reports");
  return v.outcome("20 seeds run twice, " + std::to_string(bytes) + " report bytes each pass");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"geometry kernel", geometry_kernel},
      {"path optimality", path_optimality},
      {"range query equivalence", range_equivalence},
      {"session-less lossy ingest", lossy_ingest},
      {"change feed soundness", change_feed_soundness},
      {"failover", failover},
      {"id cache economy", id_cache_economy},
      {"wire conformance", wire_conformance},
      {"determinism", determinism},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, run] : criteria) {
    ++n;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const auto ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << name << ": " << o.detail << " (" << ms << " ms)"
              << std::endl;
    failed += o.pass ? 0 : 1;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
