#pragma once

// Seeded generators shared by unit and acceptance tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rail/spatial_graph.hpp"
#include "support/oracles.hpp"

namespace rail::testing {

inline FrameId frame(const std::string& s) { return FrameId(s); }

inline graph::TransformObservation obs(const std::string& parent, const std::string& child,
                                       const std::string& provider, geo::Pose6D pose, double sigma,
                                       double res, std::int64_t time_us = 0, std::uint64_t seq = 0) {
  return {FrameId(parent), FrameId(child), provider, pose, sigma, res, time_us, seq};
}

/// Random multigraph with up to `max_frames` frames and `max_edges` edges.
/// With `tie_prone`, sigma and resolution come from small grids so ties are
/// common; otherwise sigma is continuous and optimal paths are unique.
inline std::vector<graph::TransformObservation> random_graph(std::mt19937_64& rng,
                                                             std::size_t max_frames = 8,
                                                             std::size_t max_edges = 16,
                                                             std::int64_t now_us = 1'000'000,
                                                             bool tie_prone = true) {
  const std::size_t n = 2 + pick(rng, max_frames - 1);
  const std::size_t m = 1 + pick(rng, max_edges);
  static const double kSigmas[] = {0.0, 0.01, 0.02, 0.03, 0.05};
  static const double kRes[] = {0.001, 0.005, 0.01};
  std::vector<graph::TransformObservation> out;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t a = pick(rng, n);
    std::size_t b = pick(rng, n - 1);
    if (b >= a) ++b;
    const std::string provider = "p" + std::to_string(pick(rng, 3));
    const double sigma = !tie_prone || pick(rng, 4) == 0 ? uniform(rng, 0, 0.05) : kSigmas[pick(rng, 5)];
    auto o = obs("f" + std::to_string(a), "f" + std::to_string(b), provider, random_pose(rng, 5),
                 sigma, kRes[pick(rng, 3)], now_us - static_cast<std::int64_t>(pick(rng, 1000)), i);
    // Keep one observation per key so the oracle sees the live edge set.
    bool dup = false;
    for (const auto& e : out) dup = dup || graph::key_of(e) == graph::key_of(o);
    if (!dup) out.push_back(std::move(o));
  }
  return out;
}

inline graph::PathConstraints random_constraints(std::mt19937_64& rng) {
  graph::PathConstraints c;
  if (pick(rng, 4) == 0) c.max_hops = static_cast<std::uint32_t>(1 + pick(rng, 4));
  if (pick(rng, 4) == 0) c.max_sigma = uniform(rng, 0.01, 0.08);
  if (pick(rng, 4) == 0) c.max_resolution = pick(rng, 2) == 0 ? 0.005 : 0.001;
  if (pick(rng, 5) == 0) c.max_age_us = static_cast<std::int64_t>(1 + pick(rng, 1000));
  return c;
}

}  // namespace rail::testing
