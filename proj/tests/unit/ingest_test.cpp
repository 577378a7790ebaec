#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/error.hpp"
#include "rail/ingest.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace rail::ingest {
namespace {

using nlohmann::json;
using testing::pick;
using testing::uniform;

constexpr const char* kQrMessage =
    R"({"v":1,"provider":{"id":"foo","type":"camera"},"seq":12,"time_us":1700000000000000,)"
    R"("observations":[{"item":"detection","kind":"marker.QR","ext_id":"bar",)"
    R"("pose":{"t":[0.1,0.2,0.3],"q":[1.0,0.0,0.0,0.0]},"sigma":0.01,"res":0.001}]})";

ErrorCode decode_code(std::string_view bytes) {
  try {
    decode_provider_message(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidArgument;
}

void add_marker_object(Environment& env, const std::string& id, const std::string& tail,
                       const std::string& ext_id) {
  store::ObjectUpdate u;
  u.mutations = {store::AttributeMutation::set("marker." + tail + ".id", ext_id)};
  env.upsert_object(ObjectId(id), u);
}

void add_camera(Environment& env, const std::string& id) {
  store::ObjectUpdate u;
  u.mutations = {store::AttributeMutation::set("sensor.type", "camera")};
  env.upsert_object(ObjectId(id), u);
}

Detection detection(const std::string& kind, const std::string& ext, geo::Pose6D pose = {},
                    double sigma = 0.01) {
  return {{kind, ext}, pose, sigma, 0.001};
}

ProviderMessage message(const std::string& provider, std::uint64_t seq, std::int64_t t,
                        std::vector<ObservationItem> items) {
  return {{provider, "camera"}, seq, t, std::move(items)};
}

// --- wire format -----------------------------------------------------------

TEST(ProviderWire, QrExampleRoundTripsToCanonicalForm) {
  const auto m = decode_provider_message(kQrMessage);
  EXPECT_EQ(m.provider, (ProviderInfo{"foo", "camera"}));
  EXPECT_EQ(m.seq, 12u);
  EXPECT_EQ(m.time_us, 1700000000000000);
  ASSERT_EQ(m.observations.size(), 1u);
  const auto& d = std::get<Detection>(m.observations[0]);
  EXPECT_EQ(d.ref, (ExternalRef{"marker.QR", "bar"}));
  EXPECT_DOUBLE_EQ(d.sigma, 0.01);
  EXPECT_DOUBLE_EQ(d.resolution, 0.001);
  EXPECT_EQ(encode_provider_message(m), json::parse(kQrMessage).dump());
  EXPECT_EQ(decode_provider_message(encode_provider_message(m)), m);
}

TEST(ProviderWire, RejectsBadInputWithTypedErrors) {
  EXPECT_EQ(decode_code(""), ErrorCode::MalformedMessage);
  EXPECT_EQ(decode_code("{"), ErrorCode::MalformedMessage);
  EXPECT_EQ(decode_code("[1,2]"), ErrorCode::MalformedMessage);

  auto doc = json::parse(kQrMessage);
  doc["v"] = 2;
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::UnsupportedVersion);

  doc = json::parse(kQrMessage);
  doc["provider"]["id"] = "";
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::MalformedMessage);

  doc = json::parse(kQrMessage);
  doc["observations"][0]["sigma"] = -1;
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::MalformedMessage);

  doc = json::parse(kQrMessage);
  doc["observations"][0]["res"] = 0;
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::MalformedMessage);

  doc = json::parse(kQrMessage);
  auto item = doc["observations"][0];
  doc["observations"] = json::array();
  for (int i = 0; i < 65; ++i) doc["observations"].push_back(item);
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::MalformedMessage);

  doc["observations"].erase(0);
  EXPECT_NO_THROW(decode_provider_message(doc.dump()));

  EXPECT_EQ(decode_code(std::string(kMaxDatagramBytes + 1, ' ')), ErrorCode::MalformedMessage);
}

TEST(ProviderWire, MatrixFormIsConvertedOrRejected) {
  auto doc = json::parse(kQrMessage);
  auto& item = doc["observations"][0];
  item.erase("pose");
  // 90 degrees about z, translated by (1,2,3).
  item["tf_mat"] = {0, -1, 0, 1, 1, 0, 0, 2, 0, 0, 1, 3, 0, 0, 0, 1};
  const auto m = decode_provider_message(doc.dump());
  const auto& pose = std::get<Detection>(m.observations[0]).pose;
  const auto p = geo::transform_point(pose, {1, 0, 0});
  EXPECT_NEAR(p.x, 1, 1e-12);
  EXPECT_NEAR(p.y, 3, 1e-12);
  EXPECT_NEAR(p.z, 3, 1e-12);

  item["tf_mat"] = {2, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::InvalidTransform);
  item["tf_mat"] = {-1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::InvalidTransform);

  item["pose"] = json::parse(R"({"t":[0,0,0],"q":[1,0,0,0]})");
  EXPECT_EQ(decode_code(doc.dump()), ErrorCode::MalformedMessage);
}

TEST(ProviderWire, AttributeUpsertItems) {
  auto doc = json::parse(kQrMessage);
  doc["observations"] = json::parse(R"([
    {"item":"attribute_upsert","object":"door-1","mutations":[{"path":"state","op":"set","value":"open"}]},
    {"item":"attribute_upsert","object":{"kind":"marker.QR","ext_id":"bar"},
     "mutations":[{"path":"seen","op":"set","value":true}],"geometry":{"type":"sphere","radius":0.5}}
  ])");
  const auto m = decode_provider_message(doc.dump());
  ASSERT_EQ(m.observations.size(), 2u);
  const auto& a = std::get<AttributeUpsert>(m.observations[0]);
  EXPECT_EQ(std::get<ObjectId>(a.object), ObjectId("door-1"));
  const auto& b = std::get<AttributeUpsert>(m.observations[1]);
  EXPECT_EQ(std::get<ExternalRef>(b.object), (ExternalRef{"marker.QR", "bar"}));
  ASSERT_TRUE(b.geometry.has_value());
  EXPECT_EQ(decode_provider_message(encode_provider_message(m)), m);
}

TEST(ProviderWire, FuzzedBytesNeverEscapeTheErrorContract) {
  std::mt19937_64 rng(99);
  const std::string seed = kQrMessage;
  auto allowed = [](std::string_view bytes) {
    try {
      decode_provider_message(bytes);
    } catch (const Error& e) {
      return e.code() == ErrorCode::MalformedMessage || e.code() == ErrorCode::UnsupportedVersion ||
             e.code() == ErrorCode::InvalidTransform;
    } catch (...) {
      return false;
    }
    return true;
  };
  for (int i = 0; i < 10'000; ++i) {
    std::string bytes;
    if (i % 2 == 0) {
      bytes.resize(pick(rng, 200));
      for (auto& c : bytes) c = static_cast<char>(pick(rng, 256));
    } else {
      bytes = seed;
      const auto edits = 1 + pick(rng, 6);
      for (std::size_t k = 0; k < edits && !bytes.empty(); ++k) {
        const auto at = pick(rng, bytes.size());
        switch (pick(rng, 3)) {
          case 0: bytes[at] = static_cast<char>(pick(rng, 256)); break;
          case 1: bytes.erase(at, 1 + pick(rng, 8)); break;
          default: bytes.insert(at, 1, "{}[]\",:0-e."[pick(rng, 11)]); break;
        }
      }
    }
    ASSERT_TRUE(allowed(bytes)) << "case " << i;
  }
}

TEST(ProviderWire, IdPathForKind) {
  EXPECT_EQ(id_path_for_kind("marker.QR"), "marker.QR.id");
  EXPECT_EQ(id_path_for_kind("QR"), "marker.QR.id");
}

// --- handler ---------------------------------------------------------------

TEST(ProviderHandler, QrExampleYieldsOneEdge) {
  Environment env;
  add_camera(env, "foo");
  add_marker_object(env, "bar", "QR", "bar");
  ProviderHandler h("foo", env);
  const auto report = h.apply(decode_provider_message(kQrMessage));
  EXPECT_EQ(report.edges_applied, 1u);
  EXPECT_EQ(report.items_dropped, 0u);
  EXPECT_EQ(env.graph().edge_count(), 1u);
  const auto path = env.graph().best_path(FrameId("foo"), FrameId("bar"), {}, 1700000000000000);
  EXPECT_EQ(path.hops, 1u);
  EXPECT_NEAR(path.pose.t.x, 0.1, 1e-12);
  EXPECT_NEAR(path.pose.t.z, 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(path.sigma, 0.01);
}

TEST(ProviderHandler, DuplicateDatagramIsSuperseded) {
  Environment env;
  add_marker_object(env, "bar", "QR", "bar");
  ProviderHandler h("foo", env);
  const auto m = decode_provider_message(kQrMessage);
  h.apply(m);
  const auto digest = env.digests();
  const auto again = h.apply(m);
  EXPECT_EQ(again.edges_applied, 0u);
  EXPECT_EQ(again.edges_superseded, 1u);
  EXPECT_EQ(env.digests(), digest);
}

TEST(ProviderHandler, SensorIsRegisteredOnFirstSight) {
  Environment env;
  add_marker_object(env, "bar", "QR", "bar");
  ProviderHandler h("foo", env);
  const auto report = h.apply(decode_provider_message(kQrMessage));
  EXPECT_EQ(report.objects_touched, 1u);
  EXPECT_EQ(env.objects().get_object(ObjectId("foo")).attributes, json::parse(R"({"sensor":{"type":"camera"}})"));
}

TEST(ProviderHandler, AmbiguousItemIsIsolated) {
  Environment env;
  add_camera(env, "cam");
  add_marker_object(env, "m1", "QR", "one");
  add_marker_object(env, "m2a", "QR", "two");
  add_marker_object(env, "m2b", "QR", "two");
  add_marker_object(env, "m3", "QR", "three");
  ProviderHandler h("cam", env);
  const auto report = h.apply(message("cam", 1, 10,
                                      {detection("marker.QR", "one"), detection("marker.QR", "two"),
                                       detection("marker.QR", "three")}));
  EXPECT_EQ(report.edges_applied, 2u);
  EXPECT_EQ(report.items_dropped, 1u);
  EXPECT_EQ(h.faults(), 1u);
  EXPECT_THROW(h.resolve_external_id({"marker.QR", "two"}), Error);
}

TEST(ProviderHandler, KnownMarkerIsCached) {
  Environment env;
  add_marker_object(env, "bar", "QR", "bar");
  ProviderHandler h("foo", env);
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "bar"}), ObjectId("bar"));
  EXPECT_EQ(h.store_queries(), 1u);
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "bar"}), ObjectId("bar"));
  EXPECT_EQ(h.resolve_external_id({"QR", "bar"}), ObjectId("bar"));
  EXPECT_EQ(h.store_queries(), 1u);
}

TEST(ProviderHandler, UnknownMarkerBecomesProvisional) {
  Environment env;
  ProviderHandler h("foo", env);
  const auto id = h.resolve_external_id({"marker.QR", "zzz"});
  const auto doc = env.objects().get_object(id);
  EXPECT_TRUE(doc.provisional());
  EXPECT_EQ(doc.attributes["marker"]["QR"]["id"], "zzz");
  // The handler's own creation does not evict the entry it just cached.
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "zzz"}), id);
  EXPECT_EQ(h.store_queries(), 1u);
}

TEST(ProviderHandler, DropPolicyRejectsUnknownMarkers) {
  Environment env;
  ProviderHandler h("foo", env, {UnknownIdPolicy::drop});
  try {
    h.resolve_external_id({"marker.QR", "zzz"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotFound);
  }
  const auto report = h.apply(message("foo", 1, 1, {detection("marker.QR", "zzz")}));
  EXPECT_EQ(report.items_dropped, 1u);
  EXPECT_EQ(env.graph().edge_count(), 0u);
}

TEST(ProviderHandler, MarkerChangeInvalidatesCache) {
  Environment env;
  add_marker_object(env, "a", "QR", "k");
  ProviderHandler h("foo", env);
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "k"}), ObjectId("a"));

  // Unrelated write: still cached.
  env.upsert_object(ObjectId("other"), store::ObjectUpdate{{store::AttributeMutation::set("x", 1)}, {}});
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "k"}), ObjectId("a"));
  EXPECT_EQ(h.store_queries(), 1u);

  // The marker moves to another object.
  env.upsert_object(ObjectId("a"), store::ObjectUpdate{{store::AttributeMutation::remove("marker")}, {}});
  add_marker_object(env, "b", "QR", "k");
  EXPECT_EQ(h.resolve_external_id({"marker.QR", "k"}), ObjectId("b"));
  EXPECT_EQ(h.store_queries(), 2u);

  env.delete_object(ObjectId("b"));
  const auto id = h.resolve_external_id({"marker.QR", "k"});
  EXPECT_EQ(id, provisional_id({"marker.QR", "k"}));
  EXPECT_EQ(h.store_queries(), 3u);
}

TEST(ProviderHandler, CacheMatchesUncachedLookupUnderScriptedMutations) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Environment env;
    ProviderHandler h("cam", env, {UnknownIdPolicy::drop});
    const int keys = 6;
    std::map<std::string, std::uint64_t> invalidation_epochs;
    for (int step = 0; step < 300; ++step) {
      const auto key = "k" + std::to_string(pick(rng, keys));
      if (pick(rng, 4) == 0) {
        const auto obj = ObjectId("o" + std::to_string(pick(rng, 8)));
        if (pick(rng, 5) == 0) {
          if (env.objects().try_get(obj)) env.delete_object(obj);
        } else {
          env.upsert_object(obj, store::ObjectUpdate{{store::AttributeMutation::set("marker.QR.id", key)}, {}});
        }
        continue;
      }
      const auto hits = env.objects().find_objects(store::AttributePredicate::eq("marker.QR.id", key));
      try {
        const auto got = h.resolve_external_id({"marker.QR", key});
        ASSERT_EQ(hits.size(), 1u);
        EXPECT_EQ(got, hits.front().id);
      } catch (const Error& e) {
        EXPECT_NE(hits.size(), 1u);
        EXPECT_EQ(e.code(), hits.empty() ? ErrorCode::NotFound : ErrorCode::AmbiguousExternalId);
      }
    }
  }
}

TEST(ProviderHandler, CacheEconomy) {
  Environment env;
  for (int i = 0; i < 20; ++i) add_marker_object(env, "o" + std::to_string(i), "QR", "k" + std::to_string(i));
  ProviderHandler h("cam", env);
  std::mt19937_64 rng(17);
  for (int i = 0; i < 1000; ++i) {
    if (i % 100 == 50) {
      const auto n = pick(rng, 20);
      env.upsert_object(ObjectId("o" + std::to_string(n)),
                        store::ObjectUpdate{{store::AttributeMutation::set("note", i)}, {}});
    }
    const auto n = pick(rng, 20);
    EXPECT_EQ(h.resolve_external_id({"marker.QR", "k" + std::to_string(n)}), ObjectId("o" + std::to_string(n)));
  }
  EXPECT_LE(h.store_queries(), 20u + h.cache().invalidations());
  EXPECT_LE(h.cache().invalidations(), 10u);
}

TEST(ProviderHandler, LossyDeliveryConvergesToMaximalObservationPerKey) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    Environment direct_env;
    for (int i = 0; i < 4; ++i) add_marker_object(direct_env, "m" + std::to_string(i), "QR", std::to_string(i));
    std::vector<ProviderMessage> log;
    for (std::uint64_t seq = 1; seq <= 30; ++seq) {
      const auto t = static_cast<std::int64_t>(seq * 1000 + pick(rng, 3) * 1000);
      log.push_back(message("cam", seq, t,
                            {detection("marker.QR", std::to_string(pick(rng, 4)), testing::random_pose(rng, 2),
                                       uniform(rng, 0, 0.05))}));
    }
    std::vector<ProviderMessage> delivered;
    for (const auto& m : log) {
      if (uniform(rng, 0, 1) < 0.3) continue;
      delivered.push_back(m);
      if (uniform(rng, 0, 1) < 0.3) delivered.push_back(m);
    }
    std::shuffle(delivered.begin(), delivered.end(), rng);

    Environment env;
    for (int i = 0; i < 4; ++i) add_marker_object(env, "m" + std::to_string(i), "QR", std::to_string(i));
    ProviderHandler h("cam", env);
    for (const auto& m : delivered) h.apply(m);

    // Oracle: the (time_us, seq)-maximal observation per child among the delivered ones.
    std::map<std::string, const ProviderMessage*> best;
    for (const auto& m : delivered) {
      const auto& child = std::get<Detection>(m.observations[0]).ref.ext_id;
      auto& slot = best[child];
      if (slot == nullptr || std::pair(m.time_us, m.seq) > std::pair(slot->time_us, slot->seq)) slot = &m;
    }
    ProviderHandler oracle_handler("cam", direct_env);
    std::vector<const ProviderMessage*> ordered;
    for (const auto& [child, m] : best) ordered.push_back(m);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->seq < b->seq; });
    for (const auto* m : ordered) oracle_handler.apply(*m);
    ASSERT_EQ(env.graph().digest(), direct_env.graph().digest()) << "trial " << trial;
  }
}

// --- entry point -----------------------------------------------------------

TEST(EntryPoint, AssignmentIsStable) {
  Environment env;
  EntryPoint ep(env);
  ep.add_worker("w1");
  ep.add_worker("w2");
  const auto a = ep.assign_handler("foo");
  EXPECT_EQ(ep.assign_handler("foo"), a);
  EXPECT_EQ(ep.worker_of("foo"), "w1");
  EXPECT_EQ(ep.worker_of("bar"), std::nullopt);
}

TEST(EntryPoint, ProvidersSpreadAcrossWorkers) {
  std::mt19937_64 rng(8);
  Environment env;
  EntryPoint ep(env);
  for (int w = 0; w < 4; ++w) ep.add_worker("w" + std::to_string(w));
  for (int p = 0; p < 100; ++p) {
    for (int w = 0; w < 4; ++w) ep.report_load("w" + std::to_string(w), uniform(rng, 0.4, 0.6));
    ep.assign_handler("p" + std::to_string(p));
  }
  for (const auto& [w, n] : ep.providers_per_worker()) {
    EXPECT_GE(n, 15u) << w;
    EXPECT_LE(n, 35u) << w;
  }
}

TEST(EntryPoint, KilledHandlerIsReplacedOnNextMessage) {
  Environment env;
  add_marker_object(env, "bar", "QR", "bar");
  EntryPoint ep(env);
  ep.add_worker("w1");
  ep.add_worker("w2");
  auto m = decode_provider_message(kQrMessage);
  ASSERT_TRUE(ep.handle(m));
  const auto first = ep.assign_handler("foo");
  ep.kill_handler("foo");
  m.seq = 13;
  m.time_us += 1;
  const auto report = ep.handle(m);
  ASSERT_TRUE(report);
  EXPECT_EQ(report->edges_applied, 1u);
  EXPECT_NE(ep.assign_handler("foo"), first);
  EXPECT_EQ(ep.counters().reassignments, 1u);
}

TEST(EntryPoint, DeadWorkerProvidersMove) {
  Environment env;
  EntryPoint ep(env);
  ep.add_worker("w1");
  ep.add_worker("w2");
  for (int p = 0; p < 6; ++p) ep.assign_handler("p" + std::to_string(p));
  const auto moved = ep.providers_on("w1");
  ep.set_worker_alive("w1", false);
  for (const auto& p : moved) {
    ep.assign_handler(p);
    EXPECT_EQ(ep.worker_of(p), "w2");
  }
  ep.set_worker_alive("w2", false);
  try {
    ep.assign_handler("p0");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoWorkersAvailable);
  }
  EXPECT_FALSE(ep.handle(decode_provider_message(kQrMessage)));
  EXPECT_EQ(ep.counters().no_workers, 1u);
}

TEST(EntryPoint, CountsDecodeFailures) {
  Environment env;
  EntryPoint ep(env);
  ep.add_worker("w");
  EXPECT_FALSE(ep.handle_datagram(""));
  auto doc = json::parse(kQrMessage);
  doc["v"] = 7;
  EXPECT_FALSE(ep.handle_datagram(doc.dump()));
  EXPECT_TRUE(ep.handle_datagram(kQrMessage));
  const auto c = ep.counters();
  EXPECT_EQ(c.datagrams, 3u);
  EXPECT_EQ(c.malformed, 1u);
  EXPECT_EQ(c.unsupported_version, 1u);
  EXPECT_EQ(c.applied, 1u);
}

}  // namespace
}  // namespace rail::ingest
