#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <functional>
#include <thread>

#include <nlohmann/json.hpp>

#include "rail/error.hpp"
#include "rail/framing.hpp"
#include "rail/net.hpp"
#include "rail/provider_message.hpp"

namespace rail::net {
namespace {

using nlohmann::json;
using namespace std::chrono_literals;

bool eventually(const std::function<bool()>& pred, Millis limit = 5000ms) {
  const auto deadline = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(10ms);
  }
  return pred();
}

std::uint16_t free_udp_port() { return UdpSocket::bind({"127.0.0.1", 0}).local_port(); }

config::Config loopback_config(const std::string& node, std::uint16_t discovery_port) {
  config::Config c;
  c.node.id = node;
  c.discovery.port = discovery_port;
  c.discovery.broadcast_addr = "127.0.0.1";
  c.discovery.announce_interval_us = 100'000;
  c.health.heartbeat_interval_us = 100'000;
  c.health.decision_log = (std::filesystem::temp_directory_path() / ("rail-net-" + node + ".jsonl")).string();
  c.ingest.bind = "127.0.0.1";
  c.ingest.port = 0;
  c.ingest.workers = 2;
  c.query.bind = "127.0.0.1";
  c.query.port = 0;
  return c;
}

void add_marker(Environment& env, const std::string& id, const std::string& ext) {
  store::ObjectUpdate u;
  u.mutations = {store::AttributeMutation::set("marker.QR.id", ext)};
  env.upsert_object(ObjectId(id), u);
}

std::string detection_bytes(const std::string& provider, std::uint64_t seq, const std::string& ext, double x) {
  ingest::ProviderMessage m{{provider, "camera"}, seq, 1'000 + static_cast<std::int64_t>(seq), {}};
  m.observations.emplace_back(ingest::Detection{{"marker.QR", ext}, geo::Pose6D::translation(x, 0, 0), 0.01, 0.001});
  return ingest::encode_provider_message(m);
}

TEST(Endpoint, ParsesHostAndPort) {
  EXPECT_EQ(parse_endpoint("127.0.0.1:47400"), (Endpoint{"127.0.0.1", 47400}));
  EXPECT_EQ(parse_endpoint("rail-a:0"), (Endpoint{"rail-a", 0}));
  EXPECT_EQ(parse_endpoint("rail-a:9").str(), "rail-a:9");
  for (const char* bad : {"", "host", ":80", "host:", "host:x", "host:70000", "host:80x"}) {
    EXPECT_THROW(parse_endpoint(bad), Error) << bad;
  }
}

TEST(Roles, ParsesCommaSeparatedNames) {
  EXPECT_EQ(parse_roles("ingest,query"), (Roles{true, true, false, false}));
  EXPECT_EQ(parse_roles("mgmt"), (Roles{false, false, true, false}));
  EXPECT_EQ(parse_roles("slave,query,mgmt,ingest"), (Roles{true, true, true, true}));
  EXPECT_THROW(parse_roles("ingest,,query"), Error);
  EXPECT_THROW(parse_roles("worker"), Error);
  EXPECT_THROW(parse_roles(""), Error);
}

TEST(Sockets, UdpRoundTrip) {
  auto rx = UdpSocket::bind({"127.0.0.1", 0});
  send_datagram({"127.0.0.1", rx.local_port()}, "hello");
  const auto d = rx.receive(2000ms);
  ASSERT_TRUE(d);
  EXPECT_EQ(d->bytes, "hello");
  EXPECT_FALSE(rx.receive(20ms));
}

TEST(Sockets, TcpFramesSurviveSplitWrites) {
  auto listener = TcpListener::bind({"127.0.0.1", 0});
  std::jthread client([port = listener.local_port()] {
    auto s = TcpStream::connect({"127.0.0.1", port});
    for (int i = 0; i < 50; ++i) s.send_frame({{"i", i}, {"pad", std::string(static_cast<std::size_t>(i) * 997, 'x')}});
  });
  auto server = listener.accept(2000ms);
  ASSERT_TRUE(server);
  for (int i = 0; i < 50; ++i) {
    const auto f = server->receive_frame(2000ms);
    ASSERT_TRUE(f);
    EXPECT_EQ(f->at("i"), i);
  }
  client.join();
  EXPECT_THROW(server->receive_frame(2000ms), Error);
}

TEST(Sockets, OversizedAndNonJsonFramesAreMalformed) {
  auto listener = TcpListener::bind({"127.0.0.1", 0});
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  ASSERT_GE(fd, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(listener.local_port());
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)), 0);
  auto server = listener.accept(2000ms, 64);
  ASSERT_TRUE(server);

  const auto junk = framing::encode_frame("{not json");
  ASSERT_EQ(::send(fd, junk.data(), junk.size(), 0), static_cast<ssize_t>(junk.size()));
  try {
    server->receive_frame(2000ms);
    ADD_FAILURE() << "junk accepted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedMessage);
  }
  const auto big = framing::encode_frame(std::string(100, ' '));
  ASSERT_EQ(::send(fd, big.data(), big.size(), 0), static_cast<ssize_t>(big.size()));
  EXPECT_THROW(server->receive_frame(2000ms), Error);
  ::close(fd);
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override { discovery_port_ = free_udp_port(); }

  std::unique_ptr<Server> make(const std::string& node, Roles roles, const std::string& peer = {}) {
    auto c = loopback_config(node, discovery_port_);
    c.replication.peer = peer;
    auto s = std::make_unique<Server>(c, roles);
    return s;
  }

  std::uint16_t discovery_port_ = 0;
};

TEST_F(ServerTest, IngestDatagramsBecomeQueryableEdges) {
  auto server = make("a1", {true, true, false, false});
  add_marker(server->environment(), "crate-1", "bar");
  server->start();
  const Endpoint ingest{"127.0.0.1", server->ingest_port()};
  const Endpoint query{"127.0.0.1", server->query_port()};

  send_datagram(ingest, detection_bytes("cam", 1, "bar", 0.5));
  send_datagram(ingest, "garbage");
  ASSERT_TRUE(eventually([&] { return server->ingest_counters().applied == 1; }));
  ASSERT_TRUE(eventually([&] { return server->ingest_counters().malformed == 1; }));

  const auto tf = request(query, {{"id", 7}, {"op", "get_transform"}, {"src", "cam"}, {"dst", "crate-1"}}, 2000ms);
  ASSERT_EQ(tf["ok"], true) << tf.dump();
  EXPECT_EQ(tf["id"], 7);

  const auto missing = request(query, {{"id", 8}, {"op", "get_object"}, {"object", "nope"}}, 2000ms);
  EXPECT_EQ(missing["ok"], false);
  EXPECT_EQ(missing["error"], "NotFound");

  const auto bad = request(query, {{"id", 9}, {"op", "teleport"}}, 2000ms);
  EXPECT_EQ(bad["ok"], false);
  EXPECT_EQ(bad["id"], 9);
}

TEST_F(ServerTest, FollowStreamsDeltas) {
  auto server = make("a2", {true, true, false, false});
  add_marker(server->environment(), "crate-1", "bar");
  add_marker(server->environment(), "crate-2", "baz");
  server->start();
  const Endpoint ingest{"127.0.0.1", server->ingest_port()};
  send_datagram(ingest, detection_bytes("cam", 1, "bar", 0.5));
  ASSERT_TRUE(eventually([&] { return server->ingest_counters().applied == 1; }));

  std::vector<json> frames;
  std::jthread feeder([&](std::stop_token st) {
    for (std::uint64_t seq = 2; !st.stop_requested() && seq < 200; ++seq) {
      std::this_thread::sleep_for(50ms);
      send_datagram(ingest, detection_bytes("cam", seq, "baz", 0.25 + 0.001 * static_cast<double>(seq)));
    }
  });
  follow({"127.0.0.1", server->query_port()},
         {{"id", 1}, {"op", "range_query"}, {"follow", true}, {"frame", "cam"}, {"center", {0, 0, 0}}, {"radius", 2.0}},
         [&](const json& f) {
           frames.push_back(f);
           return !f.contains("delta");
         });
  feeder.request_stop();
  ASSERT_GE(frames.size(), 2u);
  EXPECT_EQ(frames.front()["ok"], true);
  EXPECT_EQ(frames.front()["id"], 1);
  EXPECT_EQ(frames.back()["sub"], 1);
}

TEST_F(ServerTest, SlaveReplicatesOverTheNetworkAndConverges) {
  auto master = make("m1", {true, true, false, false});
  add_marker(master->environment(), "crate-1", "bar");
  master->start();
  auto slave = make("s1", {false, false, false, true}, "127.0.0.1:" + std::to_string(master->query_port()));
  slave->start();
  EXPECT_EQ(slave->env_module(), "slave@s1");

  const Endpoint ingest{"127.0.0.1", master->ingest_port()};
  for (std::uint64_t seq = 1; seq <= 20; ++seq) {
    send_datagram(ingest, detection_bytes("cam", seq, "bar", 0.01 * static_cast<double>(seq)));
  }
  ASSERT_TRUE(eventually([&] { return master->ingest_counters().applied == 20; }));
  ASSERT_TRUE(eventually([&] { return slave->environment().digests() == master->environment().digests(); }))
      << slave->environment().digests().dump() << "\n" << master->environment().digests().dump();
  EXPECT_EQ(slave->environment().heads(), master->environment().heads());

  // A slave refuses provider traffic.
  EXPECT_EQ(slave->ingest_port(), 0);
}

TEST_F(ServerTest, StopIsIdempotent) {
  auto server = make("a3", {true, true, true, false});
  server->start();
  server->stop();
  server->stop();
}

}  // namespace
}  // namespace rail::net
