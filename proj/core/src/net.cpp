#include "rail/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <condition_variable>
#include <cstring>
#include <mutex>
#include <set>
#include <thread>
#include <utility>

#include <spdlog/spdlog.h>

#include "rail/digest.hpp"
#include "rail/error.hpp"
#include "rail/query.hpp"
#include "rail/replication.hpp"
#include "rail/subscription.hpp"

namespace rail::net {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

[[noreturn]] void io_error(const std::string& what) {
  throw Error(ErrorCode::IoError, what + ": " + std::strerror(errno));
}

sockaddr_in resolve(const Endpoint& e, int socktype) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = socktype;
  addrinfo* res = nullptr;
  const auto port = std::to_string(e.port);
  if (const int rc = ::getaddrinfo(e.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw Error(ErrorCode::IoError, "cannot resolve " + e.str() + ": " + ::gai_strerror(rc));
  }
  sockaddr_in out{};
  std::memcpy(&out, res->ai_addr, sizeof(out));
  ::freeaddrinfo(res);
  return out;
}

Endpoint endpoint_of(const sockaddr_in& addr) {
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
  return {buf, ntohs(addr.sin_port)};
}

std::uint16_t port_of(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof(addr);
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) io_error("getsockname");
  return ntohs(addr.sin_port);
}

/// True when `fd` became readable within `timeout`.
bool wait_readable(int fd, Millis timeout) {
  pollfd p{fd, POLLIN, 0};
  const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (rc < 0 && errno != EINTR) io_error("poll");
  return rc > 0;
}

Fd open_socket(int type) {
  Fd fd(::socket(AF_INET, type | SOCK_CLOEXEC, 0));
  if (!fd) io_error("socket");
  return fd;
}

void set_flag(int fd, int level, int option) {
  const int one = 1;
  if (::setsockopt(fd, level, option, &one, sizeof(one)) != 0) io_error("setsockopt");
}

std::int64_t steady_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now().time_since_epoch()).count();
}

std::int64_t wall_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

Endpoint parse_endpoint(std::string_view addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw Error(ErrorCode::InvalidArgument, "address must be host:port, got \"" + std::string(addr) + "\"");
  }
  unsigned port = 0;
  const char* first = addr.data() + colon + 1;
  const char* last = addr.data() + addr.size();
  auto [ptr, ec] = std::from_chars(first, last, port);
  if (ec != std::errc() || ptr != last || first == last || port > 65535) {
    throw Error(ErrorCode::InvalidArgument, "bad port in \"" + std::string(addr) + "\"");
  }
  return {std::string(addr.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

// --- descriptors -------------------------------------------------------------

Fd::~Fd() { reset(); }

Fd& Fd::operator=(Fd&& o) noexcept {
  if (this != &o) {
    reset();
    fd_ = std::exchange(o.fd_, -1);
  }
  return *this;
}

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

// --- UDP ------------------------------------------------------------------------

UdpSocket UdpSocket::bind(const Endpoint& at, bool shared) {
  auto fd = open_socket(SOCK_DGRAM);
  if (shared) {
    set_flag(fd.get(), SOL_SOCKET, SO_REUSEADDR);
    set_flag(fd.get(), SOL_SOCKET, SO_REUSEPORT);
  }
  const auto addr = resolve(at, SOCK_DGRAM);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) io_error("bind " + at.str());
  return UdpSocket(std::move(fd));
}

void UdpSocket::set_broadcast(bool on) {
  const int v = on ? 1 : 0;
  if (::setsockopt(fd_.get(), SOL_SOCKET, SO_BROADCAST, &v, sizeof(v)) != 0) io_error("SO_BROADCAST");
}

void UdpSocket::send_to(const Endpoint& to, std::string_view bytes) const {
  const auto addr = resolve(to, SOCK_DGRAM);
  const auto n = ::sendto(fd_.get(), bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&addr),
                          sizeof(addr));
  if (n < 0) io_error("sendto " + to.str());
}

std::optional<UdpSocket::Datagram> UdpSocket::receive(Millis timeout) const {
  if (!wait_readable(fd_.get(), timeout)) return std::nullopt;
  std::string buf(64 * 1024, '\0');
  sockaddr_in from{};
  socklen_t len = sizeof(from);
  const auto n = ::recvfrom(fd_.get(), buf.data(), buf.size(), 0, reinterpret_cast<sockaddr*>(&from), &len);
  if (n < 0) {
    if (errno == EINTR || errno == EAGAIN) return std::nullopt;
    io_error("recvfrom");
  }
  buf.resize(static_cast<std::size_t>(n));
  return Datagram{std::move(buf), endpoint_of(from)};
}

std::uint16_t UdpSocket::local_port() const { return port_of(fd_.get()); }

void send_datagram(const Endpoint& to, std::string_view bytes) {
  auto s = UdpSocket::bind({"0.0.0.0", 0});
  s.set_broadcast(true);
  s.send_to(to, bytes);
}

// --- TCP ------------------------------------------------------------------------

TcpStream TcpStream::connect(const Endpoint& to, std::uint32_t max_frame) {
  auto fd = open_socket(SOCK_STREAM);
  const auto addr = resolve(to, SOCK_STREAM);
  if (::connect(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) io_error("connect " + to.str());
  set_flag(fd.get(), IPPROTO_TCP, TCP_NODELAY);
  return TcpStream(std::move(fd), max_frame);
}

void TcpStream::send_frame(const json& doc) {
  const auto bytes = framing::encode_json_frame(doc);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = ::send(fd_.get(), bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_error("send");
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<json> TcpStream::receive_frame(Millis timeout) {
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (auto payload = decoder_.next()) {
      auto doc = json::parse(*payload, nullptr, false);
      if (doc.is_discarded()) throw Error(ErrorCode::MalformedMessage, "frame is not valid JSON");
      return doc;
    }
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
    if (!wait_readable(fd_.get(), std::max(left, Millis(0)))) return std::nullopt;
    char buf[16 * 1024];
    const auto n = ::recv(fd_.get(), buf, sizeof(buf), 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      io_error("recv");
    }
    if (n == 0) throw Error(ErrorCode::IoError, "connection closed by peer");
    decoder_.feed({buf, static_cast<std::size_t>(n)});
  }
}

TcpListener TcpListener::bind(const Endpoint& at) {
  auto fd = open_socket(SOCK_STREAM);
  set_flag(fd.get(), SOL_SOCKET, SO_REUSEADDR);
  const auto addr = resolve(at, SOCK_STREAM);
  if (::bind(fd.get(), reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) != 0) io_error("bind " + at.str());
  if (::listen(fd.get(), 64) != 0) io_error("listen");
  return TcpListener(std::move(fd));
}

std::optional<TcpStream> TcpListener::accept(Millis timeout, std::uint32_t max_frame) const {
  if (!wait_readable(fd_.get(), timeout)) return std::nullopt;
  Fd fd(::accept4(fd_.get(), nullptr, nullptr, SOCK_CLOEXEC));
  if (!fd) {
    if (errno == EINTR || errno == EAGAIN || errno == ECONNABORTED) return std::nullopt;
    io_error("accept");
  }
  set_flag(fd.get(), IPPROTO_TCP, TCP_NODELAY);
  return TcpStream(std::move(fd), max_frame);
}

std::uint16_t TcpListener::local_port() const { return port_of(fd_.get()); }

json request(const Endpoint& server, const json& req, Millis timeout) {
  auto s = TcpStream::connect(server);
  s.send_frame(req);
  if (auto frame = s.receive_frame(timeout)) return *frame;
  throw Error(ErrorCode::IoError, "no response from " + server.str() + " within " +
                                      std::to_string(timeout.count()) + " ms");
}

void follow(const Endpoint& server, const json& req, const std::function<bool(const json&)>& on_frame) {
  auto s = TcpStream::connect(server);
  s.send_frame(req);
  for (;;) {
    if (auto frame = s.receive_frame(Millis(1000)); frame && !on_frame(*frame)) return;
  }
}

control::EndpointDirectory discover(std::uint16_t port, Millis window) {
  control::EndpointDirectory dir;
  auto s = UdpSocket::bind({"0.0.0.0", port}, true);
  const auto deadline = Clock::now() + window;
  while (Clock::now() < deadline) {
    const auto left = std::chrono::duration_cast<Millis>(deadline - Clock::now());
    auto d = s.receive(std::max(left, Millis(0)));
    if (!d) continue;
    try {
      const auto parsed = control::decode_discovery(d->bytes);
      if (const auto* a = std::get_if<control::Announcement>(&parsed)) {
        dir.observe(*a, steady_us());
      }
    } catch (const Error&) {
    }
  }
  return dir;
}

Roles parse_roles(std::string_view csv) {
  Roles r;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const auto end = std::min(csv.find(',', start), csv.size());
    const auto name = csv.substr(start, end - start);
    if (name == "ingest") {
      r.ingest = true;
    } else if (name == "query") {
      r.query = true;
    } else if (name == "mgmt") {
      r.mgmt = true;
    } else if (name == "slave") {
      r.slave = true;
    } else {
      throw Error(ErrorCode::InvalidArgument, "unknown role \"" + std::string(name) + "\"");
    }
    start = end + 1;
  }
  return r;
}

// --- server -----------------------------------------------------------------------

struct Server::Impl {
  struct Connection {
    std::shared_ptr<std::atomic<bool>> done;
    std::jthread thread;
  };

  config::Config cfg;
  Roles roles;
  Environment env;
  ingest::EntryPoint entry;
  std::optional<UdpSocket> ingest_sock;
  std::optional<TcpListener> query_listener;
  std::optional<UdpSocket> discovery_sock;
  Endpoint broadcast;

  std::atomic<bool> running{false};
  std::atomic<bool> replicating{false};
  std::atomic<std::uint64_t> rejected{0};
  std::mutex sleep_mutex;
  std::condition_variable wake;
  std::vector<std::jthread> threads;
  std::mutex conn_mutex;
  std::vector<Connection> connections;

  std::mutex health_mutex;
  control::HealthMonitor health;
  std::optional<control::DecisionLog> decisions;

  Impl(config::Config c, Roles r)
      : cfg(std::move(c)),
        roles(r),
        env(cfg.environment_options()),
        entry(env, ingest::HandlerOptions{cfg.ingest.unknown_ids}),
        broadcast{cfg.discovery.broadcast_addr, cfg.discovery.port},
        health(control::HealthOptions{cfg.health.heartbeat_interval_us, cfg.health.suspect_after,
                                      cfg.health.failed_after}) {
    for (unsigned k = 0; k < cfg.ingest.workers; ++k) entry.add_worker("worker-" + std::to_string(k));
    if (roles.slave) env.demote(env.epoch());
  }

  std::string module() const {
    return std::string(env.role() == StoreRole::master ? "master@" : "slave@") + cfg.node.id;
  }

  /// Sleeps up to `d`; returns false once the server is stopping.
  bool pause(Millis d) {
    std::unique_lock lock(sleep_mutex);
    return !wake.wait_for(lock, d, [this] { return !running.load(); });
  }

  void start() {
    if (roles.ingest) ingest_sock = UdpSocket::bind({cfg.ingest.bind, cfg.ingest.port});
    if (roles.query) query_listener = TcpListener::bind({cfg.query.bind, cfg.query.port});
    discovery_sock = UdpSocket::bind({"0.0.0.0", cfg.discovery.port}, true);
    discovery_sock->set_broadcast(true);
    if (roles.mgmt) decisions.emplace(cfg.health.decision_log);

    running = true;
    replicating = roles.slave;
    if (ingest_sock) threads.emplace_back([this] { ingest_loop(); });
    if (query_listener) threads.emplace_back([this] { accept_loop(); });
    threads.emplace_back([this] { discovery_loop(); });
    threads.emplace_back([this] { ticker(); });
    if (roles.slave) threads.emplace_back([this] { replica_loop(); });
    spdlog::info("node {} up as {} (epoch {})", cfg.node.id, module(), env.epoch());
  }

  void stop() {
    if (!running.exchange(false)) return;
    replicating = false;
    wake.notify_all();
    {
      std::lock_guard lock(conn_mutex);
      for (auto& c : connections) c.thread.request_stop();
      connections.clear();
    }
    threads.clear();
  }

  // -- ingest ------------------------------------------------------------------

  void ingest_loop() {
    while (running) {
      std::optional<UdpSocket::Datagram> d;
      try {
        d = ingest_sock->receive(Millis(100));
      } catch (const Error& e) {
        spdlog::warn("ingest socket: {}", e.what());
        continue;
      }
      if (!d) continue;
      if (env.role() != StoreRole::master) {
        ++rejected;
        continue;
      }
      entry.handle_datagram(d->bytes);
    }
  }

  // -- query -------------------------------------------------------------------

  void accept_loop() {
    while (running) {
      std::optional<TcpStream> s;
      try {
        s = query_listener->accept(Millis(100), cfg.query.max_frame_bytes);
      } catch (const Error& e) {
        spdlog::warn("query listener: {}", e.what());
        continue;
      }
      if (!s) continue;
      std::lock_guard lock(conn_mutex);
      std::erase_if(connections, [](const Connection& c) { return c.done->load(); });
      auto done = std::make_shared<std::atomic<bool>>(false);
      connections.push_back(
          {done, std::jthread([this, done](std::stop_token st, TcpStream stream) {
             try {
               serve(st, stream);
             } catch (const Error& e) {
               if (e.code() != ErrorCode::IoError) spdlog::warn("query connection: {}", e.what());
             }
             *done = true;
           }, std::move(*s))});
    }
  }

  void serve(const std::stop_token& st, TcpStream& s) {
    std::vector<std::unique_ptr<query::Subscription>> subs;
    while (!st.stop_requested() && running) {
      std::optional<json> req;
      try {
        req = s.receive_frame(subs.empty() ? Millis(100) : Millis(10));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::MalformedMessage) throw;
        s.send_frame(query::error_frame(json(), e));
        return;
      }
      if (req) {
        if (req->is_object() && req->value("op", "") == "replicate") {
          serve_replica(st, s, *req);
          return;
        }
        const auto id = req->is_object() ? req->value("id", json()) : json();
        try {
          auto q = query::parse_query(*req);
          if (q.follow) {
            subs.push_back(std::make_unique<query::Subscription>(env, std::move(q), cfg.query.subscription_buffer));
          } else {
            s.send_frame(query::handle_request(env, *req));
          }
        } catch (const Error& e) {
          s.send_frame(query::error_frame(id, e));
        }
      }
      for (auto& sub : subs) {
        sub->pump();
        for (const auto& frame : sub->take()) s.send_frame(frame);
      }
      std::erase_if(subs, [](const auto& sub) { return sub->closed() && sub->pending() == 0; });
    }
  }

  /// Streams committed events (and blobs) to a slave and, in sync mode,
  /// releases subscriber visibility as the slave acknowledges.
  void serve_replica(const std::stop_token& st, TcpStream& s, const json& req) {
    Cursors sent;
    try {
      sent = req.at("after").get<Cursors>();
    } catch (const json::exception& e) {
      s.send_frame(query::error_frame(req.value("id", json()), Error(ErrorCode::MalformedQuery, e.what())));
      return;
    }
    const bool sync = cfg.replication.mode == replication::Mode::sync;
    spdlog::info("slave {} attached at graph {} objects {} ({})", req.value("node", "?"), sent.graph, sent.objects,
                 replication::mode_name(cfg.replication.mode));
    if (sync) env.set_feed_gating(true);
    struct Ungate {
      Environment& env;
      bool on;
      ~Ungate() {
        if (on) env.set_feed_gating(false);
      }
    } ungate{env, sync};

    std::set<std::string> blobs_sent;
    while (!st.stop_requested() && running && env.role() == StoreRole::master) {
      const auto epoch = env.epoch();
      bool busy = false;
      for (const auto& e : env.graph().log().read_committed(sent.graph, sent.graph + 256)) {
        s.send_frame({{"repl", "event"}, {"epoch", epoch}, {"event", e}});
        sent.graph = e.seq;
        busy = true;
      }
      for (const auto& e : env.objects().log().read_committed(sent.objects, sent.objects + 256)) {
        s.send_frame({{"repl", "event"}, {"epoch", epoch}, {"event", e}});
        sent.objects = e.seq;
        busy = true;
      }
      if (env.blobs().size() != blobs_sent.size()) {
        for (const auto& ref : env.blobs().manifest()) {
          if (!blobs_sent.insert(ref.hash).second) continue;
          s.send_frame({{"repl", "blob"},
                        {"epoch", epoch},
                        {"media_type", ref.media_type},
                        {"content_b64", base64_encode(env.blobs().get_blob(ref))}});
        }
      }
      while (auto ack = s.receive_frame(busy ? Millis(0) : Millis(10))) {
        if (!sync || !ack->contains("ack")) continue;
        const auto acked = ack->at("ack").get<Cursors>();
        env.graph().log().release(std::min(acked.graph, sent.graph));
        env.objects().log().release(std::min(acked.objects, sent.objects));
      }
    }
  }

  void replica_loop() {
    const auto peer = parse_endpoint(cfg.replication.peer);
    while (running && replicating) {
      try {
        auto s = TcpStream::connect(peer, cfg.query.max_frame_bytes);
        s.send_frame({{"op", "replicate"}, {"after", env.heads()}, {"node", cfg.node.id}});
        spdlog::info("replicating from {}", peer.str());
        while (running && replicating) {
          auto f = s.receive_frame(Millis(200));
          if (!f) continue;
          if (f->value("ok", true) == false) throw Error(ErrorCode::IoError, f->dump());
          const auto epoch = f->at("epoch").get<std::uint64_t>();
          if (f->at("repl") == "event") {
            env.apply_replicated(f->at("event").get<ChangeEvent>(), epoch);
          } else {
            env.apply_replicated_blob(base64_decode(f->at("content_b64").get<std::string>()),
                                      f->at("media_type").get<std::string>(), epoch);
          }
          s.send_frame({{"ack", env.heads()}});
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::FencedWrite) {
          spdlog::error("replication stopped: {}", e.what());
          replicating = false;
          return;
        }
        if (replicating) spdlog::warn("replication from {}: {}", peer.str(), e.what());
      } catch (const json::exception& e) {
        spdlog::warn("replication frame: {}", e.what());
      }
      pause(Millis(500));
    }
  }

  // -- discovery and management ------------------------------------------------

  void broadcast_bytes(const std::string& bytes) {
    try {
      discovery_sock->send_to(broadcast, bytes);
    } catch (const Error& e) {
      spdlog::debug("discovery send: {}", e.what());
    }
  }

  void announce() {
    if (env.role() != StoreRole::master) return;
    const auto epoch = env.epoch();
    if (roles.ingest) {
      broadcast_bytes(control::encode_announcement(
          {control::Role::ingest, cfg.node.advertise_host + ":" + std::to_string(ingest_sock->local_port()), epoch,
           cfg.node.id}));
    }
    if (roles.query) {
      broadcast_bytes(control::encode_announcement(
          {control::Role::query, cfg.node.advertise_host + ":" + std::to_string(query_listener->local_port()), epoch,
           cfg.node.id}));
    }
  }

  void heartbeats() {
    broadcast_bytes(control::encode_heartbeat({module(), {}}));
    if (env.role() != StoreRole::master) return;
    if (roles.ingest) {
      for (const auto& [worker, n] : entry.providers_per_worker()) {
        broadcast_bytes(control::encode_heartbeat({worker + "@" + cfg.node.id, {n, 0, 0.0}}));
      }
    }
    if (roles.query) broadcast_bytes(control::encode_heartbeat({"query@" + cfg.node.id, {}}));
  }

  static control::ModuleInfo infer_module(const std::string& id) {
    const auto at = id.find('@');
    const auto name = id.substr(0, at);
    control::ModuleInfo info{id, control::Role::ingest, at == std::string::npos ? "" : id.substr(at + 1),
                             control::ModuleKind::entry_point};
    if (name == "master") info.kind = control::ModuleKind::master;
    if (name == "slave") info.kind = control::ModuleKind::slave;
    if (name.rfind("worker-", 0) == 0) info.kind = control::ModuleKind::worker;
    if (name == "query") {
      info.kind = control::ModuleKind::query;
      info.role = control::Role::query;
    }
    return info;
  }

  void hear(const control::DiscoveryDatagram& d) {
    if (const auto* a = std::get_if<control::Announcement>(&d)) {
      if (a->node != cfg.node.id && a->epoch > env.epoch() && env.role() == StoreRole::master) {
        env.demote(a->epoch);
        spdlog::warn("fenced: {} announced epoch {}; stepping down", a->node, a->epoch);
      }
    } else if (const auto* hb = std::get_if<control::Heartbeat>(&d)) {
      if (!roles.mgmt) return;
      std::lock_guard lock(health_mutex);
      try {
        health.process_heartbeat(hb->module, steady_us(), hb->load);
      } catch (const Error&) {
        health.register_module(infer_module(hb->module), steady_us());
      }
    } else if (const auto* act = std::get_if<control::Action>(&d)) {
      if (act->kind == control::ActionKind::promote_slave && act->target == module() &&
          env.role() == StoreRole::replica) {
        replicating = false;
        const auto r = replication::promote_slave(&env, control::Role::ingest, cfg.node.id, std::nullopt);
        spdlog::warn("promoted to master at epoch {}", r.new_epoch);
        announce();
      }
    }
  }

  void discovery_loop() {
    while (running) {
      std::optional<UdpSocket::Datagram> d;
      try {
        d = discovery_sock->receive(Millis(100));
      } catch (const Error& e) {
        spdlog::warn("discovery socket: {}", e.what());
        continue;
      }
      if (!d) continue;
      try {
        hear(control::decode_discovery(d->bytes));
      } catch (const Error& e) {
        spdlog::debug("discovery datagram from {}: {}", d->from.str(), e.what());
      }
    }
  }

  void manage() {
    std::vector<control::Action> actions;
    {
      std::lock_guard lock(health_mutex);
      actions = health.detect_failures(steady_us());
    }
    for (const auto& a : actions) {
      json entry = a;
      entry["time_us"] = wall_us();
      try {
        decisions->append(entry);
      } catch (const Error& e) {
        spdlog::error("{}", e.what());
      }
      spdlog::warn("decision: {}", entry.dump());
      broadcast_bytes(control::encode_decision(a));
    }
  }

  void ticker() {
    const auto announce_every = std::chrono::microseconds(cfg.discovery.announce_interval_us);
    const auto beat_every = std::chrono::microseconds(cfg.health.heartbeat_interval_us);
    const auto manage_every = std::chrono::microseconds(std::max<std::int64_t>(1, cfg.health.heartbeat_interval_us / 5));
    auto next_announce = Clock::now();
    auto next_beat = Clock::now();
    auto next_manage = Clock::now() + manage_every;
    while (running) {
      const auto now = Clock::now();
      if (now >= next_announce) {
        announce();
        next_announce = now + announce_every;
      }
      if (now >= next_beat) {
        heartbeats();
        next_beat = now + beat_every;
      }
      if (roles.mgmt && now >= next_manage) {
        manage();
        next_manage = now + manage_every;
      }
      const auto next = std::min({next_announce, next_beat, roles.mgmt ? next_manage : next_beat});
      if (!pause(std::chrono::duration_cast<Millis>(next - Clock::now()) + Millis(1))) return;
    }
  }
};

Server::Server(config::Config config, Roles roles) : impl_(std::make_unique<Impl>(std::move(config), roles)) {}
Server::~Server() { stop(); }

void Server::start() {
  try {
    impl_->start();
  } catch (...) {
    impl_->stop();
    throw;
  }
}

void Server::stop() { impl_->stop(); }
Environment& Server::environment() { return impl_->env; }
std::uint16_t Server::ingest_port() const { return impl_->ingest_sock ? impl_->ingest_sock->local_port() : 0; }
std::uint16_t Server::query_port() const { return impl_->query_listener ? impl_->query_listener->local_port() : 0; }
ingest::IngestCounters Server::ingest_counters() const { return impl_->entry.counters(); }
std::string Server::env_module() const { return impl_->module(); }

}  // namespace rail::net
