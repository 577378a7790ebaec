#pragma once

// POSIX socket front ends: UDP for ingest datagrams and discovery, TCP with
// length-prefixed JSON frames for queries and replication, and the Server
// that runs one node's roles on top of an Environment.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/config.hpp"
#include "rail/control.hpp"
#include "rail/environment.hpp"
#include "rail/framing.hpp"
#include "rail/ingest.hpp"

namespace rail::net {

using Millis = std::chrono::milliseconds;

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

/// "host:port". Throws InvalidArgument.
Endpoint parse_endpoint(std::string_view addr);

/// Owned file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd();
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept;
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

class UdpSocket {
 public:
  struct Datagram {
    std::string bytes;
    Endpoint from;
  };

  /// Port 0 picks a free port. `shared` lets several processes listen on
  /// one port (discovery). Throws IoError.
  static UdpSocket bind(const Endpoint& at, bool shared = false);

  void set_broadcast(bool on);
  /// Throws IoError.
  void send_to(const Endpoint& to, std::string_view bytes) const;
  std::optional<Datagram> receive(Millis timeout) const;
  std::uint16_t local_port() const;

 private:
  explicit UdpSocket(Fd fd) : fd_(std::move(fd)) {}
  Fd fd_;
};

class TcpStream {
 public:
  /// Throws IoError.
  static TcpStream connect(const Endpoint& to, std::uint32_t max_frame = framing::kDefaultMaxFrame);

  /// Throws IoError when the peer is gone.
  void send_frame(const nlohmann::json& doc);
  /// Next frame, or nullopt on timeout. Throws IoError when the peer closed
  /// and MalformedMessage on an oversized or non-JSON frame.
  std::optional<nlohmann::json> receive_frame(Millis timeout);

 private:
  friend class TcpListener;
  TcpStream(Fd fd, std::uint32_t max_frame) : fd_(std::move(fd)), decoder_(max_frame) {}

  Fd fd_;
  framing::FrameDecoder decoder_;
};

class TcpListener {
 public:
  /// Throws IoError.
  static TcpListener bind(const Endpoint& at);
  std::optional<TcpStream> accept(Millis timeout, std::uint32_t max_frame = framing::kDefaultMaxFrame) const;
  std::uint16_t local_port() const;

 private:
  explicit TcpListener(Fd fd) : fd_(std::move(fd)) {}
  Fd fd_;
};

// --- client helpers ---------------------------------------------------------

void send_datagram(const Endpoint& to, std::string_view bytes);

/// One request, one response frame. Throws IoError on timeout or disconnect.
nlohmann::json request(const Endpoint& server, const nlohmann::json& req, Millis timeout);

/// Sends a follow request and passes every frame to `on_frame` until it
/// returns false. Throws IoError when the stream ends.
void follow(const Endpoint& server, const nlohmann::json& req,
            const std::function<bool(const nlohmann::json&)>& on_frame);

/// Directory built from the announcements heard on `port` during `window`.
control::EndpointDirectory discover(std::uint16_t port, Millis window);

// --- server -----------------------------------------------------------------

struct Roles {
  bool ingest = false;
  bool query = false;
  bool mgmt = false;
  bool slave = false;  // replicate from replication.peer until promoted

  friend bool operator==(const Roles&, const Roles&) = default;
};

/// Comma-separated subset of ingest,query,mgmt,slave. Throws InvalidArgument.
Roles parse_roles(std::string_view csv);

/// Runs the configured roles of one node on background threads.
class Server {
 public:
  Server(config::Config config, Roles roles);
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds every socket and starts the threads. Throws IoError.
  void start();
  /// Idempotent.
  void stop();

  Environment& environment();
  std::uint16_t ingest_port() const;
  std::uint16_t query_port() const;
  ingest::IngestCounters ingest_counters() const;
  /// "master@<node>" or "slave@<node>".
  std::string env_module() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace rail::net
