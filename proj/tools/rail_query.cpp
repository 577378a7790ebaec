// rail-query: one query against a running node, or a followed subscription.
// Frames are printed one JSON document per line.

#include <chrono>
#include <optional>
#include <string>

#include "cli_common.hpp"
#include "rail/control.hpp"
#include "rail/net.hpp"

namespace {

using nlohmann::json;

struct Options {
  std::string op;
  std::optional<std::string> server;
  std::uint16_t discovery_port = 47474;
  int discover_ms = 2500;
  int timeout_ms = 5000;
  bool follow = false;
  std::size_t max_frames = 0;

  std::string object;
  std::string where = "[]";
  std::string src;
  std::string dst;
  std::string constraints;
  std::string frame;
  std::string center = "0,0,0";
  double radius = 1.0;
  std::string filter;
  std::string hash;
};

json build_request(const Options& o) {
  json req{{"id", 1}, {"op", o.op}};
  auto need = [](const std::string& v, const char* flag) {
    if (v.empty()) throw rail::cli::UsageError(std::string(flag) + " is required for this op");
    return v;
  };
  if (o.op == "get_object") {
    req["object"] = need(o.object, "--object");
  } else if (o.op == "find_objects") {
    req["where"] = rail::cli::parse_json_arg("--where", o.where);
  } else if (o.op == "get_transform") {
    req["src"] = need(o.src, "--src");
    req["dst"] = need(o.dst, "--dst");
    if (!o.constraints.empty()) req["constraints"] = rail::cli::parse_json_arg("--constraints", o.constraints);
  } else if (o.op == "range_query") {
    req["frame"] = need(o.frame, "--frame");
    const auto c = rail::cli::parse_numbers("--center", o.center);
    if (c.size() != 3) throw rail::cli::UsageError("--center takes 3 numbers");
    req["center"] = c;
    req["radius"] = o.radius;
    if (!o.filter.empty()) req["where"] = rail::cli::parse_json_arg("--filter", o.filter);
  } else if (o.op == "get_blob") {
    req["hash"] = need(o.hash, "--hash");
  }
  if (o.follow) req["follow"] = true;
  return req;
}

rail::net::Endpoint resolve_server(const Options& o) {
  if (o.server) return rail::net::parse_endpoint(*o.server);
  const auto dir = rail::net::discover(o.discovery_port, std::chrono::milliseconds(o.discover_ms));
  const auto a = dir.peek(rail::control::Role::query);
  if (!a) {
    throw rail::Error(rail::ErrorCode::NoEndpointKnown,
                      "no query endpoint announced on port " + std::to_string(o.discovery_port));
  }
  spdlog::info("using {} (node {}, epoch {})", a->addr, a->node, a->epoch);
  return rail::net::parse_endpoint(a->addr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query a RAIL node", "rail-query"};
  Options o;
  app.add_option("op", o.op, "Query operation")
      ->required()
      ->check(CLI::IsMember({"get_object", "find_objects", "get_transform", "range_query", "get_blob"}));
  app.add_option("--server", o.server, "Query endpoint host:port (default: discover)");
  app.add_option("--discovery-port", o.discovery_port, "Port to hear announcements on")->capture_default_str();
  app.add_option("--discover-ms", o.discover_ms, "How long to listen for announcements")->capture_default_str();
  app.add_option("--timeout-ms", o.timeout_ms, "Response timeout")->capture_default_str();
  app.add_flag("--follow", o.follow, "Subscribe and print deltas until interrupted");
  app.add_option("--max-frames", o.max_frames, "With --follow, stop after this many frames (0: never)");
  app.add_option("--object", o.object, "get_object: object id");
  app.add_option("--where", o.where, "find_objects: JSON attribute predicate")->capture_default_str();
  app.add_option("--src", o.src, "get_transform: source frame");
  app.add_option("--dst", o.dst, "get_transform: target frame");
  app.add_option("--constraints", o.constraints, "get_transform: JSON path constraints");
  app.add_option("--frame", o.frame, "range_query: reference frame");
  app.add_option("--center", o.center, "range_query: x,y,z in the reference frame")->capture_default_str();
  app.add_option("--radius", o.radius, "range_query: radius")->capture_default_str();
  app.add_option("--filter", o.filter, "range_query: JSON attribute predicate");
  app.add_option("--hash", o.hash, "get_blob: content hash");
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  return rail::cli::run(app, argc, argv, [&] {
    rail::cli::set_log_level(log_level);
    const auto req = build_request(o);
    const auto server = resolve_server(o);
    if (!o.follow) {
      const auto resp = rail::net::request(server, req, std::chrono::milliseconds(o.timeout_ms));
      std::cout << resp.dump() << "\n";
      return resp.value("ok", false) ? rail::cli::kOk : rail::cli::kFailed;
    }
    std::size_t seen = 0;
    bool failed = false;
    rail::net::follow(server, req, [&](const json& frame) {
      std::cout << frame.dump() << std::endl;
      failed = frame.value("ok", true) == false;
      return !failed && (o.max_frames == 0 || ++seen < o.max_frames);
    });
    return failed ? rail::cli::kFailed : rail::cli::kOk;
  });
}
