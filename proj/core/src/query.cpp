#include "rail/query.hpp"

#include <algorithm>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::query {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedQuery, "malformed query: " + what);
}

const json& need(const json& req, const char* name) {
  auto it = req.find(name);
  if (it == req.end()) malformed(std::string("missing \"") + name + "\"");
  return *it;
}

template <typename T>
T need_as(const json& req, const char* name) {
  return need(req, name).get<T>();
}

store::AttributePredicate where_of(const json& req) {
  auto it = req.find("where");
  if (it == req.end() || it->is_null()) return {};
  return it->get<store::AttributePredicate>();
}

Params parse_params(const json& req) {
  const auto op = need(req, "op");
  if (!op.is_string()) malformed("\"op\" must be a string");
  const auto name = op.get<std::string>();
  if (name == "get_object") return GetObject{need_as<ObjectId>(req, "object")};
  if (name == "find_objects") return FindObjects{where_of(req)};
  if (name == "get_transform") {
    GetTransform t{need_as<FrameId>(req, "src"), need_as<FrameId>(req, "dst"), {}};
    if (auto it = req.find("constraints"); it != req.end() && !it->is_null()) {
      t.constraints = it->get<graph::PathConstraints>();
    }
    t.constraints.validate();
    return t;
  }
  if (name == "range_query") {
    RangeQuery r{need_as<FrameId>(req, "frame"), need_as<geo::Vec3>(req, "center"), 0.0, where_of(req)};
    const auto& radius = need(req, "radius");
    if (!radius.is_number() || !(radius.get<double>() >= 0.0)) malformed("\"radius\" must be >= 0");
    r.radius = radius.get<double>();
    return r;
  }
  if (name == "get_blob") {
    const auto& h = need(req, "hash");
    if (!h.is_string()) malformed("\"hash\" must be a string");
    return GetBlob{h.get<std::string>()};
  }
  malformed("unknown op \"" + name + "\"");
}

}  // namespace

std::string_view op_name(const Params& p) {
  static constexpr std::string_view kNames[] = {"get_object", "find_objects", "get_transform",
                                                "range_query", "get_blob"};
  return kNames[p.index()];
}

Query parse_query(const json& request) {
  if (!request.is_object()) malformed("request must be an object");
  Query q;
  q.id = request.value("id", json());
  try {
    q.params = parse_params(request);
    if (auto it = request.find("follow"); it != request.end()) {
      if (!it->is_boolean()) malformed("\"follow\" must be a boolean");
      q.follow = it->get<bool>();
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedQuery) throw;
    malformed(e.what());
  } catch (const json::exception& e) {
    malformed(e.what());
  }
  if (q.follow && std::holds_alternative<GetBlob>(q.params)) malformed("get_blob cannot be followed");
  return q;
}

json to_json(const Query& q) {
  json j{{"id", q.id}, {"op", op_name(q.params)}, {"follow", q.follow}};
  std::visit(
      [&j](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GetObject>) {
          j["object"] = p.object;
        } else if constexpr (std::is_same_v<T, FindObjects>) {
          j["where"] = p.where;
        } else if constexpr (std::is_same_v<T, GetTransform>) {
          j["src"] = p.src;
          j["dst"] = p.dst;
          j["constraints"] = p.constraints;
        } else if constexpr (std::is_same_v<T, RangeQuery>) {
          j["frame"] = p.frame;
          j["center"] = p.center;
          j["radius"] = p.radius;
          j["where"] = p.where;
        } else {
          j["hash"] = p.hash;
        }
      },
      q.params);
  return j;
}

void to_json(json& j, const RangeHit& h) {
  j = json{{"id", h.id}, {"pose", h.pose}, {"distance", h.distance}};
}

void to_json(json& j, const RangeResult& r) {
  j = json{{"hits", r.hits}, {"excluded_unreachable", r.excluded_unreachable}};
}

RangeResult range_query(const graph::GraphState& g, const store::ObjectState& o, const RangeQuery& q,
                        std::int64_t now_us, graph::PathPriority priority) {
  if (!g.has_frame(q.frame)) {
    throw Error(ErrorCode::UnknownFrame, "frame " + q.frame.str() + " has no graph presence");
  }
  const auto paths = g.best_paths_from(q.frame, {}, now_us, priority);
  RangeResult out;
  for (const auto& doc : o.find_objects(q.where)) {
    auto it = paths.find(doc.id);
    if (it == paths.end()) {
      ++out.excluded_unreachable;
      continue;
    }
    const auto& pose = it->second.pose;
    const auto prim = doc.geometry.value_or(geo::GeometryPrimitive::point());
    if (geo::intersects_sphere(prim, pose, q.center, q.radius)) {
      out.hits.push_back({doc.id, pose, (pose.t - q.center).norm()});
    }
  }
  std::sort(out.hits.begin(), out.hits.end(), [](const RangeHit& a, const RangeHit& b) {
    return std::tie(a.distance, a.id) < std::tie(b.distance, b.id);
  });
  return out;
}

json evaluate(const graph::GraphState& g, const store::ObjectState& o, const store::BlobStore& blobs,
              const Params& params, std::int64_t now_us, graph::PathPriority priority) {
  return std::visit(
      [&](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, GetObject>) {
          const auto* doc = o.find(p.object);
          if (doc == nullptr) throw Error(ErrorCode::NotFound, "object not found: " + p.object.str());
          return *doc;
        } else if constexpr (std::is_same_v<T, FindObjects>) {
          return o.find_objects(p.where);
        } else if constexpr (std::is_same_v<T, GetTransform>) {
          return g.best_path(p.src, p.dst, p.constraints, now_us, priority);
        } else if constexpr (std::is_same_v<T, RangeQuery>) {
          return range_query(g, o, p, now_us, priority);
        } else {
          auto ref = blobs.describe(p.hash);
          if (!ref) throw Error(ErrorCode::NotFound, "blob not found: " + p.hash);
          return json{{"ref", *ref}, {"content_b64", base64_encode(blobs.get_blob(*ref))}};
        }
      },
      params);
}

QueryResult execute_query(const Environment& env, const Query& q) {
  const auto now = env.now_us();
  const auto priority = env.graph().priority();
  return env.read_snapshot([&](const graph::GraphState& g, const store::ObjectState& o, Cursors at) {
    return QueryResult{evaluate(g, o, env.blobs(), q.params, now, priority), at};
  });
}

json response_frame(const json& id, const QueryResult& r) {
  return json{{"id", id}, {"ok", true}, {"result", r.result}, {"as_of", r.as_of}};
}

json error_frame(const json& id, const Error& e) {
  return json{{"id", id},
              {"ok", false},
              {"error", error_name(e.code())},
              {"reason", e.reason().empty() ? std::string(e.what()) : e.reason()}};
}

json handle_request(const Environment& env, const json& request) {
  const json id = request.is_object() ? request.value("id", json()) : json();
  try {
    return response_frame(id, execute_query(env, parse_query(request)));
  } catch (const Error& e) {
    return error_frame(id, e);
  } catch (const std::exception& e) {
    return error_frame(id, Error(ErrorCode::MalformedQuery, e.what()));
  }
}

}  // namespace rail::query
