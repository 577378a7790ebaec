#pragma once

// Consumer-side queries. A query is a structured JSON request; executing it
// reads one consistent snapshot of the graph and objects stores (plus the
// blob store for get_blob) and aggregates the answers into one result.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"
#include "rail/error.hpp"

namespace rail::query {

struct GetObject {
  ObjectId object;
};
struct FindObjects {
  store::AttributePredicate where;
};
struct GetTransform {
  FrameId src;
  FrameId dst;
  graph::PathConstraints constraints;
};
struct RangeQuery {
  FrameId frame;
  geo::Vec3 center;
  double radius = 0.0;
  store::AttributePredicate where;
};
struct GetBlob {
  std::string hash;
};

using Params = std::variant<GetObject, FindObjects, GetTransform, RangeQuery, GetBlob>;

struct Query {
  nlohmann::json id;  // echoed back; any JSON scalar
  Params params;
  bool follow = false;
};

std::string_view op_name(const Params& p);

/// Parses a request frame. Throws MalformedQuery.
Query parse_query(const nlohmann::json& request);
nlohmann::json to_json(const Query& q);

struct RangeHit {
  ObjectId id;
  geo::Pose6D pose;  // object frame expressed in the query frame
  double distance = 0.0;

  friend bool operator==(const RangeHit&, const RangeHit&) = default;
};

struct RangeResult {
  std::vector<RangeHit> hits;  // sorted by (distance, id)
  std::size_t excluded_unreachable = 0;
};

void to_json(nlohmann::json& j, const RangeHit& h);
void to_json(nlohmann::json& j, const RangeResult& r);

/// Objects matching `where` whose geometry (a point when absent) intersects
/// the ball around `center` in `frame`. Throws UnknownFrame.
RangeResult range_query(const graph::GraphState& g, const store::ObjectState& o, const RangeQuery& q,
                        std::int64_t now_us, graph::PathPriority priority = graph::PathPriority::sigma_first);

struct QueryResult {
  nlohmann::json result;
  Cursors as_of;
};

/// Evaluates `params` against one snapshot pair. Throws the per-op errors
/// (NoPath, NotFound, UnknownFrame, ...).
nlohmann::json evaluate(const graph::GraphState& g, const store::ObjectState& o,
                        const store::BlobStore& blobs, const Params& params, std::int64_t now_us,
                        graph::PathPriority priority = graph::PathPriority::sigma_first);

QueryResult execute_query(const Environment& env, const Query& q);

/// {"id":..,"ok":true,"result":..,"as_of":{..}}
nlohmann::json response_frame(const nlohmann::json& id, const QueryResult& r);
/// {"id":..,"ok":false,"error":"NoPath","reason":..}
nlohmann::json error_frame(const nlohmann::json& id, const Error& e);

/// Runs a request end to end and always returns a response frame.
nlohmann::json handle_request(const Environment& env, const nlohmann::json& request);

}  // namespace rail::query
