#include "rail/subscription.hpp"

#include <algorithm>
#include <map>

#include "rail/error.hpp"

namespace rail::query {

using nlohmann::json;

namespace {

bool covers(const Cursors& visible, const Cursors& at) {
  return at.graph <= visible.graph && at.objects <= visible.objects;
}

bool reads_graph(const Params& p) {
  return std::holds_alternative<GetTransform>(p) || std::holds_alternative<RangeQuery>(p);
}

bool reads_objects(const Params& p) { return !std::holds_alternative<GetTransform>(p); }

bool keyed(const Params& p) {
  return std::holds_alternative<FindObjects>(p) || std::holds_alternative<RangeQuery>(p);
}

json& items_of(const Params& p, json& result) {
  return std::holds_alternative<RangeQuery>(p) ? result["hits"] : result;
}

std::map<std::string, json> keyed_items(const Params& p, const json& result) {
  std::map<std::string, json> out;
  const json& items = std::holds_alternative<RangeQuery>(p) ? result.at("hits") : result;
  for (const auto& item : items) out.emplace(item.at("id").get<std::string>(), item);
  return out;
}

void sort_items(const Params& p, json& result) {
  auto& items = items_of(p, result);
  std::vector<json> v(items.begin(), items.end());
  if (std::holds_alternative<RangeQuery>(p)) {
    std::sort(v.begin(), v.end(), [](const json& a, const json& b) {
      const double da = a.at("distance").get<double>(), db = b.at("distance").get<double>();
      if (da != db) return da < db;
      return a.at("id").get<std::string>() < b.at("id").get<std::string>();
    });
  } else {
    std::sort(v.begin(), v.end(), [](const json& a, const json& b) {
      return a.at("id").get<std::string>() < b.at("id").get<std::string>();
    });
  }
  items = json(std::move(v));
}

struct Delta {
  const char* kind;
  json payload;
};

std::vector<Delta> diff(const Params& p, const std::optional<json>& old, const std::optional<json>& now,
                        const json& error) {
  std::vector<Delta> out;
  if (!old && !now) return out;
  if (!now) return {{"left", error}};
  if (!old) return {{"entered", json{{"result", *now}}}};
  if (*old == *now) return out;
  if (!keyed(p)) return {{"changed", json{{"result", *now}}}};

  const auto before = keyed_items(p, *old);
  const auto after = keyed_items(p, *now);
  for (const auto& [id, item] : before) {
    if (!after.contains(id)) out.push_back({"left", json{{"id", id}}});
  }
  for (const auto& [id, item] : after) {
    auto it = before.find(id);
    if (it == before.end()) {
      out.push_back({"entered", json{{"id", id}, {"item", item}}});
    } else if (it->second != item) {
      out.push_back({"changed", json{{"id", id}, {"item", item}}});
    }
  }
  if (std::holds_alternative<RangeQuery>(p) &&
      old->at("excluded_unreachable") != now->at("excluded_unreachable")) {
    out.push_back({"changed", json{{"excluded_unreachable", now->at("excluded_unreachable")}}});
  }
  return out;
}

}  // namespace

Subscription::Subscription(Environment& env, Query q, std::size_t capacity)
    : env_(env), query_(std::move(q)), capacity_(capacity) {
  if (std::holds_alternative<GetBlob>(query_.params)) {
    throw Error(ErrorCode::MalformedQuery, "get_blob cannot be followed");
  }
  query_.follow = true;
  std::lock_guard lock(mutex_);
  pending_ = evaluate();
  if (covers(env_.visible_heads(), pending_->at)) {
    deliver_locked(std::move(*pending_));
    pending_.reset();
  }
}

Subscription::Evaluation Subscription::evaluate() const {
  const auto now = env_.now_us();
  const auto priority = env_.graph().priority();
  return env_.read_snapshot([&](const graph::GraphState& g, const store::ObjectState& o, Cursors at) {
    Evaluation ev;
    ev.at = at;
    try {
      ev.result = query::evaluate(g, o, env_.blobs(), query_.params, now, priority);
    } catch (const Error& e) {
      ev.error = json{{"error", error_name(e.code())},
                      {"reason", e.reason().empty() ? std::string(e.what()) : e.reason()}};
    }
    return ev;
  });
}

bool Subscription::relevant(const Cursors& from, const Cursors& to) const {
  if (reads_graph(query_.params) && to.graph > from.graph) return true;
  if (!reads_objects(query_.params) || to.objects <= from.objects) return false;
  const auto* get = std::get_if<GetObject>(&query_.params);
  if (get == nullptr) return true;
  std::vector<ChangeEvent> events;
  try {
    events = env_.objects().log().read_visible(from.objects, to.objects);
  } catch (const Error&) {
    return true;
  }
  for (const auto& e : events) {
    const json& id = e.kind == ChangeKind::object_upsert ? e.payload.at("doc").at("id") : e.payload.at("id");
    if (id == get->object.str()) return true;
  }
  return false;
}

void Subscription::queue_locked(std::vector<json> frames) {
  if (overflowed_ || closed_) return;
  if (outbox_.size() + frames.size() > capacity_) {
    outbox_.clear();
    outbox_.push_back(json{{"sub", query_.id},
                           {"ok", false},
                           {"error", error_name(ErrorCode::SubscriptionOverflow)},
                           {"reason", "consumer fell more than " + std::to_string(capacity_) +
                                          " frames behind; re-subscribe"}});
    overflowed_ = true;
    closed_ = true;
    return;
  }
  for (auto& f : frames) outbox_.push_back(std::move(f));
}

void Subscription::deliver_locked(Evaluation ev) {
  std::vector<json> frames;
  if (!started_) {
    json frame = ev.result ? response_frame(query_.id, {*ev.result, ev.at})
                           : json{{"id", query_.id}, {"ok", false}, {"as_of", ev.at}};
    if (!ev.result) frame.update(ev.error);
    frames.push_back(std::move(frame));
    started_ = true;
  } else {
    json seq = json::object();
    if (ev.at.graph > delivered_.graph) seq["graph"] = ev.at.graph;
    if (ev.at.objects > delivered_.objects) seq["objects"] = ev.at.objects;
    for (auto& d : diff(query_.params, current_, ev.result, ev.error)) {
      frames.push_back(json{{"sub", query_.id}, {"seq", seq}, {"delta", d.kind}, {"payload", std::move(d.payload)}});
    }
  }
  current_ = std::move(ev.result);
  delivered_ = ev.at;
  queue_locked(std::move(frames));
}

std::size_t Subscription::pump() {
  std::lock_guard lock(mutex_);
  if (closed_) return 0;
  const std::size_t before = outbox_.size();
  const Cursors visible = env_.visible_heads();
  if (pending_) {
    if (!covers(visible, pending_->at)) return 0;
    deliver_locked(std::move(*pending_));
    pending_.reset();
  }
  if (closed_ || !covers(visible, delivered_) || visible == delivered_) {
    return outbox_.size() > before ? outbox_.size() - before : 0;
  }
  if (!relevant(delivered_, visible)) {
    delivered_ = visible;
    return outbox_.size() - before;
  }
  auto ev = evaluate();
  if (covers(visible, ev.at) || covers(env_.visible_heads(), ev.at)) {
    deliver_locked(std::move(ev));
  } else {
    pending_ = std::move(ev);
  }
  return outbox_.size() > before ? outbox_.size() - before : 0;
}

std::vector<json> Subscription::take(std::size_t max) {
  std::lock_guard lock(mutex_);
  std::vector<json> out;
  while (!outbox_.empty() && out.size() < max) {
    out.push_back(std::move(outbox_.front()));
    outbox_.pop_front();
  }
  return out;
}

std::size_t Subscription::pending() const {
  std::lock_guard lock(mutex_);
  return outbox_.size();
}

Cursors Subscription::delivered() const {
  std::lock_guard lock(mutex_);
  return delivered_;
}

bool Subscription::overflowed() const {
  std::lock_guard lock(mutex_);
  return overflowed_;
}

bool Subscription::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

void Subscription::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
}

std::optional<json> apply_frame(const Params& params, std::optional<json> state, const json& frame) {
  if (frame.contains("ok")) {
    if (!frame.at("ok").get<bool>()) return std::nullopt;
    return std::optional<json>(std::in_place, frame.at("result"));
  }
  const auto& payload = frame.at("payload");
  if (payload.contains("result")) return std::optional<json>(std::in_place, payload.at("result"));
  if (payload.contains("error")) return std::nullopt;
  if (!state) throw Error(ErrorCode::InvalidArgument, "keyed delta applied to an empty result");
  if (payload.contains("excluded_unreachable")) {
    (*state)["excluded_unreachable"] = payload.at("excluded_unreachable");
    return state;
  }
  const auto id = payload.at("id").get<std::string>();
  auto& items = items_of(params, *state);
  json kept = json::array();
  for (auto& item : items) {
    if (item.at("id") != id) kept.push_back(std::move(item));
  }
  if (payload.contains("item")) kept.push_back(payload.at("item"));
  items = std::move(kept);
  sort_items(params, *state);
  return state;
}

}  // namespace rail::query
