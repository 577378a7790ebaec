#include "rail/ingest.hpp"

#include <algorithm>
#include <limits>

#include <nlohmann/json.hpp>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::ingest {

using nlohmann::json;

namespace {

// Cache keys use the attribute path form of the kind so that "QR" and
// "marker.QR" share entries.
ExternalRef normalized(const ExternalRef& ref) {
  auto path = id_path_for_kind(ref.kind);
  path.resize(path.size() - 3);  // strip ".id"
  return {std::move(path), ref.ext_id};
}

std::vector<ExternalRef> marker_keys(const json& attributes) {
  std::vector<ExternalRef> out;
  auto markers = attributes.find("marker");
  if (markers == attributes.end() || !markers->is_object()) return out;
  for (const auto& [tail, node] : markers->items()) {
    if (!node.is_object()) continue;
    auto id = node.find("id");
    if (id != node.end() && id->is_string()) out.push_back({"marker." + tail, id->get<std::string>()});
  }
  return out;
}

}  // namespace

ApplyReport& ApplyReport::operator+=(const ApplyReport& o) {
  edges_applied += o.edges_applied;
  edges_superseded += o.edges_superseded;
  objects_touched += o.objects_touched;
  items_dropped += o.items_dropped;
  return *this;
}

void to_json(json& j, const ApplyReport& r) {
  j = json{{"edges_applied", r.edges_applied},
           {"edges_superseded", r.edges_superseded},
           {"objects_touched", r.objects_touched},
           {"items_dropped", r.items_dropped}};
}

void to_json(json& j, const IngestCounters& c) {
  j = json{{"datagrams", c.datagrams},
           {"applied", c.applied},
           {"malformed", c.malformed},
           {"unsupported_version", c.unsupported_version},
           {"invalid_transform", c.invalid_transform},
           {"no_workers", c.no_workers},
           {"handler_faults", c.handler_faults},
           {"reassignments", c.reassignments}};
}

// ---------------------------------------------------------------------------

const IdCache::Entry* IdCache::find(const ExternalRef& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void IdCache::put(const ExternalRef& key, Entry entry) {
  drop(key);
  by_object_[entry.id].insert(key);
  entries_.insert_or_assign(key, std::move(entry));
}

void IdCache::drop(const ExternalRef& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return;
  auto obj = by_object_.find(it->second.id);
  if (obj != by_object_.end()) {
    obj->second.erase(key);
    if (obj->second.empty()) by_object_.erase(obj);
  }
  entries_.erase(it);
}

std::size_t IdCache::invalidate(const ChangeEvent& event) {
  if (event.store != StoreKind::objects) return 0;
  std::vector<ExternalRef> doomed;
  ObjectId id;
  if (event.kind == ChangeKind::object_upsert) {
    const auto& doc = event.payload.at("doc");
    id = doc.at("id").get<ObjectId>();
    doomed = marker_keys(doc.at("attributes"));
  } else if (event.kind == ChangeKind::object_delete) {
    id = event.payload.at("id").get<ObjectId>();
  } else {
    return 0;
  }
  if (auto it = by_object_.find(id); it != by_object_.end()) {
    doomed.insert(doomed.end(), it->second.begin(), it->second.end());
  }
  std::size_t dropped = 0;
  for (const auto& key : doomed) {
    const Entry* e = find(key);
    // Entries loaded from a snapshot that already includes this event stay.
    if (e == nullptr || e->loaded_at_seq >= event.seq) continue;
    drop(key);
    ++dropped;
  }
  invalidations_ += dropped;
  return dropped;
}

void IdCache::clear() {
  invalidations_ += entries_.size();
  entries_.clear();
  by_object_.clear();
}

ObjectId provisional_id(const ExternalRef& ref) {
  const auto key = normalized(ref);
  std::string tail = key.kind.substr(std::string_view("marker.").size());
  std::string candidate = "prov:" + tail + ":" + ref.ext_id;
  if (EntityId::is_valid(candidate)) return ObjectId(std::move(candidate));
  return ObjectId("prov:" + sha256_hex(key.kind + "\n" + key.ext_id).substr(0, 40));
}

// ---------------------------------------------------------------------------

ProviderHandler::ProviderHandler(std::string provider_id, Environment& env, HandlerOptions options)
    : provider_id_(std::move(provider_id)), env_(env), options_(options) {
  feed_cursor_ = env_.objects().log().head();
}

void ProviderHandler::drain_feed() {
  std::vector<ChangeEvent> events;
  try {
    events = env_.objects().log().read_committed(feed_cursor_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::CursorTooOld) throw;
    cache_.clear();
    own_writes_.clear();
    feed_cursor_ = env_.objects().log().head();
    return;
  }
  for (const auto& e : events) {
    feed_cursor_ = e.seq;
    if (e.kind == ChangeKind::object_upsert) {
      const auto& doc = e.payload.at("doc");
      auto own = own_writes_.find({doc.at("id").get<ObjectId>(), doc.at("rev").get<std::uint64_t>()});
      if (own != own_writes_.end()) {
        own_writes_.erase(own);
        continue;
      }
    }
    cache_.invalidate(e);
  }
}

ObjectId ProviderHandler::resolve_external_id(const ExternalRef& ref) {
  std::lock_guard lock(mutex_);
  return resolve_locked(ref);
}

ObjectId ProviderHandler::resolve_locked(const ExternalRef& ref) {
  drain_feed();
  const auto key = normalized(ref);
  if (const auto* hit = cache_.find(key)) return hit->id;

  ++store_queries_;
  const auto path = key.kind + ".id";
  auto [hits, at] = env_.objects().read([&](const store::ObjectState& s, std::uint64_t head) {
    return std::pair{s.find_objects(store::AttributePredicate::eq(path, key.ext_id)), head};
  });
  if (hits.size() > 1) {
    throw Error(ErrorCode::AmbiguousExternalId,
                std::to_string(hits.size()) + " objects carry " + path + " = " + key.ext_id);
  }
  if (hits.size() == 1) {
    cache_.put(key, {hits.front().id, at});
    return hits.front().id;
  }
  if (options_.unknown_ids == UnknownIdPolicy::drop) {
    throw Error(ErrorCode::NotFound, "no object carries " + path + " = " + key.ext_id);
  }
  const ObjectId id = provisional_id(ref);
  store::ObjectUpdate update;
  update.mutations = {store::AttributeMutation::set(path, key.ext_id),
                      store::AttributeMutation::set(store::kProvisionalSourceAttr, provider_id_)};
  const auto rev = env_.upsert_object(id, update);
  own_writes_.insert({id, rev});
  cache_.put(key, {id, at});
  return id;
}

void ProviderHandler::ensure_sensor(const ProviderInfo& p, ApplyReport& report) {
  if (sensor_known_) return;
  const ObjectId id(p.id);
  if (!env_.objects().try_get(id)) {
    store::ObjectUpdate update;
    update.mutations = {store::AttributeMutation::set("sensor.type", p.type)};
    env_.upsert_object(id, update);
    ++report.objects_touched;
  }
  sensor_known_ = true;
}

ApplyReport ProviderHandler::apply(const ProviderMessage& m) {
  std::lock_guard lock(mutex_);
  ApplyReport report;
  try {
    ensure_sensor(m.provider, report);
  } catch (const std::exception&) {
    ++faults_;
  }
  const ObjectId sensor(m.provider.id);
  for (const auto& item : m.observations) {
    try {
      if (const auto* d = std::get_if<Detection>(&item)) {
        graph::TransformObservation obs{sensor,  resolve_locked(d->ref), m.provider.id, d->pose,
                                        d->sigma, d->resolution,         m.time_us,     m.seq};
        if (env_.upsert_edge(obs) == graph::EdgeUpdateResult::applied) {
          ++report.edges_applied;
        } else {
          ++report.edges_superseded;
        }
      } else {
        const auto& u = std::get<AttributeUpsert>(item);
        const ObjectId target = std::holds_alternative<ObjectId>(u.object)
                                    ? std::get<ObjectId>(u.object)
                                    : resolve_locked(std::get<ExternalRef>(u.object));
        store::ObjectUpdate update;
        update.mutations = u.mutations;
        update.geometry = u.geometry;
        env_.upsert_object(target, update);
        ++report.objects_touched;
      }
    } catch (const std::exception&) {
      ++report.items_dropped;
      ++faults_;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------

EntryPoint::EntryPoint(Environment& env, HandlerOptions options) : env_(env), options_(options) {}

void EntryPoint::add_worker(const std::string& worker) {
  std::lock_guard lock(mutex_);
  workers_.try_emplace(worker);
}

void EntryPoint::set_worker_alive(const std::string& worker, bool alive) {
  std::lock_guard lock(mutex_);
  auto it = workers_.find(worker);
  if (it == workers_.end()) throw Error(ErrorCode::UnknownModule, "unknown worker " + worker);
  it->second.alive = alive;
}

void EntryPoint::report_load(const std::string& worker, double cpu_hint) {
  std::lock_guard lock(mutex_);
  auto it = workers_.find(worker);
  if (it == workers_.end()) throw Error(ErrorCode::UnknownModule, "unknown worker " + worker);
  it->second.cpu_hint = cpu_hint;
}

std::shared_ptr<ProviderHandler> EntryPoint::assign_handler(const std::string& provider_id) {
  std::lock_guard lock(mutex_);
  return assign_locked(provider_id);
}

std::shared_ptr<ProviderHandler> EntryPoint::assign_locked(const std::string& provider_id) {
  auto existing = assignments_.find(provider_id);
  if (existing != assignments_.end()) {
    auto& a = existing->second;
    if (!a.dead && workers_.at(a.worker).alive) return a.handler;
    workers_.at(a.worker).providers.erase(provider_id);
  }

  const Worker* best = nullptr;
  const std::string* best_name = nullptr;
  for (const auto& [name, w] : workers_) {
    if (!w.alive) continue;
    if (best == nullptr ||
        std::pair(w.providers.size(), w.cpu_hint) < std::pair(best->providers.size(), best->cpu_hint)) {
      best = &w;
      best_name = &name;
    }
  }
  if (best == nullptr) {
    throw Error(ErrorCode::NoWorkersAvailable, "no live ingest worker for provider " + provider_id);
  }
  if (existing != assignments_.end()) ++counters_.reassignments;
  auto handler = std::make_shared<ProviderHandler>(provider_id, env_, options_);
  workers_.at(*best_name).providers.insert(provider_id);
  assignments_.insert_or_assign(provider_id, Assignment{*best_name, handler, false});
  return handler;
}

std::optional<std::string> EntryPoint::worker_of(const std::string& provider_id) const {
  std::lock_guard lock(mutex_);
  auto it = assignments_.find(provider_id);
  if (it == assignments_.end() || it->second.dead) return std::nullopt;
  return it->second.worker;
}

void EntryPoint::kill_handler(const std::string& provider_id) {
  std::lock_guard lock(mutex_);
  if (auto it = assignments_.find(provider_id); it != assignments_.end()) it->second.dead = true;
}

std::optional<ApplyReport> EntryPoint::handle_datagram(std::string_view bytes) {
  {
    std::lock_guard lock(mutex_);
    ++counters_.datagrams;
  }
  ProviderMessage m;
  try {
    m = decode_provider_message(bytes);
  } catch (const Error& e) {
    std::lock_guard lock(mutex_);
    switch (e.code()) {
      case ErrorCode::UnsupportedVersion: ++counters_.unsupported_version; break;
      case ErrorCode::InvalidTransform: ++counters_.invalid_transform; break;
      default: ++counters_.malformed; break;
    }
    return std::nullopt;
  }
  return handle(m);
}

std::optional<ApplyReport> EntryPoint::handle(const ProviderMessage& m) {
  std::shared_ptr<ProviderHandler> handler;
  {
    std::lock_guard lock(mutex_);
    try {
      handler = assign_locked(m.provider.id);
    } catch (const Error&) {
      ++counters_.no_workers;
      return std::nullopt;
    }
  }
  try {
    auto report = handler->apply(m);
    std::lock_guard lock(mutex_);
    ++counters_.applied;
    return report;
  } catch (const std::exception&) {
    std::lock_guard lock(mutex_);
    ++counters_.handler_faults;
    if (auto it = assignments_.find(m.provider.id); it != assignments_.end() && it->second.handler == handler) {
      it->second.dead = true;
    }
    return std::nullopt;
  }
}

IngestCounters EntryPoint::counters() const {
  std::lock_guard lock(mutex_);
  return counters_;
}

std::map<std::string, std::size_t> EntryPoint::providers_per_worker() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::size_t> out;
  for (const auto& [name, w] : workers_) out[name] = w.providers.size();
  return out;
}

std::vector<std::string> EntryPoint::providers_on(const std::string& worker) const {
  std::lock_guard lock(mutex_);
  auto it = workers_.find(worker);
  if (it == workers_.end()) return {};
  return {it->second.providers.begin(), it->second.providers.end()};
}

}  // namespace rail::ingest
