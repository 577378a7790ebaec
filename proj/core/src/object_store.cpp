#include "rail/object_store.hpp"

#include <charconv>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::store {

using nlohmann::json;

void to_json(json& j, const BlobRef& b) {
  j = json{{"hash", b.hash}, {"size", b.size}, {"media_type", b.media_type}};
}

void from_json(const json& j, BlobRef& b) {
  b.hash = j.at("hash").get<std::string>();
  b.size = j.at("size").get<std::uint64_t>();
  b.media_type = j.at("media_type").get<std::string>();
}

bool ObjectDocument::provisional() const {
  return lookup(attributes, kProvisionalSourceAttr) != nullptr;
}

void to_json(json& j, const ObjectDocument& d) {
  j = json{{"id", d.id},
           {"attributes", d.attributes},
           {"geometry", d.geometry ? json(*d.geometry) : json(nullptr)},
           {"blobs", d.blobs},
           {"rev", d.rev},
           {"provisional", d.provisional()}};
}

void from_json(const json& j, ObjectDocument& d) {
  d.id = j.at("id").get<ObjectId>();
  d.attributes = j.value("attributes", json::object());
  if (!d.attributes.is_object()) throw Error(ErrorCode::InvalidArgument, "attributes must be a map");
  d.geometry.reset();
  if (j.contains("geometry") && !j.at("geometry").is_null()) {
    d.geometry = j.at("geometry").get<geo::GeometryPrimitive>();
  }
  d.blobs = j.value("blobs", std::map<std::string, BlobRef>{});
  d.rev = j.value("rev", std::uint64_t{0});
}

void to_json(json& j, const ObjectUpdate& u) {
  j = json{{"mutations", u.mutations}};
  if (u.geometry) j["geometry"] = *u.geometry;
  if (u.clear_geometry) j["clear_geometry"] = true;
  if (!u.attach_blobs.empty()) j["attach_blobs"] = u.attach_blobs;
  if (!u.detach_blobs.empty()) j["detach_blobs"] = u.detach_blobs;
}

void from_json(const json& j, ObjectUpdate& u) {
  u = {};
  if (j.contains("mutations")) u.mutations = j.at("mutations").get<std::vector<AttributeMutation>>();
  if (j.contains("geometry") && !j.at("geometry").is_null()) {
    u.geometry = j.at("geometry").get<geo::GeometryPrimitive>();
  }
  u.clear_geometry = j.value("clear_geometry", false);
  if (j.contains("attach_blobs")) {
    u.attach_blobs = j.at("attach_blobs").get<std::map<std::string, BlobRef>>();
  }
  if (j.contains("detach_blobs")) {
    u.detach_blobs = j.at("detach_blobs").get<std::vector<std::string>>();
  }
}

std::optional<std::string> index_key(const json& value) {
  switch (value.type()) {
    case json::value_t::string: return "s:" + value.get<std::string>();
    case json::value_t::boolean: return value.get<bool>() ? "b:1" : "b:0";
    case json::value_t::null: return "z";
    case json::value_t::number_integer:
    case json::value_t::number_unsigned:
    case json::value_t::number_float: {
      char buf[64];
      const double d = value.get<double>();
      auto res = std::to_chars(buf, buf + sizeof buf, d == 0.0 ? 0.0 : d);
      return "n:" + std::string(buf, res.ptr);
    }
    default: return std::nullopt;
  }
}

namespace {

// Concrete paths in `attrs` matching `pattern` ("*" = any one segment),
// together with the value found there.
void expand_pattern(const json& node, const std::vector<std::string>& pattern, std::size_t depth,
                    std::string prefix, std::vector<std::pair<std::string, const json*>>& out) {
  if (depth == pattern.size()) {
    out.emplace_back(std::move(prefix), &node);
    return;
  }
  if (!node.is_object()) return;
  const auto& seg = pattern[depth];
  auto descend = [&](const std::string& key, const json& child) {
    expand_pattern(child, pattern, depth + 1, prefix.empty() ? key : prefix + "." + key, out);
  };
  if (seg == "*") {
    for (auto it = node.begin(); it != node.end(); ++it) descend(it.key(), it.value());
  } else if (auto it = node.find(seg); it != node.end()) {
    descend(seg, *it);
  }
}

bool path_matches_pattern(const std::vector<std::string>& path,
                          const std::vector<std::string>& pattern) {
  if (path.size() != pattern.size()) return false;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (pattern[i] != "*" && pattern[i] != path[i]) return false;
  }
  return true;
}

}  // namespace

const ObjectDocument* ObjectState::find(const ObjectId& id) const {
  auto it = docs_.find(id);
  return it == docs_.end() ? nullptr : &it->second;
}

std::vector<ObjectDocument> ObjectState::scan(const AttributePredicate& p) const {
  std::vector<ObjectDocument> out;
  for (const auto& [_, doc] : docs_) {
    if (p.matches(doc.attributes)) out.push_back(doc);
  }
  return out;
}

std::vector<ObjectDocument> ObjectState::find_objects(const AttributePredicate& p) const {
  for (const auto& clause : p.clauses()) {
    if (clause.op != ClauseOp::eq) continue;
    const auto key = index_key(clause.value);
    if (!key) continue;
    const auto segs = split_path(clause.path);
    const bool indexed = std::any_of(index_patterns_.begin(), index_patterns_.end(),
                                     [&](const auto& pat) { return path_matches_pattern(segs, pat); });
    if (!indexed) continue;
    std::vector<ObjectDocument> out;
    auto pit = index_.find(clause.path);
    if (pit == index_.end()) return out;
    auto vit = pit->second.find(*key);
    if (vit == pit->second.end()) return out;
    for (const auto& id : vit->second) {
      const auto& doc = docs_.at(id);
      if (p.matches(doc.attributes)) out.push_back(doc);
    }
    return out;
  }
  return scan(p);
}

json ObjectState::to_json() const {
  json out = json::array();
  for (const auto& [_, doc] : docs_) out.push_back(doc);
  return out;
}

ObjectStore::ObjectStore(std::shared_ptr<CommitNotifier> notifier)
    : ObjectStore(Options{}, std::move(notifier)) {}

ObjectStore::ObjectStore(Options options, std::shared_ptr<CommitNotifier> notifier)
    : options_(std::move(options)),
      log_(StoreKind::objects, std::move(notifier), options_.feed_retention) {
  for (const auto& p : options_.index_paths) state_.index_patterns_.push_back(split_path(p));
}

void ObjectStore::index_remove(const ObjectDocument& doc) {
  for (const auto& pattern : state_.index_patterns_) {
    std::vector<std::pair<std::string, const json*>> hits;
    expand_pattern(doc.attributes, pattern, 0, {}, hits);
    for (const auto& [path, value] : hits) {
      const auto key = index_key(*value);
      if (!key) continue;
      auto pit = state_.index_.find(path);
      if (pit == state_.index_.end()) continue;
      auto vit = pit->second.find(*key);
      if (vit == pit->second.end()) continue;
      vit->second.erase(doc.id);
      if (vit->second.empty()) pit->second.erase(vit);
      if (pit->second.empty()) state_.index_.erase(pit);
    }
  }
}

void ObjectStore::index_add(const ObjectDocument& doc) {
  for (const auto& pattern : state_.index_patterns_) {
    std::vector<std::pair<std::string, const json*>> hits;
    expand_pattern(doc.attributes, pattern, 0, {}, hits);
    for (const auto& [path, value] : hits) {
      if (const auto key = index_key(*value)) state_.index_[path][*key].insert(doc.id);
    }
  }
}

void ObjectStore::put_locked(ObjectDocument doc) {
  if (auto it = state_.docs_.find(doc.id); it != state_.docs_.end()) index_remove(it->second);
  index_add(doc);
  tombstones_.erase(doc.id);
  state_.docs_.insert_or_assign(doc.id, std::move(doc));
}

std::uint64_t ObjectStore::upsert_object(const ObjectId& id, const ObjectUpdate& update) {
  if (id.empty()) throw Error(ErrorCode::InvalidArgument, "object id must be set");
  std::unique_lock lock(mutex_);
  ObjectDocument doc;
  if (auto it = state_.docs_.find(id); it != state_.docs_.end()) {
    doc = it->second;
  } else {
    doc.id = id;
    if (auto t = tombstones_.find(id); t != tombstones_.end()) doc.rev = t->second;
  }
  for (const auto& m : update.mutations) apply_mutation(doc.attributes, m);
  if (update.clear_geometry) doc.geometry.reset();
  if (update.geometry) doc.geometry = update.geometry;
  for (const auto& role : update.detach_blobs) doc.blobs.erase(role);
  for (const auto& [role, ref] : update.attach_blobs) doc.blobs.insert_or_assign(role, ref);
  ++doc.rev;
  const std::uint64_t rev = doc.rev;
  json payload{{"doc", doc}};
  put_locked(std::move(doc));
  log_.append(ChangeKind::object_upsert, std::move(payload));
  return rev;
}

std::uint64_t ObjectStore::upsert_object(const ObjectId& id, std::vector<AttributeMutation> mutations,
                                         std::optional<geo::GeometryPrimitive> geometry) {
  ObjectUpdate u;
  u.mutations = std::move(mutations);
  u.geometry = std::move(geometry);
  return upsert_object(id, u);
}

ObjectDocument ObjectStore::get_object(const ObjectId& id) const {
  auto doc = try_get(id);
  if (!doc) throw Error(ErrorCode::NotFound, "object not found: " + id.str());
  return std::move(*doc);
}

std::optional<ObjectDocument> ObjectStore::try_get(const ObjectId& id) const {
  std::shared_lock lock(mutex_);
  if (const auto* d = state_.find(id)) return *d;
  return std::nullopt;
}

std::vector<ObjectDocument> ObjectStore::find_objects(const AttributePredicate& p) const {
  std::shared_lock lock(mutex_);
  return state_.find_objects(p);
}

std::uint64_t ObjectStore::delete_object(const ObjectId& id) {
  std::unique_lock lock(mutex_);
  auto it = state_.docs_.find(id);
  if (it == state_.docs_.end()) throw Error(ErrorCode::NotFound, "object not found: " + id.str());
  const std::uint64_t rev = it->second.rev;
  json payload{{"id", id}, {"rev", rev}, {"pre", it->second}};
  index_remove(it->second);
  state_.docs_.erase(it);
  tombstones_[id] = rev;
  log_.append(ChangeKind::object_delete, std::move(payload));
  return rev;
}

bool ObjectStore::restore(const ObjectDocument& incoming) {
  std::unique_lock lock(mutex_);
  ObjectDocument doc = incoming;
  if (auto it = state_.docs_.find(doc.id); it != state_.docs_.end()) {
    const auto& cur = it->second;
    if (cur.attributes == doc.attributes && cur.geometry == doc.geometry && cur.blobs == doc.blobs) {
      return false;
    }
    doc.rev = std::max(doc.rev, cur.rev + 1);
  } else if (auto t = tombstones_.find(doc.id); t != tombstones_.end()) {
    doc.rev = std::max(doc.rev, t->second + 1);
  }
  doc.rev = std::max<std::uint64_t>(doc.rev, 1);
  json payload{{"doc", doc}};
  put_locked(std::move(doc));
  log_.append(ChangeKind::object_upsert, std::move(payload));
  return true;
}

std::size_t ObjectStore::size() const {
  std::shared_lock lock(mutex_);
  return state_.docs_.size();
}

void ObjectStore::apply_replicated(const ChangeEvent& event) {
  if (event.store != StoreKind::objects) {
    throw Error(ErrorCode::InvalidArgument, "graph event applied to object store");
  }
  std::unique_lock lock(mutex_);
  if (event.kind == ChangeKind::object_upsert) {
    put_locked(event.payload.at("doc").get<ObjectDocument>());
  } else if (event.kind == ChangeKind::object_delete) {
    const auto id = event.payload.at("id").get<ObjectId>();
    if (auto it = state_.docs_.find(id); it != state_.docs_.end()) {
      index_remove(it->second);
      state_.docs_.erase(it);
    }
    tombstones_[id] = event.payload.at("rev").get<std::uint64_t>();
  } else {
    throw Error(ErrorCode::InvalidArgument, "unexpected event kind for object store");
  }
  log_.append_replicated(event);
}

json ObjectStore::to_json() const {
  std::shared_lock lock(mutex_);
  return state_.to_json();
}

std::string ObjectStore::digest() const { return sha256_hex(to_json().dump()); }

ObjectChangeStream::ObjectChangeStream(ChangeLog& log, std::uint64_t cursor,
                                       AttributePredicate filter)
    : stream_(log, cursor), filter_(std::move(filter)) {}

bool ObjectChangeStream::passes(const ChangeEvent& e) const {
  if (filter_.empty()) return true;
  if (e.kind == ChangeKind::object_delete) {
    return filter_.matches(e.payload.at("pre").at("attributes"));
  }
  return filter_.matches(e.payload.at("doc").at("attributes"));
}

std::vector<ChangeEvent> ObjectChangeStream::poll() {
  std::vector<ChangeEvent> out;
  for (auto& e : stream_.poll()) {
    if (passes(e)) out.push_back(std::move(e));
  }
  return out;
}

std::optional<ChangeEvent> ObjectChangeStream::next(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    auto e = stream_.next(std::max(left, std::chrono::milliseconds(0)));
    if (!e) return std::nullopt;
    if (passes(*e)) return e;
  }
}

}  // namespace rail::store
