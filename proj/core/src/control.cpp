#include "rail/control.hpp"

#include <algorithm>
#include <charconv>

#include <nlohmann/json.hpp>

#include "rail/error.hpp"

namespace rail::control {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedAnnouncement, "malformed discovery datagram: " + what);
}

json parse_object(std::string_view bytes) {
  if (bytes.empty()) malformed("empty datagram");
  auto doc = json::parse(bytes, nullptr, false);
  if (doc.is_discarded()) malformed("not valid JSON");
  if (!doc.is_object()) malformed("top level must be an object");
  const auto v = doc.find("v");
  if (v == doc.end() || !v->is_number_integer() || v->get<std::int64_t>() != 1) malformed("\"v\" must be 1");
  return doc;
}

bool valid_addr(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size()) return false;
  unsigned port = 0;
  const char* first = addr.data() + colon + 1;
  const char* last = addr.data() + addr.size();
  auto [ptr, ec] = std::from_chars(first, last, port);
  return ec == std::errc() && ptr == last && port > 0 && port < 65536;
}

const std::string& string_at(const json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || !it->is_string() || it->get_ref<const std::string&>().empty()) {
    malformed(std::string("\"") + key + "\" must be a non-empty string");
  }
  return it->get_ref<const std::string&>();
}

Announcement announcement_of(const json& doc) {
  for (const auto& [key, _] : doc.items()) {
    if (key != "v" && key != "role" && key != "addr" && key != "epoch" && key != "node") {
      malformed("unexpected field \"" + key + "\"");
    }
  }
  Announcement a;
  try {
    a.role = role_from_name(string_at(doc, "role"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedAnnouncement) throw;
    malformed(e.what());
  }
  a.addr = string_at(doc, "addr");
  if (!valid_addr(a.addr)) malformed("\"addr\" must be host:port");
  const auto epoch = doc.find("epoch");
  if (epoch == doc.end() || !epoch->is_number_unsigned()) malformed("\"epoch\" must be a non-negative integer");
  a.epoch = epoch->get<std::uint64_t>();
  a.node = string_at(doc, "node");
  return a;
}

Heartbeat heartbeat_of(const json& doc) {
  Heartbeat h;
  h.module = string_at(doc, "hb");
  if (auto load = doc.find("load"); load != doc.end()) {
    if (!load->is_object()) malformed("\"load\" must be an object");
    try {
      h.load.providers = load->value("providers", std::size_t{0});
      h.load.subscriptions = load->value("subscriptions", std::size_t{0});
      h.load.cpu_hint = load->value("cpu_hint", 0.0);
    } catch (const json::exception& e) {
      malformed(e.what());
    }
  }
  return h;
}

Action action_of(const json& doc) {
  const auto d = doc.find("decision");
  if (!d->is_object()) malformed("\"decision\" must be an object");
  Action a;
  try {
    a.kind = action_from_name(string_at(*d, "action"));
    a.role = role_from_name(string_at(*d, "role"));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedAnnouncement) throw;
    malformed(e.what());
  }
  a.module = string_at(*d, "module");
  if (d->contains("target")) a.target = string_at(*d, "target");
  return a;
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::ingest: return "ingest";
    case Role::query: return "query";
    case Role::mgmt: return "mgmt";
  }
  return "?";
}

Role role_from_name(std::string_view name) {
  if (name == "ingest") return Role::ingest;
  if (name == "query") return Role::query;
  if (name == "mgmt") return Role::mgmt;
  throw Error(ErrorCode::InvalidArgument, "unknown role \"" + std::string(name) + "\"");
}

std::string encode_announcement(const Announcement& a) {
  return json{{"v", 1}, {"role", role_name(a.role)}, {"addr", a.addr}, {"epoch", a.epoch}, {"node", a.node}}
      .dump();
}

Announcement decode_announcement(std::string_view bytes) {
  const auto doc = parse_object(bytes);
  if (doc.contains("hb")) malformed("heartbeat, not an announcement");
  return announcement_of(doc);
}

std::string encode_heartbeat(const Heartbeat& h) {
  return json{{"v", 1},
              {"hb", h.module},
              {"load",
               {{"providers", h.load.providers},
                {"subscriptions", h.load.subscriptions},
                {"cpu_hint", h.load.cpu_hint}}}}
      .dump();
}

std::string encode_decision(const Action& a) { return json{{"v", 1}, {"decision", a}}.dump(); }

DiscoveryDatagram decode_discovery(std::string_view bytes) {
  const auto doc = parse_object(bytes);
  if (doc.contains("hb")) return heartbeat_of(doc);
  if (doc.contains("decision")) return action_of(doc);
  return announcement_of(doc);
}

// ---------------------------------------------------------------------------

bool EndpointDirectory::observe(const Announcement& a, std::int64_t now_us) {
  auto it = entries_.find(a.role);
  if (it == entries_.end()) {
    entries_.emplace(a.role, Entry{a, now_us});
    return true;
  }
  auto& e = it->second;
  const auto rank = [](const Announcement& x) { return std::tie(x.epoch, x.addr, x.node); };
  if (rank(a) < rank(e.announcement)) return false;
  const bool changed = !(a == e.announcement);
  e.announcement = a;
  e.seen_us = std::max(e.seen_us, now_us);
  return changed;
}

Announcement EndpointDirectory::lookup(Role role, std::int64_t now_us) const {
  auto it = entries_.find(role);
  if (it == entries_.end() || now_us - it->second.seen_us > 3 * interval_us_) {
    throw Error(ErrorCode::NoEndpointKnown,
                "no " + std::string(role_name(role)) + " endpoint announced within 3 intervals");
  }
  return it->second.announcement;
}

std::optional<Announcement> EndpointDirectory::peek(Role role) const {
  auto it = entries_.find(role);
  if (it == entries_.end()) return std::nullopt;
  return it->second.announcement;
}

// ---------------------------------------------------------------------------

std::string_view health_name(HealthState s) {
  switch (s) {
    case HealthState::alive: return "alive";
    case HealthState::suspect: return "suspect";
    case HealthState::failed: return "failed";
  }
  return "?";
}

std::string_view kind_name(ModuleKind k) {
  switch (k) {
    case ModuleKind::worker: return "worker";
    case ModuleKind::query: return "query";
    case ModuleKind::master: return "master";
    case ModuleKind::slave: return "slave";
    case ModuleKind::entry_point: return "entry_point";
  }
  return "?";
}

std::string_view action_name(ActionKind k) {
  switch (k) {
    case ActionKind::reassign_provider: return "reassign_provider";
    case ActionKind::teardown_query: return "teardown_query";
    case ActionKind::promote_slave: return "promote_slave";
    case ActionKind::spawn_slave: return "spawn_slave";
    case ActionKind::respawn: return "respawn";
    case ActionKind::role_unavailable: return "role_unavailable";
  }
  return "?";
}

ActionKind action_from_name(std::string_view name) {
  for (auto k : {ActionKind::reassign_provider, ActionKind::teardown_query, ActionKind::promote_slave,
                 ActionKind::spawn_slave, ActionKind::respawn, ActionKind::role_unavailable}) {
    if (action_name(k) == name) return k;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown action \"" + std::string(name) + "\"");
}

void to_json(json& j, const ModuleHealth& h) {
  j = json{{"module", h.info.id},
           {"role", role_name(h.info.role)},
           {"node", h.info.node},
           {"kind", kind_name(h.info.kind)},
           {"last_heartbeat_us", h.last_heartbeat_us},
           {"state", health_name(h.state)},
           {"load",
            {{"providers", h.load.providers},
             {"subscriptions", h.load.subscriptions},
             {"cpu_hint", h.load.cpu_hint}}}};
}

void to_json(json& j, const Action& a) {
  j = json{{"action", action_name(a.kind)}, {"module", a.module}, {"role", role_name(a.role)}};
  if (!a.target.empty()) j["target"] = a.target;
}

void HealthMonitor::register_module(const ModuleInfo& info, std::int64_t now_us) {
  ModuleHealth h;
  h.info = info;
  h.last_heartbeat_us = now_us;
  modules_.insert_or_assign(info.id, std::move(h));
}

void HealthMonitor::remove_module(const std::string& id) { modules_.erase(id); }

HealthState HealthMonitor::state_at(const ModuleHealth& h, std::int64_t now_us) const {
  if (h.state == HealthState::failed) return HealthState::failed;
  const auto silence = now_us - h.last_heartbeat_us;
  if (silence > options_.failed_after * options_.interval_us) return HealthState::failed;
  if (silence > options_.suspect_after * options_.interval_us) return HealthState::suspect;
  return HealthState::alive;
}

const ModuleHealth& HealthMonitor::process_heartbeat(const std::string& id, std::int64_t now_us,
                                                     std::optional<ModuleLoad> load) {
  auto it = modules_.find(id);
  if (it == modules_.end()) throw Error(ErrorCode::UnknownModule, "unknown module " + id);
  auto& h = it->second;
  if (h.state == HealthState::failed) return h;
  h.last_heartbeat_us = std::max(h.last_heartbeat_us, now_us);
  if (load) h.load = *load;
  h.state = state_at(h, now_us);
  return h;
}

void HealthMonitor::set_providers(const std::string& id, std::vector<std::string> providers) {
  auto it = modules_.find(id);
  if (it == modules_.end()) throw Error(ErrorCode::UnknownModule, "unknown module " + id);
  std::sort(providers.begin(), providers.end());
  it->second.providers = std::move(providers);
  it->second.load.providers = it->second.providers.size();
}

std::vector<Action> HealthMonitor::detect_failures(std::int64_t now_us) {
  std::vector<const ModuleHealth*> newly_failed;
  for (auto& [id, h] : modules_) {
    const auto next = state_at(h, now_us);
    if (next == HealthState::failed && h.state != HealthState::failed) newly_failed.push_back(&h);
    h.state = next;
  }

  auto live_of = [&](Role role, ModuleKind kind) -> const ModuleHealth* {
    for (const auto& [id, h] : modules_) {
      if (h.info.role == role && h.info.kind == kind && h.state != HealthState::failed) return &h;
    }
    return nullptr;
  };

  std::vector<Action> actions;
  std::vector<Role> unavailable;
  auto mark_unavailable = [&](const ModuleHealth& h) {
    if (std::find(unavailable.begin(), unavailable.end(), h.info.role) != unavailable.end()) return;
    unavailable.push_back(h.info.role);
    actions.push_back({ActionKind::role_unavailable, h.info.id, h.info.role, {}});
  };

  for (const auto* h : newly_failed) {
    const auto& info = h->info;
    switch (info.kind) {
      case ModuleKind::worker:
        for (const auto& p : h->providers) actions.push_back({ActionKind::reassign_provider, info.id, info.role, p});
        break;
      case ModuleKind::query:
        actions.push_back({ActionKind::teardown_query, info.id, info.role, {}});
        break;
      case ModuleKind::master:
        if (const auto* slave = live_of(info.role, ModuleKind::slave)) {
          actions.push_back({ActionKind::promote_slave, info.id, info.role, slave->info.id});
        } else {
          mark_unavailable(*h);
        }
        break;
      case ModuleKind::slave:
        if (live_of(info.role, ModuleKind::master) != nullptr) {
          actions.push_back({ActionKind::spawn_slave, info.id, info.role, info.node});
        } else {
          mark_unavailable(*h);
        }
        break;
      case ModuleKind::entry_point:
        actions.push_back({ActionKind::respawn, info.id, info.role, info.node});
        break;
    }
  }
  return actions;
}

const ModuleHealth& HealthMonitor::health(const std::string& id) const {
  auto it = modules_.find(id);
  if (it == modules_.end()) throw Error(ErrorCode::UnknownModule, "unknown module " + id);
  return it->second;
}

std::vector<ModuleHealth> HealthMonitor::modules() const {
  std::vector<ModuleHealth> out;
  for (const auto& [id, h] : modules_) out.push_back(h);
  return out;
}

// ---------------------------------------------------------------------------

DecisionLog::DecisionLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw Error(ErrorCode::IoError, "cannot open decision log " + path.string());
}

void DecisionLog::append(const json& entry) {
  out_ << entry.dump() << '\n';
  out_.flush();
  if (!out_) throw Error(ErrorCode::IoError, "decision log write failed");
}

}  // namespace rail::control
