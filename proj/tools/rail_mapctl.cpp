// rail-mapctl: builds and edits map snapshot files, or pushes single edits to
// a running node as provider datagrams.

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cli_common.hpp"
#include "rail/environment.hpp"
#include "rail/net.hpp"
#include "rail/provider_message.hpp"
#include "rail/snapshot.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Loads the map file into `env` unless it does not exist yet.
void load_map(rail::Environment& env, const std::string& path) {
  if (fs::exists(path)) rail::snapshot::import_file(env, path);
}

rail::ingest::ExternalRef parse_ref(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw rail::cli::UsageError("--ref must be KIND:EXT_ID, got \"" + text + "\"");
  }
  return {text.substr(0, colon), text.substr(colon + 1)};
}

std::vector<rail::store::AttributeMutation> parse_mutations(const std::vector<std::string>& sets,
                                                            const std::vector<std::string>& removes) {
  std::vector<rail::store::AttributeMutation> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw rail::cli::UsageError("--set takes PATH=JSON, got \"" + s + "\"");
    const auto value_text = s.substr(eq + 1);
    // Bare words are taken as strings so `--set kind=crate` works unquoted.
    auto value = json::parse(value_text, nullptr, false);
    if (value.is_discarded()) value = value_text;
    out.push_back(rail::store::AttributeMutation::set(s.substr(0, eq), std::move(value)));
  }
  for (const auto& r : removes) out.push_back(rail::store::AttributeMutation::remove(r));
  return out;
}

std::optional<rail::geo::GeometryPrimitive> parse_geometry(const std::string& box, std::optional<double> sphere) {
  if (!box.empty() && sphere) throw rail::cli::UsageError("--box and --sphere are exclusive");
  if (sphere) return rail::geo::GeometryPrimitive::sphere(*sphere);
  if (box.empty()) return std::nullopt;
  const auto v = rail::cli::parse_numbers("--box", box);
  if (v.size() != 3) throw rail::cli::UsageError("--box takes 3 half extents");
  return rail::geo::GeometryPrimitive::box({v[0], v[1], v[2]});
}

std::int64_t wall_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void send_item(const std::string& to, const std::string& provider, rail::ingest::ObservationItem item) {
  const auto now = wall_us();
  rail::ingest::ProviderMessage m{{provider, "mapctl"}, static_cast<std::uint64_t>(now), now, {}};
  m.observations.push_back(std::move(item));
  rail::net::send_datagram(rail::net::parse_endpoint(to), rail::ingest::encode_provider_message(m));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Create and edit RAIL maps", "rail-mapctl"};
  app.require_subcommand(1);

  std::string map_path;
  std::optional<std::string> send_to;

  auto* import_cmd = app.add_subcommand("import", "Merge a snapshot into the map file");
  std::string import_path;
  import_cmd->add_option("snapshot", import_path, "Snapshot to import")->required()->check(CLI::ExistingFile);
  import_cmd->add_option("--map", map_path, "Map file to update (created if missing)")->required();

  auto* export_cmd = app.add_subcommand("export", "Print the map file in canonical form");
  std::string export_out;
  export_cmd->add_option("--map", map_path, "Map file")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("-o,--output", export_out, "Write here instead of stdout");

  auto* object_cmd = app.add_subcommand("add-object", "Create or update an object");
  std::string object_id;
  std::string ref_text;
  std::vector<std::string> sets;
  std::vector<std::string> removes;
  std::string box;
  std::optional<double> sphere;
  std::string provider = "mapctl";
  auto* obj_map = object_cmd->add_option("--map", map_path, "Map file to update (created if missing)");
  auto* obj_send = object_cmd->add_option("--send", send_to, "Send to this ingest endpoint instead");
  obj_map->excludes(obj_send);
  object_cmd->add_option("--id", object_id, "Object id");
  object_cmd->add_option("--ref", ref_text, "With --send: address the object as KIND:EXT_ID");
  object_cmd->add_option("--set", sets, "PATH=JSON attribute assignment (repeatable)");
  object_cmd->add_option("--remove", removes, "Attribute path to remove (repeatable)");
  object_cmd->add_option("--box", box, "Box half extents x,y,z");
  object_cmd->add_option("--sphere", sphere, "Sphere radius");
  object_cmd->add_option("--provider", provider, "With --send: provider id")->capture_default_str();

  auto* edge_cmd = app.add_subcommand("add-edge", "Add a calibration edge or a detection");
  std::string parent;
  std::string child;
  std::string pose_text = "0,0,0";
  double sigma = 0.01;
  double resolution = 0.001;
  auto* edge_map = edge_cmd->add_option("--map", map_path, "Map file to update (created if missing)");
  auto* edge_send = edge_cmd->add_option("--send", send_to, "Send as a detection to this ingest endpoint");
  edge_map->excludes(edge_send);
  edge_cmd->add_option("--parent", parent, "Parent frame; with --send, the provider id")->required();
  edge_cmd->add_option("--child", child, "Child frame (file mode)");
  edge_cmd->add_option("--ref", ref_text, "With --send: the detected KIND:EXT_ID");
  edge_cmd->add_option("--pose", pose_text, "x,y,z or x,y,z,qw,qx,qy,qz")->capture_default_str();
  edge_cmd->add_option("--sigma", sigma, "Standard deviation")->capture_default_str()->check(CLI::PositiveNumber);
  edge_cmd->add_option("--res", resolution, "Resolution")->capture_default_str()->check(CLI::NonNegativeNumber);
  edge_cmd->add_option("--provider", provider, "File mode: provider recorded on the edge")->capture_default_str();

  return rail::cli::run(app, argc, argv, [&] {
    spdlog::set_level(spdlog::level::warn);
    rail::Environment env;

    if (*import_cmd) {
      load_map(env, map_path);
      const auto counts = rail::snapshot::import_file(env, import_path);
      rail::snapshot::export_file(env, map_path);
      std::cout << json{{"objects", counts.objects}, {"edges", counts.edges}, {"blobs", counts.blobs}}.dump() << "\n";
      return rail::cli::kOk;
    }

    if (*export_cmd) {
      load_map(env, map_path);
      if (export_out.empty()) {
        std::cout << rail::snapshot::export_text(env);
      } else {
        rail::snapshot::export_file(env, export_out);
      }
      return rail::cli::kOk;
    }

    if (!send_to && map_path.empty()) throw rail::cli::UsageError("one of --map or --send is required");

    if (*object_cmd) {
      rail::store::ObjectUpdate u;
      u.mutations = parse_mutations(sets, removes);
      u.geometry = parse_geometry(box, sphere);
      if (send_to) {
        rail::ingest::AttributeUpsert item;
        if (!ref_text.empty() == !object_id.empty()) throw rail::cli::UsageError("give exactly one of --id or --ref");
        if (ref_text.empty()) {
          item.object = rail::ObjectId(object_id);
        } else {
          item.object = parse_ref(ref_text);
        }
        item.mutations = u.mutations;
        item.geometry = u.geometry;
        send_item(*send_to, provider, std::move(item));
        return rail::cli::kOk;
      }
      if (object_id.empty()) throw rail::cli::UsageError("--id is required");
      load_map(env, map_path);
      env.upsert_object(rail::ObjectId(object_id), u);
      rail::snapshot::export_file(env, map_path);
      return rail::cli::kOk;
    }

    // add-edge
    const auto pose = rail::cli::parse_pose(pose_text);
    if (send_to) {
      if (ref_text.empty()) throw rail::cli::UsageError("--ref is required with --send");
      send_item(*send_to, parent, rail::ingest::Detection{parse_ref(ref_text), pose, sigma, resolution});
      return rail::cli::kOk;
    }
    if (child.empty()) throw rail::cli::UsageError("--child is required");
    load_map(env, map_path);
    const auto now = wall_us();
    env.upsert_edge({rail::FrameId(parent), rail::FrameId(child), provider, pose, sigma, resolution, now,
                     static_cast<std::uint64_t>(now)});
    rail::snapshot::export_file(env, map_path);
    return rail::cli::kOk;
  });
}
