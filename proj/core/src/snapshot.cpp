#include "rail/snapshot.hpp"

#include <fstream>
#include <sstream>

#include "rail/digest.hpp"
#include "rail/error.hpp"

namespace rail::snapshot {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "rail-snapshot";

[[noreturn]] void malformed(const std::string& where, const std::string& what) {
  throw Error(ErrorCode::MalformedSnapshot, where + ": " + what, where);
}

template <typename T, typename F>
std::vector<T> parse_array(const json& doc, const char* field, F&& parse_one) {
  std::vector<T> out;
  if (!doc.contains(field)) return out;
  const auto& arr = doc.at(field);
  if (!arr.is_array()) malformed(field, "expected an array");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = std::string(field) + "[" + std::to_string(i) + "]";
    try {
      out.push_back(parse_one(arr[i]));
    } catch (const Error& e) {
      malformed(where, e.what());
    } catch (const json::exception& e) {
      malformed(where, e.what());
    }
  }
  return out;
}

struct BlobEntry {
  store::BlobRef ref;
  std::string content;
};

}  // namespace

std::string canonical_text(const json& doc) { return doc.dump(2) + "\n"; }

json export_json(const Environment& env) {
  json blobs = json::array();
  for (const auto& ref : env.blobs().manifest()) {
    json entry = ref;
    entry["content_b64"] = base64_encode(env.blobs().get_blob(ref));
    blobs.push_back(std::move(entry));
  }
  return env.read_snapshot([&](const graph::GraphState& g, const store::ObjectState& o, Cursors) {
    auto gj = g.to_json();
    return json{{"format", kFormat},
                {"v", 1},
                {"frames", std::move(gj["frames"])},
                {"edges", std::move(gj["edges"])},
                {"objects", o.to_json()},
                {"blobs", std::move(blobs)}};
  });
}

std::string export_text(const Environment& env) { return canonical_text(export_json(env)); }

void export_file(const Environment& env, const std::filesystem::path& path) {
  const auto text = export_text(env);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "cannot write snapshot " + path.string());
}

ImportCounts import_json(Environment& env, const json& doc) {
  if (!doc.is_object()) malformed("$", "snapshot must be a JSON object");
  if (doc.value("format", std::string()) != kFormat) malformed("format", "expected \"rail-snapshot\"");
  if (!doc.contains("v") || doc.at("v") != 1) malformed("v", "unsupported snapshot version");

  const auto frames = parse_array<FrameId>(doc, "frames", [](const json& j) { return j.get<FrameId>(); });
  const auto edges = parse_array<graph::TransformObservation>(doc, "edges", [](const json& j) {
    auto obs = j.get<graph::TransformObservation>();
    graph::validate(obs);
    return obs;
  });
  const auto objects = parse_array<store::ObjectDocument>(
      doc, "objects", [](const json& j) { return j.get<store::ObjectDocument>(); });
  const auto blobs = parse_array<BlobEntry>(doc, "blobs", [](const json& j) {
    BlobEntry b{j.get<store::BlobRef>(), base64_decode(j.at("content_b64").get<std::string>())};
    if (sha256_hex(b.content) != b.ref.hash || b.content.size() != b.ref.size) {
      throw Error(ErrorCode::CorruptContent, "content does not match hash/size");
    }
    return b;
  });

  for (const auto& b : blobs) env.put_blob(b.content, b.ref.media_type);
  for (const auto& f : frames) env.ensure_frame(f);
  for (const auto& e : edges) env.upsert_edge(e);
  for (const auto& o : objects) env.restore_object(o);
  return {objects.size(), edges.size(), blobs.size()};
}

ImportCounts import_text(Environment& env, const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1;
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i + 1 < upto; ++i) {
      if (text[i] == '\n') ++line;
    }
    malformed("line " + std::to_string(line), e.what());
  }
  return import_json(env, doc);
}

ImportCounts import_file(Environment& env, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read snapshot " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return import_text(env, ss.str());
}

}  // namespace rail::snapshot
