#pragma once

// Whole-model snapshot files: canonical JSON (sorted keys, two-space indent)
// holding frames, edges, documents and blob contents.
//
//   {"blobs":[{"content_b64":..,"hash":..,"media_type":..,"size":..}],
//    "edges":[<TransformObservation>...], "format":"rail-snapshot",
//    "frames":[..], "objects":[<ObjectDocument>...], "v":1}

#include <cstddef>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "rail/environment.hpp"

namespace rail::snapshot {

struct ImportCounts {
  std::size_t objects = 0;
  std::size_t edges = 0;
  std::size_t blobs = 0;

  friend bool operator==(const ImportCounts&, const ImportCounts&) = default;
};

nlohmann::json export_json(const Environment& env);
/// Canonical text of export_json (byte-stable for equal contents).
std::string export_text(const Environment& env);
void export_file(const Environment& env, const std::filesystem::path& path);

/// Validates the whole document before touching `env`; throws
/// MalformedSnapshot naming the offending line or field. Importing the same
/// snapshot twice leaves the same state as importing it once.
ImportCounts import_json(Environment& env, const nlohmann::json& doc);
ImportCounts import_text(Environment& env, const std::string& text);
ImportCounts import_file(Environment& env, const std::filesystem::path& path);

std::string canonical_text(const nlohmann::json& doc);

}  // namespace rail::snapshot
