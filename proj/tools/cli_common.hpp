#pragma once

// Shared plumbing for the rail-* tools. Exit codes: 0 ok, 1 operational
// error, 2 usage error.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "rail/error.hpp"
#include "rail/geometry.hpp"

namespace rail::cli {

inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;
inline constexpr int kUsage = 2;

/// Thrown for bad combinations of otherwise well-formed options.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline int run(CLI::App& app, int argc, char** argv, const std::function<int()>& body) {
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    return body();
  } catch (const UsageError& e) {
    std::cerr << app.get_name() << ": " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << app.get_name() << ": " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument ? kUsage : kFailed;
  } catch (const std::exception& e) {
    std::cerr << app.get_name() << ": " << e.what() << "\n";
    return kFailed;
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto doc = nlohmann::json::parse(ss.str(), nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::IoError, path + " is not valid JSON");
  return doc;
}

inline nlohmann::json parse_json_arg(const std::string& what, const std::string& text) {
  auto doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw UsageError(what + " is not valid JSON: " + text);
  return doc;
}

inline std::vector<double> parse_numbers(const std::string& what, const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(what + ": \"" + item + "\" is not a number");
    }
  }
  return out;
}

/// "x,y,z" or "x,y,z,qw,qx,qy,qz".
inline geo::Pose6D parse_pose(const std::string& text) {
  const auto v = parse_numbers("--pose", text);
  if (v.size() != 3 && v.size() != 7) throw UsageError("--pose takes 3 or 7 numbers");
  nlohmann::json j{{"t", {v[0], v[1], v[2]}}};
  j["q"] = v.size() == 7 ? nlohmann::json{v[3], v[4], v[5], v[6]} : nlohmann::json{1.0, 0.0, 0.0, 0.0};
  try {
    return j.get<geo::Pose6D>();
  } catch (const Error& e) {
    throw UsageError(std::string("--pose: ") + e.what());
  }
}

inline void set_log_level(const std::string& level) {
  const auto l = spdlog::level::from_str(level);
  if (l == spdlog::level::off && level != "off") throw UsageError("unknown log level " + level);
  spdlog::set_level(l);
}

}  // namespace rail::cli
