#pragma once

// Attribute trees of object documents: dotted-path addressing, path-level
// mutations and the conjunctive predicate used by find_objects.

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace rail::store {

/// "marker.QR.id" -> {"marker","QR","id"}. Throws InvalidPath on an empty
/// path or empty segment.
std::vector<std::string> split_path(std::string_view path);

/// Value at `path` inside an attribute tree, or nullptr.
const nlohmann::json* lookup(const nlohmann::json& attributes, std::string_view path);

enum class MutationOp { set, remove };

struct AttributeMutation {
  std::string path;
  MutationOp op = MutationOp::set;
  nlohmann::json value;

  static AttributeMutation set(std::string path, nlohmann::json value) {
    return {std::move(path), MutationOp::set, std::move(value)};
  }
  static AttributeMutation remove(std::string path) { return {std::move(path), MutationOp::remove, {}}; }

  friend bool operator==(const AttributeMutation&, const AttributeMutation&) = default;
};

/// Wire form {"path":..,"op":"set"|"delete","value":..}.
void to_json(nlohmann::json& j, const AttributeMutation& m);
void from_json(const nlohmann::json& j, AttributeMutation& m);

/// Applies one mutation in place. set creates intermediate maps and throws
/// TypeClash when an intermediate value is not a map; delete of a missing
/// path is a no-op.
void apply_mutation(nlohmann::json& attributes, const AttributeMutation& m);

enum class ClauseOp { eq, exists, lt, le, gt, ge };

struct Clause {
  std::string path;
  ClauseOp op = ClauseOp::eq;
  nlohmann::json value;

  friend bool operator==(const Clause&, const Clause&) = default;
};

/// Conjunction of clauses; empty matches everything.
class AttributePredicate {
 public:
  AttributePredicate() = default;
  /// Throws InvalidPath / InvalidArgument for malformed clauses (ordering
  /// operators require a numeric operand).
  explicit AttributePredicate(std::vector<Clause> clauses);

  static AttributePredicate eq(std::string path, nlohmann::json value);
  static AttributePredicate exists(std::string path);
  AttributePredicate& and_(Clause c);

  const std::vector<Clause>& clauses() const { return clauses_; }
  bool empty() const { return clauses_.empty(); }
  bool matches(const nlohmann::json& attributes) const;

  friend bool operator==(const AttributePredicate&, const AttributePredicate&) = default;

 private:
  std::vector<Clause> clauses_;
};

/// Wire form: array of {"path":..,"op":"eq"|"exists"|"lt"|"le"|"gt"|"ge","value":..}.
void to_json(nlohmann::json& j, const AttributePredicate& p);
void from_json(const nlohmann::json& j, AttributePredicate& p);

/// Equality as used by eq clauses: numbers compare by value regardless of
/// integer/float representation.
bool attribute_equal(const nlohmann::json& a, const nlohmann::json& b);

}  // namespace rail::store
