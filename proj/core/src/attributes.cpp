#include "rail/attributes.hpp"

#include "rail/error.hpp"

namespace rail::store {

using nlohmann::json;

std::vector<std::string> split_path(std::string_view path) {
  if (path.empty()) throw Error(ErrorCode::InvalidPath, "attribute path is empty");
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const auto seg = path.substr(start, dot == std::string_view::npos ? path.npos : dot - start);
    if (seg.empty()) {
      throw Error(ErrorCode::InvalidPath, "empty segment in attribute path \"" + std::string(path) + "\"");
    }
    out.emplace_back(seg);
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return out;
}

const json* lookup(const json& attributes, std::string_view path) {
  const json* cur = &attributes;
  for (const auto& seg : split_path(path)) {
    if (!cur->is_object()) return nullptr;
    auto it = cur->find(seg);
    if (it == cur->end()) return nullptr;
    cur = &*it;
  }
  return cur;
}

void to_json(json& j, const AttributeMutation& m) {
  j = json{{"path", m.path}, {"op", m.op == MutationOp::set ? "set" : "delete"}};
  if (m.op == MutationOp::set) j["value"] = m.value;
}

void from_json(const json& j, AttributeMutation& m) {
  if (!j.is_object() || !j.contains("path") || !j.at("path").is_string()) {
    throw Error(ErrorCode::InvalidArgument, "mutation requires a string \"path\"");
  }
  m.path = j.at("path").get<std::string>();
  const std::string op = j.contains("op") ? j.at("op").get<std::string>() : "set";
  if (op == "set") {
    if (!j.contains("value")) throw Error(ErrorCode::InvalidArgument, "set mutation requires \"value\"");
    m.op = MutationOp::set;
    m.value = j.at("value");
  } else if (op == "delete") {
    m.op = MutationOp::remove;
    m.value = nullptr;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown mutation op: " + op);
  }
}

void apply_mutation(json& attributes, const AttributeMutation& m) {
  const auto segs = split_path(m.path);
  if (!attributes.is_object()) attributes = json::object();
  json* cur = &attributes;
  for (std::size_t i = 0; i + 1 < segs.size(); ++i) {
    auto it = cur->find(segs[i]);
    if (it == cur->end()) {
      if (m.op == MutationOp::remove) return;
      cur = &(*cur)[segs[i]];
      *cur = json::object();
      continue;
    }
    if (!it->is_object()) {
      if (m.op == MutationOp::remove) return;
      throw Error(ErrorCode::TypeClash,
                  "cannot set \"" + m.path + "\": \"" + segs[i] + "\" holds a non-map value");
    }
    cur = &*it;
  }
  if (m.op == MutationOp::set) {
    (*cur)[segs.back()] = m.value;
  } else {
    cur->erase(segs.back());
  }
}

bool attribute_equal(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return a.get<double>() == b.get<double>();
  return a == b;
}

namespace {

ClauseOp clause_op_from(const std::string& s) {
  if (s == "eq") return ClauseOp::eq;
  if (s == "exists") return ClauseOp::exists;
  if (s == "lt") return ClauseOp::lt;
  if (s == "le") return ClauseOp::le;
  if (s == "gt") return ClauseOp::gt;
  if (s == "ge") return ClauseOp::ge;
  throw Error(ErrorCode::InvalidArgument, "unknown predicate op: " + s);
}

const char* clause_op_name(ClauseOp op) {
  switch (op) {
    case ClauseOp::eq: return "eq";
    case ClauseOp::exists: return "exists";
    case ClauseOp::lt: return "lt";
    case ClauseOp::le: return "le";
    case ClauseOp::gt: return "gt";
    case ClauseOp::ge: return "ge";
  }
  return "eq";
}

void validate_clause(const Clause& c) {
  split_path(c.path);
  const bool ordering = c.op != ClauseOp::eq && c.op != ClauseOp::exists;
  if (ordering && !c.value.is_number()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(clause_op_name(c.op)) + " on \"" + c.path + "\" requires a number");
  }
}

bool clause_matches(const Clause& c, const json& attributes) {
  const json* v = lookup(attributes, c.path);
  if (v == nullptr) return false;
  switch (c.op) {
    case ClauseOp::exists: return true;
    case ClauseOp::eq: return attribute_equal(*v, c.value);
    default: break;
  }
  if (!v->is_number()) return false;
  const double lhs = v->get<double>();
  const double rhs = c.value.get<double>();
  switch (c.op) {
    case ClauseOp::lt: return lhs < rhs;
    case ClauseOp::le: return lhs <= rhs;
    case ClauseOp::gt: return lhs > rhs;
    case ClauseOp::ge: return lhs >= rhs;
    default: return false;
  }
}

}  // namespace

AttributePredicate::AttributePredicate(std::vector<Clause> clauses) : clauses_(std::move(clauses)) {
  for (const auto& c : clauses_) validate_clause(c);
}

AttributePredicate AttributePredicate::eq(std::string path, json value) {
  return AttributePredicate({Clause{std::move(path), ClauseOp::eq, std::move(value)}});
}

AttributePredicate AttributePredicate::exists(std::string path) {
  return AttributePredicate({Clause{std::move(path), ClauseOp::exists, nullptr}});
}

AttributePredicate& AttributePredicate::and_(Clause c) {
  validate_clause(c);
  clauses_.push_back(std::move(c));
  return *this;
}

bool AttributePredicate::matches(const json& attributes) const {
  for (const auto& c : clauses_) {
    if (!clause_matches(c, attributes)) return false;
  }
  return true;
}

void to_json(json& j, const AttributePredicate& p) {
  j = json::array();
  for (const auto& c : p.clauses()) {
    json e{{"path", c.path}, {"op", clause_op_name(c.op)}};
    if (c.op != ClauseOp::exists) e["value"] = c.value;
    j.push_back(std::move(e));
  }
}

void from_json(const json& j, AttributePredicate& p) {
  if (j.is_null()) {
    p = AttributePredicate();
    return;
  }
  if (!j.is_array()) throw Error(ErrorCode::InvalidArgument, "predicate must be an array of clauses");
  std::vector<Clause> clauses;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("path") || !e.at("path").is_string()) {
      throw Error(ErrorCode::InvalidArgument, "clause requires a string \"path\"");
    }
    Clause c;
    c.path = e.at("path").get<std::string>();
    c.op = clause_op_from(e.value("op", std::string("eq")));
    if (c.op != ClauseOp::exists) {
      if (!e.contains("value")) throw Error(ErrorCode::InvalidArgument, "clause requires \"value\"");
      c.value = e.at("value");
    }
    clauses.push_back(std::move(c));
  }
  p = AttributePredicate(std::move(clauses));
}

}  // namespace rail::store
