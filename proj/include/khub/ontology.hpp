#pragma once

// User-defined ontology: entity types plus the allowed directed (head, relation, tail)
// triples. Schema files are YAML with exactly two top-level keys, `entities` and `rules`.

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "khub/util.hpp"

namespace khub {

class schema_error : public error {
 public:
  using error::error;
};

struct relation_rule {
  std::string head;
  std::string relation;
  std::string tail;

  auto operator<=>(const relation_rule&) const = default;
};

class ontology_schema {
 public:
  ontology_schema() = default;

  // Throws schema_error if a rule names an undeclared type or any name is empty.
  ontology_schema(std::set<std::string> entity_types, std::set<relation_rule> rules)
      : entity_types_(std::move(entity_types)), rules_(std::move(rules)) {
    for (const auto& t : entity_types_)
      if (t.empty()) throw schema_error("entity type names must be non-empty");
    for (const auto& r : rules_) {
      if (r.relation.empty()) throw schema_error("relation names must be non-empty");
      for (const auto* t : {&r.head, &r.tail})
        if (!entity_types_.count(*t)) throw schema_error(*t + " undeclared");
    }
  }

  const std::set<std::string>& entity_types() const { return entity_types_; }
  const std::set<relation_rule>& rules() const { return rules_; }

  bool has_type(std::string_view t) const { return entity_types_.count(std::string(t)) > 0; }

  bool allowed(std::string_view head, std::string_view relation, std::string_view tail) const {
    return rules_.count(relation_rule{std::string(head), std::string(relation), std::string(tail)}) > 0;
  }

  std::set<std::string> relation_names() const {
    std::set<std::string> out;
    for (const auto& r : rules_) out.insert(r.relation);
    return out;
  }

  bool operator==(const ontology_schema&) const = default;

 private:
  std::set<std::string> entity_types_;
  std::set<relation_rule> rules_;
};

inline bool allowed(const ontology_schema& s, std::string_view head, std::string_view relation,
                    std::string_view tail) {
  return s.allowed(head, relation, tail);
}

namespace detail {

inline YAML::Node parse_yaml(std::string_view text) {
  try {
    return YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    throw schema_error(std::string("schema does not parse: ") + e.what());
  }
}

inline std::string scalar(const YAML::Node& n, const char* what) {
  if (!n.IsScalar()) throw schema_error(std::string(what) + " must be a scalar name");
  return n.as<std::string>();
}

}  // namespace detail

inline ontology_schema load_schema(std::string_view config) {
  auto root = detail::parse_yaml(config);
  if (!root.IsMap()) throw schema_error("schema must be a mapping with `entities` and `rules`");
  std::set<std::string> types;
  std::set<relation_rule> rules;
  for (const auto& kv : root) {
    auto key = kv.first.as<std::string>();
    const auto& value = kv.second;
    if (key == "entities") {
      if (!value.IsSequence()) throw schema_error("`entities` must be a list");
      for (const auto& e : value) types.insert(detail::scalar(e, "entity"));
    } else if (key == "rules") {
      if (!value.IsSequence()) throw schema_error("`rules` must be a list");
      for (const auto& r : value) {
        if (!r.IsSequence() || r.size() != 3) throw schema_error("each rule must be [head, relation, tail]");
        rules.insert({detail::scalar(r[0], "head"), detail::scalar(r[1], "relation"), detail::scalar(r[2], "tail")});
      }
    } else {
      throw schema_error("unknown schema field `" + key + "`");
    }
  }
  return ontology_schema(std::move(types), std::move(rules));
}

inline std::string serialize_schema(const ontology_schema& s) {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "entities" << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& t : s.entity_types()) out << t;
  out << YAML::EndSeq;
  out << YAML::Key << "rules" << YAML::Value << YAML::BeginSeq;
  for (const auto& r : s.rules()) out << YAML::Flow << YAML::BeginSeq << r.head << r.relation << r.tail << YAML::EndSeq;
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// Pre-flattened external ontology (e.g. exported from an OWL tool): each entry names a
// class, its parent, and outgoing relations as (relation, target) pairs.
struct listing_entry {
  std::string name;
  std::optional<std::string> parent;
  std::vector<std::pair<std::string, std::string>> relations;
};

using ontology_listing = std::vector<listing_entry>;

inline ontology_listing load_listing(std::string_view text) {
  auto root = detail::parse_yaml(text);
  if (!root.IsMap() || !root["entities"] || !root["entities"].IsSequence())
    throw schema_error("listing must contain an `entities` list");
  ontology_listing out;
  for (const auto& e : root["entities"]) {
    listing_entry entry;
    if (!e.IsMap() || !e["name"]) throw schema_error("listing entry needs a `name`");
    entry.name = detail::scalar(e["name"], "name");
    if (e["parent"] && !e["parent"].IsNull()) entry.parent = detail::scalar(e["parent"], "parent");
    if (e["relations"]) {
      for (const auto& r : e["relations"]) {
        if (!r.IsSequence() || r.size() != 2) throw schema_error("listing relation must be [relation, target]");
        entry.relations.emplace_back(detail::scalar(r[0], "relation"), detail::scalar(r[1], "target"));
      }
    }
    out.push_back(std::move(entry));
  }
  return out;
}

// Restricts the listing to `selection`; a relation survives only if both endpoints do.
inline ontology_schema import_listing(const ontology_listing& external, const std::set<std::string>& selection) {
  std::set<std::string> known;
  for (const auto& e : external) known.insert(e.name);
  for (const auto& s : selection)
    if (!known.count(s)) throw schema_error("selected entity " + s + " is not in the listing");
  std::set<relation_rule> rules;
  for (const auto& e : external) {
    if (!selection.count(e.name)) continue;
    for (const auto& [rel, target] : e.relations)
      if (selection.count(target)) rules.insert({e.name, rel, target});
  }
  return ontology_schema(selection, std::move(rules));
}

}  // namespace khub
