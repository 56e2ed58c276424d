#pragma once

// Entity/relation annotations: BRAT-style standoff parsing and canonical serialisation,
// schema validation, export to token-level training records, and revision edits.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "khub/corpus.hpp"
#include "khub/ontology.hpp"
#include "khub/util.hpp"

namespace khub {

class parse_error : public error {
 public:
  using error::error;
};

class revision_error : public error {
 public:
  using error::error;
};

enum class provenance { human, regex, model };

inline std::string_view to_string(provenance p) {
  switch (p) {
    case provenance::human: return "human";
    case provenance::regex: return "regex";
    case provenance::model: return "model";
  }
  return "human";
}

inline std::optional<provenance> parse_provenance(std::string_view s) {
  if (s == "human") return provenance::human;
  if (s == "regex") return provenance::regex;
  if (s == "model") return provenance::model;
  return std::nullopt;
}

struct entity_annotation {
  std::string id;  // T<n>
  std::string type;
  std::string para_id;
  text_span span;
  std::string surface;
  provenance source = provenance::human;

  bool operator==(const entity_annotation&) const = default;
};

struct relation_annotation {
  std::string id;  // R<n>
  std::string type;
  std::string arg1;
  std::string arg2;
  provenance source = provenance::human;

  bool operator==(const relation_annotation&) const = default;
};

struct annotation_set {
  std::string doc_id;
  std::vector<entity_annotation> entities;
  std::vector<relation_annotation> relations;

  bool operator==(const annotation_set&) const = default;

  const entity_annotation* find_entity(std::string_view id) const {
    for (const auto& e : entities)
      if (e.id == id) return &e;
    return nullptr;
  }

  bool empty() const { return entities.empty() && relations.empty(); }

  std::string next_entity_id() const { return "T" + std::to_string(max_number(entities) + 1); }
  std::string next_relation_id() const { return "R" + std::to_string(max_number(relations) + 1); }

 private:
  template <typename Vec>
  static std::size_t max_number(const Vec& v) {
    std::size_t best = 0;
    for (const auto& a : v) {
      std::size_t n = 0;
      if (a.id.size() > 1 && parse_int(std::string_view(a.id).substr(1), n)) best = std::max(best, n);
    }
    return best;
  }
};

// ---------------------------------------------------------------------------
// Canonical form

// Entities ordered by (paragraph, start, end, type) and renumbered T1..; relations
// ordered by (arg1 index, arg2 index, type) and renumbered R1..
inline annotation_set canonicalize(const annotation_set& s) {
  annotation_set out;
  out.doc_id = s.doc_id;
  out.entities = s.entities;
  std::stable_sort(out.entities.begin(), out.entities.end(), [](const auto& a, const auto& b) {
    return std::tie(a.para_id, a.span.start, a.span.end, a.type) < std::tie(b.para_id, b.span.start, b.span.end, b.type);
  });
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < out.entities.size(); ++i) {
    index[out.entities[i].id] = i;
    out.entities[i].id = "T" + std::to_string(i + 1);
  }
  out.relations = s.relations;
  auto key = [&](const relation_annotation& r) {
    return std::make_tuple(index.at(r.arg1), index.at(r.arg2), r.type);
  };
  std::stable_sort(out.relations.begin(), out.relations.end(),
                   [&](const auto& a, const auto& b) { return key(a) < key(b); });
  for (std::size_t i = 0; i < out.relations.size(); ++i) {
    auto& r = out.relations[i];
    r.arg1 = out.entities[index.at(r.arg1)].id;
    r.arg2 = out.entities[index.at(r.arg2)].id;
    r.id = "R" + std::to_string(i + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standoff

namespace detail {

// Standoff surfaces live on one line; line breaks and tabs inside a span become spaces.
inline std::string standoff_surface(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c == '\n' || c == '\t' || c == '\r') c = ' ';
  return out;
}

inline bool valid_id(std::string_view id, char prefix) {
  std::size_t n = 0;
  return id.size() > 1 && id[0] == prefix && parse_int(id.substr(1), n);
}

}  // namespace detail

// Parses one paragraph's standoff text. Offsets are Unicode scalar positions into
// `paragraph_text`. Parsed annotations carry `human` provenance.
inline annotation_set parse_standoff(std::string_view ann_text, std::string_view paragraph_text,
                                     std::string para_id = {}) {
  annotation_set out;
  const auto text = utf8::decode(paragraph_text);
  std::set<std::string> ids;
  std::set<std::tuple<std::size_t, std::size_t, std::string>> seen_spans;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> parse_error {
    return parse_error("line " + std::to_string(line_no) + ": " + what);
  };
  for (const auto& line : split(ann_text, '\n')) {
    ++line_no;
    std::string_view l = line;
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (l.empty()) continue;
    auto fields = split(l, '\t');
    if (fields.size() < 2) throw fail("malformed line");
    const auto& id = fields[0];
    if (ids.count(id)) throw fail("duplicate id " + id);
    auto parts = split(fields[1], ' ');
    if (detail::valid_id(id, 'T')) {
      if (fields.size() != 3 || parts.size() != 3) throw fail("malformed entity line");
      entity_annotation e;
      e.id = id;
      e.type = parts[0];
      e.para_id = para_id;
      if (e.type.empty() || !parse_int(parts[1], e.span.start) || !parse_int(parts[2], e.span.end))
        throw fail("malformed entity offsets");
      if (e.span.start >= e.span.end || e.span.end > text.size())
        throw parse_error(id + ": offsets " + parts[1] + " " + parts[2] + " outside paragraph text");
      e.surface = utf8::encode(std::u32string_view(text).substr(e.span.start, e.span.length()));
      if (detail::standoff_surface(e.surface) != fields[2])
        throw parse_error(id + ": surface '" + fields[2] + "' does not match text '" + e.surface + "'");
      if (!seen_spans.insert({e.span.start, e.span.end, e.type}).second)
        throw parse_error(id + ": duplicate annotation of the same type and span");
      out.entities.push_back(std::move(e));
    } else if (detail::valid_id(id, 'R')) {
      if (fields.size() != 2 || parts.size() != 3 || !starts_with(parts[1], "Arg1:") || !starts_with(parts[2], "Arg2:"))
        throw fail("malformed relation line");
      relation_annotation r;
      r.id = id;
      r.type = parts[0];
      r.arg1 = parts[1].substr(5);
      r.arg2 = parts[2].substr(5);
      if (r.type.empty()) throw fail("malformed relation line");
      out.relations.push_back(std::move(r));
    } else {
      throw fail("unsupported record '" + id + "'");
    }
    ids.insert(id);
  }
  for (const auto& r : out.relations) {
    if (!out.find_entity(r.arg1) || !out.find_entity(r.arg2))
      throw parse_error(r.id + ": dangling relation argument");
    if (r.arg1 == r.arg2) throw parse_error(r.id + ": relation arguments must differ");
  }
  return out;
}

// Canonical standoff for the annotations of one paragraph (or the whole set when
// `para_id` is empty and the set covers a single paragraph).
inline std::string serialize_standoff(const annotation_set& s, std::string_view para_id = {}) {
  annotation_set scoped;
  scoped.doc_id = s.doc_id;
  std::set<std::string> kept;
  for (const auto& e : s.entities) {
    if (!para_id.empty() && e.para_id != para_id) continue;
    scoped.entities.push_back(e);
    kept.insert(e.id);
  }
  for (const auto& r : s.relations)
    if (kept.count(r.arg1) && kept.count(r.arg2)) scoped.relations.push_back(r);
  auto c = canonicalize(scoped);
  std::string out;
  for (const auto& e : c.entities)
    out += e.id + "\t" + e.type + " " + std::to_string(e.span.start) + " " + std::to_string(e.span.end) + "\t" +
           detail::standoff_surface(e.surface) + "\n";
  for (const auto& r : c.relations) out += r.id + "\t" + r.type + " Arg1:" + r.arg1 + " Arg2:" + r.arg2 + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Validation

struct violation {
  std::string ann_id;
  std::string kind;  // unknown_entity_type | disallowed_relation | dangling_relation
  std::string message;

  bool operator==(const violation&) const = default;
};

struct validation_report {
  std::vector<violation> violations;
  bool ok() const { return violations.empty(); }
};

inline validation_report validate(const annotation_set& s, const ontology_schema& schema) {
  validation_report report;
  for (const auto& e : s.entities)
    if (!schema.has_type(e.type))
      report.violations.push_back({e.id, "unknown_entity_type", e.id + ": entity type " + e.type + " is not in the ontology"});
  for (const auto& r : s.relations) {
    auto a = s.find_entity(r.arg1);
    auto b = s.find_entity(r.arg2);
    if (!a || !b) {
      report.violations.push_back({r.id, "dangling_relation", r.id + ": argument does not resolve"});
      continue;
    }
    if (!schema.allowed(a->type, r.type, b->type))
      report.violations.push_back(
          {r.id, "disallowed_relation", r.id + ": (" + a->type + ", " + r.type + ", " + b->type + ") is not an allowed triple"});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Training export

inline constexpr std::string_view no_relation = "NONE";

struct gold_span {
  std::size_t begin = 0;  // token index, inclusive
  std::size_t end = 0;    // token index, exclusive
  std::string type;

  bool operator==(const gold_span&) const = default;
};

struct gold_pair {
  std::size_t head = 0;  // index into spans
  std::size_t tail = 0;
  std::string label;

  bool operator==(const gold_pair&) const = default;
};

struct training_record {
  std::string sent_id;
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::vector<gold_span> spans;
  std::vector<gold_pair> pairs;

  bool operator==(const training_record&) const = default;
};

struct training_export {
  std::vector<training_record> records;
  std::vector<std::string> warnings;
};

inline training_record make_record(const sentence& s) {
  training_record r;
  r.sent_id = s.sent_id;
  for (const auto& t : s.tokens) {
    r.tokens.push_back(t.surface);
    r.pos.push_back(t.pos ? std::string(to_string(*t.pos)) : std::string("X"));
  }
  return r;
}

// Smallest token range covering a character span; `expanded` reports mid-token edges.
inline std::optional<text_span> snap_to_tokens(const sentence& s, text_span chars, bool* expanded = nullptr) {
  std::optional<std::size_t> first, last;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const auto& t = s.tokens[i].span;
    if (t.end > chars.start && t.start < chars.end) {
      if (!first) first = i;
      last = i;
    }
  }
  if (!first) return std::nullopt;
  if (expanded) *expanded = s.tokens[*first].span.start != chars.start || s.tokens[*last].span.end != chars.end;
  return text_span{*first, *last + 1};
}

// One record per sentence of every document that has an annotation set. Relation labels
// cover every ordered pair of distinct spans in the sentence (NONE when unannotated).
inline training_export export_training(const corpus& c, const std::vector<annotation_set>& sets) {
  training_export out;
  for (const auto& set : sets) {
    const document* doc = c.find_document(set.doc_id);
    if (!doc) {
      out.warnings.push_back("annotation set for unknown document " + set.doc_id);
      continue;
    }
    // ann_id -> (record index, span index)
    std::map<std::string, std::pair<std::size_t, std::size_t>> placed;
    std::map<std::string, std::size_t> record_of_sentence;
    const std::size_t first_record = out.records.size();
    for (const auto& p : doc->paragraphs)
      for (const auto& s : p.sentences) {
        record_of_sentence[s.sent_id] = out.records.size();
        out.records.push_back(make_record(s));
      }

    for (const auto& e : set.entities) {
      const paragraph* p = c.find_paragraph(e.para_id);
      if (!p || c.owner_of(e.para_id) != doc) {
        out.warnings.push_back(e.id + ": unknown paragraph " + e.para_id + ", skipped");
        continue;
      }
      const sentence* s = sentence_covering(*p, e.span);
      if (!s) {
        out.warnings.push_back(e.id + ": span crosses a sentence boundary, skipped");
        continue;
      }
      bool expanded = false;
      auto range = snap_to_tokens(*s, e.span, &expanded);
      if (!range) {
        out.warnings.push_back(e.id + ": span covers no token, skipped");
        continue;
      }
      if (expanded) out.warnings.push_back(e.id + ": span expanded to token boundaries");
      auto rec_index = record_of_sentence.at(s->sent_id);
      auto& rec = out.records[rec_index];
      gold_span g{range->start, range->end, e.type};
      auto it = std::find(rec.spans.begin(), rec.spans.end(), g);
      if (it != rec.spans.end()) {
        out.warnings.push_back(e.id + ": duplicates another span after snapping, merged");
        placed[e.id] = {rec_index, static_cast<std::size_t>(it - rec.spans.begin())};
        continue;
      }
      placed[e.id] = {rec_index, rec.spans.size()};
      rec.spans.push_back(std::move(g));
    }

    std::map<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>, std::string> labels;
    for (const auto& r : set.relations) {
      auto a = placed.find(r.arg1);
      auto b = placed.find(r.arg2);
      if (a == placed.end() || b == placed.end()) {
        out.warnings.push_back(r.id + ": argument was not exported, skipped");
        continue;
      }
      if (a->second.first != b->second.first) {
        out.warnings.push_back(r.id + ": arguments are in different sentences, skipped");
        continue;
      }
      if (a->second.second == b->second.second) {
        out.warnings.push_back(r.id + ": arguments collapse to one span, skipped");
        continue;
      }
      auto key = std::make_pair(a->second.first, std::make_pair(a->second.second, b->second.second));
      if (!labels.emplace(key, r.type).second) out.warnings.push_back(r.id + ": pair already labelled, skipped");
    }

    for (std::size_t ri = first_record; ri < out.records.size(); ++ri) {
      auto& rec = out.records[ri];
      for (std::size_t i = 0; i < rec.spans.size(); ++i)
        for (std::size_t j = 0; j < rec.spans.size(); ++j) {
          if (i == j) continue;
          auto it = labels.find({ri, {i, j}});
          rec.pairs.push_back({i, j, it == labels.end() ? std::string(no_relation) : it->second});
        }
    }
  }
  return out;
}

inline nlohmann::json to_json(const training_record& r) {
  using nlohmann::json;
  json spans = json::array();
  for (const auto& s : r.spans) spans.push_back({s.begin, s.end, s.type});
  json pairs = json::array();
  for (const auto& p : r.pairs) pairs.push_back({p.head, p.tail, p.label});
  return {{"sent_id", r.sent_id}, {"tokens", r.tokens}, {"pos", r.pos}, {"spans", spans}, {"pairs", pairs}};
}

inline training_record training_record_from_json(const nlohmann::json& j) {
  training_record r;
  r.sent_id = j.at("sent_id").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.pos = j.value("pos", std::vector<std::string>(r.tokens.size(), "X"));
  for (const auto& s : j.at("spans")) r.spans.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>(), s[2].get<std::string>()});
  for (const auto& p : j.at("pairs")) r.pairs.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>(), p[2].get<std::string>()});
  return r;
}

inline std::string write_training_records(const std::vector<training_record>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<training_record> read_training_records(std::string_view text) {
  std::vector<training_record> out;
  for (const auto& line : split_lines(text))
    if (!trim(line).empty()) out.push_back(training_record_from_json(nlohmann::json::parse(line)));
  return out;
}

// ---------------------------------------------------------------------------
// Revisions

struct add_entity {
  std::string type;
  std::string para_id;
  text_span span;
  std::string surface;
};

struct add_relation {
  std::string type;
  std::string arg1;
  std::string arg2;
};

struct delete_annotation {
  std::string id;
};

struct retype_annotation {
  std::string id;
  std::string new_type;
};

using revision_edit = std::variant<add_entity, add_relation, delete_annotation, retype_annotation>;

// Applies edits in order to a copy; on error nothing is applied. Deleting an entity
// removes its incident relations; every touched annotation becomes `human`.
inline annotation_set apply_revision(annotation_set set, const std::vector<revision_edit>& edits) {
  for (const auto& edit : edits) {
    std::visit(
        [&](const auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, add_entity>) {
            if (e.span.start >= e.span.end) throw revision_error("entity span must be non-empty");
            for (const auto& x : set.entities)
              if (x.para_id == e.para_id && x.span == e.span && x.type == e.type)
                throw revision_error("duplicate annotation of type " + e.type + " on the same span as " + x.id);
            set.entities.push_back({set.next_entity_id(), e.type, e.para_id, e.span, e.surface, provenance::human});
          } else if constexpr (std::is_same_v<T, add_relation>) {
            if (!set.find_entity(e.arg1) || !set.find_entity(e.arg2))
              throw revision_error("relation argument does not resolve");
            if (e.arg1 == e.arg2) throw revision_error("relation arguments must differ");
            set.relations.push_back({set.next_relation_id(), e.type, e.arg1, e.arg2, provenance::human});
          } else if constexpr (std::is_same_v<T, delete_annotation>) {
            auto ent = std::find_if(set.entities.begin(), set.entities.end(), [&](const auto& x) { return x.id == e.id; });
            if (ent != set.entities.end()) {
              set.entities.erase(ent);
              std::erase_if(set.relations, [&](const auto& r) { return r.arg1 == e.id || r.arg2 == e.id; });
              return;
            }
            auto n = std::erase_if(set.relations, [&](const auto& r) { return r.id == e.id; });
            if (n == 0) throw revision_error("unknown annotation id " + e.id);
          } else {
            for (auto& x : set.entities)
              if (x.id == e.id) {
                for (const auto& y : set.entities)
                  if (&y != &x && y.para_id == x.para_id && y.span == x.span && y.type == e.new_type)
                    throw revision_error("retype would duplicate " + y.id);
                x.type = e.new_type;
                x.source = provenance::human;
                return;
              }
            for (auto& r : set.relations)
              if (r.id == e.id) {
                r.type = e.new_type;
                r.source = provenance::human;
                return;
              }
            throw revision_error("unknown annotation id " + e.id);
          }
        },
        edit);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Structured (JSON) persistence, carries provenance.

inline nlohmann::json to_json(const annotation_set& s) {
  using nlohmann::json;
  json ents = json::array();
  for (const auto& e : s.entities)
    ents.push_back({{"id", e.id}, {"type", e.type}, {"para_id", e.para_id}, {"start", e.span.start},
                    {"end", e.span.end}, {"surface", e.surface}, {"provenance", to_string(e.source)}});
  json rels = json::array();
  for (const auto& r : s.relations)
    rels.push_back({{"id", r.id}, {"type", r.type}, {"arg1", r.arg1}, {"arg2", r.arg2}, {"provenance", to_string(r.source)}});
  return {{"doc_id", s.doc_id}, {"entities", ents}, {"relations", rels}};
}

inline annotation_set annotation_set_from_json(const nlohmann::json& j) {
  annotation_set s;
  s.doc_id = j.value("doc_id", "");
  auto prov = [](const nlohmann::json& x) {
    auto p = parse_provenance(x.value("provenance", "human"));
    if (!p) throw parse_error("unknown provenance");
    return *p;
  };
  for (const auto& e : j.value("entities", nlohmann::json::array()))
    s.entities.push_back({e.at("id").get<std::string>(), e.at("type").get<std::string>(), e.at("para_id").get<std::string>(),
                          {e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>()},
                          e.value("surface", ""), prov(e)});
  for (const auto& r : j.value("relations", nlohmann::json::array()))
    s.relations.push_back({r.at("id").get<std::string>(), r.at("type").get<std::string>(), r.at("arg1").get<std::string>(),
                           r.at("arg2").get<std::string>(), prov(r)});
  return s;
}

// Checks ids are unique, relations resolve, and no (type, span) is duplicated.
inline void check_integrity(const annotation_set& s) {
  std::set<std::string> ids;
  std::set<std::tuple<std::string, std::size_t, std::size_t, std::string>> spans;
  for (const auto& e : s.entities) {
    if (!ids.insert(e.id).second) throw parse_error("duplicate id " + e.id);
    if (e.span.start >= e.span.end) throw parse_error(e.id + ": empty span");
    if (!spans.insert({e.para_id, e.span.start, e.span.end, e.type}).second)
      throw parse_error(e.id + ": duplicate annotation of the same type and span");
  }
  for (const auto& r : s.relations) {
    if (!ids.insert(r.id).second) throw parse_error("duplicate id " + r.id);
    if (!s.find_entity(r.arg1) || !s.find_entity(r.arg2)) throw parse_error(r.id + ": dangling relation argument");
    if (r.arg1 == r.arg2) throw parse_error(r.id + ": relation arguments must differ");
  }
}

// Checks surfaces match the corpus text and relation arguments share a sentence.
inline std::vector<std::string> check_against_corpus(const annotation_set& s, const corpus& c) {
  std::vector<std::string> problems;
  std::map<std::string, const sentence*> sentence_of;
  for (const auto& e : s.entities) {
    const paragraph* p = c.find_paragraph(e.para_id);
    if (!p) {
      problems.push_back(e.id + ": unknown paragraph " + e.para_id);
      continue;
    }
    if (e.span.end > utf8::length(p->text)) {
      problems.push_back(e.id + ": span outside paragraph text");
      continue;
    }
    if (utf8::slice(p->text, e.span) != e.surface) problems.push_back(e.id + ": surface does not match paragraph text");
    sentence_of[e.id] = sentence_covering(*p, e.span);
  }
  for (const auto& r : s.relations) {
    auto a = sentence_of.find(r.arg1);
    auto b = sentence_of.find(r.arg2);
    if (a == sentence_of.end() || b == sentence_of.end()) continue;
    if (!a->second || a->second != b->second) problems.push_back(r.id + ": arguments are not in the same sentence");
  }
  return problems;
}

}  // namespace khub
