#pragma once

// In-process property graph: DOCUMENT -> PARAGRAPH -> SENTENCE -> ENTITY containment plus
// ENTITY -> ENTITY relation edges. Node ids derive from their keys, so rebuilding from the
// same inputs gives the same ids.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "khub/annotation.hpp"
#include "khub/corpus.hpp"
#include "khub/util.hpp"

namespace khub {

class build_error : public error {
 public:
  using error::error;
};

class query_error : public error {
 public:
  using error::error;
};

class graph_load_error : public error {
 public:
  graph_load_error(std::size_t record, const std::string& what)
      : error("record " + std::to_string(record) + ": " + what), record_(record) {}
  std::size_t record() const { return record_; }

 private:
  std::size_t record_;
};

enum class node_kind { document, paragraph, sentence, entity };

inline std::string_view to_string(node_kind k) {
  switch (k) {
    case node_kind::document: return "DOCUMENT";
    case node_kind::paragraph: return "PARAGRAPH";
    case node_kind::sentence: return "SENTENCE";
    case node_kind::entity: return "ENTITY";
  }
  return "?";
}

inline std::optional<node_kind> parse_node_kind(std::string_view s) {
  for (auto k : {node_kind::document, node_kind::paragraph, node_kind::sentence, node_kind::entity})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline constexpr std::string_view has_paragraph = "HAS_PARAGRAPH";
inline constexpr std::string_view has_sentence = "HAS_SENTENCE";
inline constexpr std::string_view has_entity = "HAS_ENTITY";

inline bool is_containment(std::string_view kind) {
  return kind == has_paragraph || kind == has_sentence || kind == has_entity;
}

struct node {
  std::string id;
  node_kind kind = node_kind::document;
  std::map<std::string, std::string> props;

  bool operator==(const node&) const = default;
};

struct edge {
  std::string id;
  std::string kind;  // containment kind or relation name
  std::string src;
  std::string dst;

  bool operator==(const edge&) const = default;
};

inline std::string document_node_id(std::string_view doc_id) { return "D:" + std::string(doc_id); }
inline std::string paragraph_node_id(std::string_view para_id) { return "P:" + std::string(para_id); }
inline std::string sentence_node_id(std::string_view sent_id) { return "S:" + std::string(sent_id); }
inline std::string entity_node_id(std::string_view sent_id, text_span span, std::string_view type) {
  return "E:" + std::string(sent_id) + ":" + std::to_string(span.start) + "-" + std::to_string(span.end) + ":" +
         std::string(type);
}

class property_graph {
 public:
  // Adds a node, or returns the existing one with the same id (kind must agree).
  node& add_node(node n) {
    if (auto it = node_index_.find(n.id); it != node_index_.end()) {
      if (nodes_[it->second].kind != n.kind) throw build_error("node " + n.id + " already exists with another kind");
      return nodes_[it->second];
    }
    node_index_.emplace(n.id, nodes_.size());
    out_.emplace_back();
    in_.emplace_back();
    nodes_.push_back(std::move(n));
    return nodes_.back();
  }

  // Adds an edge unless one with the same (kind, src, dst) exists. Both ends must exist.
  const edge& add_edge(std::string kind, const std::string& src, const std::string& dst, std::string id = "") {
    auto s = node_index_.find(src);
    auto d = node_index_.find(dst);
    if (s == node_index_.end() || d == node_index_.end())
      throw build_error("edge " + kind + " " + src + " -> " + dst + " has a missing endpoint");
    for (auto e : out_[s->second])
      if (edges_[e].kind == kind && edges_[e].dst == dst) return edges_[e];
    if (id.empty()) id = "e" + std::to_string(edges_.size() + 1);
    if (edge_ids_.count(id)) throw build_error("duplicate edge id " + id);
    edge_ids_.insert(id);
    out_[s->second].push_back(edges_.size());
    in_[d->second].push_back(edges_.size());
    edges_.push_back({std::move(id), std::move(kind), src, dst});
    return edges_.back();
  }

  const std::vector<node>& nodes() const { return nodes_; }
  const std::vector<edge>& edges() const { return edges_; }
  bool empty() const { return nodes_.empty(); }

  const node* find_node(std::string_view id) const {
    auto it = node_index_.find(std::string(id));
    return it == node_index_.end() ? nullptr : &nodes_[it->second];
  }

  node* find_node(std::string_view id) {
    auto it = node_index_.find(std::string(id));
    return it == node_index_.end() ? nullptr : &nodes_[it->second];
  }

  std::size_t position(std::string_view id) const { return node_index_.at(std::string(id)); }

  std::vector<const edge*> out_edges(std::string_view id) const { return collect(out_, id); }
  std::vector<const edge*> in_edges(std::string_view id) const { return collect(in_, id); }

  std::vector<const node*> nodes_of_kind(node_kind k) const {
    std::vector<const node*> out;
    for (const auto& n : nodes_)
      if (n.kind == k) out.push_back(&n);
    return out;
  }

  // Structural equality: same node set and same edge set, order-insensitive.
  friend bool operator==(const property_graph& a, const property_graph& b) {
    auto sorted = [](auto v, auto key) {
      std::sort(v.begin(), v.end(), [&](const auto& x, const auto& y) { return key(x) < key(y); });
      return v;
    };
    auto node_key = [](const node& n) { return n.id; };
    auto edge_key = [](const edge& e) { return std::tie(e.id, e.kind, e.src, e.dst); };
    return sorted(a.nodes_, node_key) == sorted(b.nodes_, node_key) &&
           sorted(a.edges_, edge_key) == sorted(b.edges_, edge_key);
  }

 private:
  std::vector<const edge*> collect(const std::vector<std::vector<std::size_t>>& adj, std::string_view id) const {
    std::vector<const edge*> out;
    auto it = node_index_.find(std::string(id));
    if (it == node_index_.end()) return out;
    for (auto e : adj[it->second]) out.push_back(&edges_[e]);
    return out;
  }

  std::vector<node> nodes_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::vector<edge> edges_;
  std::set<std::string> edge_ids_;
  std::vector<std::vector<std::size_t>> out_, in_;
};

// ---------------------------------------------------------------------------
// Building

inline void add_document(property_graph& g, const document& doc) {
  auto did = document_node_id(doc.doc_id);
  std::string authors;
  for (const auto& a : doc.metadata.authors) authors += (authors.empty() ? "" : "; ") + a;
  node dn{did, node_kind::document, {{"doc_id", doc.doc_id}, {"title", doc.metadata.title}, {"authors", authors}}};
  if (doc.metadata.year) dn.props["year"] = std::to_string(*doc.metadata.year);
  g.add_node(std::move(dn));
  for (const auto& p : doc.paragraphs) {
    auto pid = paragraph_node_id(p.para_id);
    node pn{pid, node_kind::paragraph, {{"para_id", p.para_id}}};
    if (p.source_section) pn.props["section"] = *p.source_section;
    g.add_node(std::move(pn));
    g.add_edge(std::string(has_paragraph), did, pid);
    for (const auto& s : p.sentences) {
      auto sid = sentence_node_id(s.sent_id);
      g.add_node({sid, node_kind::sentence,
                  {{"sent_id", s.sent_id}, {"start", std::to_string(s.span.start)}, {"end", std::to_string(s.span.end)}}});
      g.add_edge(std::string(has_sentence), pid, sid);
    }
  }
}

namespace detail {

inline void merge_provenance(node& n, provenance p) {
  auto list = split(n.props["provenance"], ',');
  std::set<std::string> all;
  for (const auto& x : list)
    if (!x.empty()) all.insert(x);
  all.insert(std::string(to_string(p)));
  std::string joined;
  for (const auto& x : all) joined += (joined.empty() ? "" : ",") + x;
  n.props["provenance"] = joined;
}

}  // namespace detail

// Adds the entity nodes and relation edges of one annotation set. Duplicate entities
// (same sentence, span, type) collapse into one node whose provenance lists every source.
inline void add_annotations(property_graph& g, const corpus& c, const annotation_set& set) {
  const document* doc = c.find_document(set.doc_id);
  if (!doc) throw build_error("annotation set references unknown document " + set.doc_id);
  std::map<std::string, std::string> node_of;  // annotation id -> node id
  std::vector<const entity_annotation*> ents;
  for (const auto& e : set.entities) ents.push_back(&e);
  std::map<std::string, std::size_t> para_order;
  for (std::size_t i = 0; i < doc->paragraphs.size(); ++i) para_order[doc->paragraphs[i].para_id] = i;
  for (const auto* e : ents)
    if (!para_order.count(e->para_id))
      throw build_error("entity " + e->id + " references paragraph " + e->para_id + " outside document " + set.doc_id);
  std::stable_sort(ents.begin(), ents.end(), [&](const auto* a, const auto* b) {
    return std::tuple(para_order[a->para_id], a->span, a->type) < std::tuple(para_order[b->para_id], b->span, b->type);
  });
  for (const auto* e : ents) {
    const auto& para = doc->paragraphs[para_order[e->para_id]];
    const sentence* s = sentence_covering(para, e->span);
    if (!s) throw build_error("entity " + e->id + " is not inside a single sentence of " + e->para_id);
    auto id = entity_node_id(s->sent_id, e->span, e->type);
    if (!g.find_node(id)) {
      g.add_node({id, node_kind::entity,
                  {{"surface", e->surface},
                   {"entity_type", e->type},
                   {"para_id", e->para_id},
                   {"start", std::to_string(e->span.start)},
                   {"end", std::to_string(e->span.end)}}});
      g.add_edge(std::string(has_entity), sentence_node_id(s->sent_id), id);
    }
    detail::merge_provenance(*g.find_node(id), e->source);
    node_of[e->id] = id;
  }
  for (const auto& r : set.relations) {
    if (is_containment(r.type)) throw build_error("relation name " + r.type + " is reserved");
    auto a = node_of.find(r.arg1);
    auto b = node_of.find(r.arg2);
    if (a == node_of.end() || b == node_of.end()) throw build_error("relation " + r.id + " has a missing argument");
    g.add_edge(r.type, a->second, b->second);
  }
}

inline property_graph build_graph(const corpus& c, const std::vector<annotation_set>& sets) {
  property_graph g;
  for (const auto& d : c.documents()) add_document(g, d);
  for (const auto& s : sets) add_annotations(g, c, s);
  return g;
}

// ---------------------------------------------------------------------------
// Queries

// Induced subgraph over the listed paragraphs: their documents, sentences, entities,
// containment edges, and relation edges with both ends inside. Original order is kept.
inline property_graph subgraph_for_paragraphs(const property_graph& g, const std::vector<std::string>& para_ids) {
  std::set<std::string> keep;
  for (const auto& pid : para_ids) {
    auto id = paragraph_node_id(pid);
    const node* p = g.find_node(id);
    if (!p || p->kind != node_kind::paragraph) throw query_error("unknown paragraph " + pid);
    keep.insert(id);
    for (const auto* e : g.in_edges(id))
      if (e->kind == has_paragraph) keep.insert(e->src);
    for (const auto* e : g.out_edges(id)) {
      if (e->kind != has_sentence) continue;
      keep.insert(e->dst);
      for (const auto* f : g.out_edges(e->dst))
        if (f->kind == has_entity) keep.insert(f->dst);
    }
  }
  property_graph out;
  for (const auto& n : g.nodes())
    if (keep.count(n.id)) out.add_node(n);
  for (const auto& e : g.edges())
    if (keep.count(e.src) && keep.count(e.dst)) out.add_edge(e.kind, e.src, e.dst, e.id);
  return out;
}

struct triple_filter {
  std::optional<std::string> head_type;
  std::optional<std::string> relation;
  std::optional<std::string> tail_type;
};

struct triple {
  node head;
  std::string relation;
  node tail;

  bool operator==(const triple&) const = default;
};

// Relation edges matching every given filter field, ordered by head position (document,
// paragraph, sentence, span), then relation, then tail position.
inline std::vector<triple> query_triples(const property_graph& g, const triple_filter& f = {}) {
  std::vector<const edge*> hits;
  for (const auto& e : g.edges()) {
    if (is_containment(e.kind)) continue;
    const node* h = g.find_node(e.src);
    const node* t = g.find_node(e.dst);
    if (f.relation && e.kind != *f.relation) continue;
    if (f.head_type && h->props.at("entity_type") != *f.head_type) continue;
    if (f.tail_type && t->props.at("entity_type") != *f.tail_type) continue;
    hits.push_back(&e);
  }
  std::stable_sort(hits.begin(), hits.end(), [&](const edge* a, const edge* b) {
    return std::tuple(g.position(a->src), a->kind, g.position(a->dst)) <
           std::tuple(g.position(b->src), b->kind, g.position(b->dst));
  });
  std::vector<triple> out;
  for (const auto* e : hits) out.push_back({*g.find_node(e->src), e->kind, *g.find_node(e->dst)});
  return out;
}

// Invariant check: no dangling edges, containment kinds connect the right node kinds,
// and every sentence/paragraph/entity has exactly one containment parent.
inline std::vector<std::string> check_graph(const property_graph& g) {
  std::vector<std::string> problems;
  std::map<std::string, int> parents;
  for (const auto& e : g.edges()) {
    const node* s = g.find_node(e.src);
    const node* d = g.find_node(e.dst);
    if (!s || !d) {
      problems.push_back("dangling edge " + e.id);
      continue;
    }
    auto expect = [&](node_kind a, node_kind b) {
      if (s->kind != a || d->kind != b) problems.push_back("edge " + e.id + " connects the wrong node kinds");
    };
    if (e.kind == has_paragraph) expect(node_kind::document, node_kind::paragraph);
    else if (e.kind == has_sentence) expect(node_kind::paragraph, node_kind::sentence);
    else if (e.kind == has_entity) expect(node_kind::sentence, node_kind::entity);
    else expect(node_kind::entity, node_kind::entity);
    if (is_containment(e.kind)) parents[e.dst]++;
  }
  for (const auto& n : g.nodes())
    if (n.kind != node_kind::document && parents[n.id] != 1)
      problems.push_back("node " + n.id + " has " + std::to_string(parents[n.id]) + " containment parents");
  return problems;
}

// ---------------------------------------------------------------------------
// Persistence: a `# khub-graph 1 <nodes> <edges>` header, then one record per line,
// `N\t<id>\t<kind>\t<props JSON>` and `E\t<id>\t<kind>\t<src>\t<dst>`.

inline std::string serialize_graph(const property_graph& g) {
  auto check = [](const std::string& field) {
    if (field.find_first_of("\t\n\r") != std::string::npos)
      throw build_error("graph field contains a tab or newline: " + field);
    return field;
  };
  std::string out = "# khub-graph 1 " + std::to_string(g.nodes().size()) + " " + std::to_string(g.edges().size()) + "\n";
  for (const auto& n : g.nodes()) {
    nlohmann::json props = n.props;
    out += "N\t" + check(n.id) + "\t" + std::string(to_string(n.kind)) + "\t" + props.dump() + "\n";
  }
  for (const auto& e : g.edges())
    out += "E\t" + check(e.id) + "\t" + check(e.kind) + "\t" + e.src + "\t" + e.dst + "\n";
  return out;
}

inline property_graph parse_graph(std::string_view text) {
  auto lines = split_lines(text);
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw graph_load_error(0, "missing header");
  auto head = split(lines[0], ' ');
  std::size_t n_nodes = 0, n_edges = 0;
  if (head.size() != 5 || head[0] != "#" || head[1] != "khub-graph" || head[2] != "1" ||
      !parse_int(head[3], n_nodes) || !parse_int(head[4], n_edges))
    throw graph_load_error(0, "bad header");
  property_graph g;
  std::size_t seen_nodes = 0, seen_edges = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto f = split(lines[i], '\t');
    try {
      if (f.size() == 4 && f[0] == "N") {
        if (seen_edges) throw error("node record after edge records");
        auto kind = parse_node_kind(f[2]);
        if (!kind) throw error("unknown node kind " + f[2]);
        auto props = nlohmann::json::parse(f[3]).get<std::map<std::string, std::string>>();
        if (g.find_node(f[1])) throw error("duplicate node " + f[1]);
        g.add_node({f[1], *kind, std::move(props)});
        ++seen_nodes;
      } else if (f.size() == 5 && f[0] == "E") {
        auto before = g.edges().size();
        g.add_edge(f[2], f[3], f[4], f[1]);
        if (g.edges().size() == before) throw error("duplicate edge " + f[1]);
        ++seen_edges;
      } else {
        throw error("malformed record");
      }
    } catch (const graph_load_error&) {
      throw;
    } catch (const std::exception& e) {
      throw graph_load_error(i, e.what());
    }
  }
  if (seen_nodes != n_nodes || seen_edges != n_edges)
    throw graph_load_error(lines.size(), "file truncated: expected " + std::to_string(n_nodes) + " nodes and " +
                                             std::to_string(n_edges) + " edges");
  return g;
}

inline void persist_graph(const property_graph& g, const std::filesystem::path& path) {
  write_file(path, serialize_graph(g));
}

inline property_graph load_graph(const std::filesystem::path& path) { return parse_graph(read_file(path)); }

}  // namespace khub
