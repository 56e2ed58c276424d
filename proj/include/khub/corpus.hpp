#pragma once

// Canonical corpus model: Document -> Paragraph -> Sentence -> Token, with offsets in
// Unicode scalar values relative to the paragraph text. Ingestion of TEI-like XML and
// plain text, rule-based sentence splitting, tokenisation and a pluggable POS tagger.

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "khub/util.hpp"
#include "khub/xml.hpp"

namespace khub {

class ingest_error : public error {
 public:
  ingest_error(const std::string& what, std::optional<std::size_t> byte_pos = std::nullopt)
      : error(byte_pos ? what + " (byte " + std::to_string(*byte_pos) + ")" : what), byte_pos_(byte_pos) {}
  std::optional<std::size_t> byte_pos() const { return byte_pos_; }

 private:
  std::optional<std::size_t> byte_pos_;
};

enum class pos_tag { NOUN, PROPN, VERB, ADJ, ADV, PRON, DET, ADP, NUM, CONJ, PUNCT, X };

inline constexpr std::array<std::string_view, 12> pos_tag_names = {
    "NOUN", "PROPN", "VERB", "ADJ", "ADV", "PRON", "DET", "ADP", "NUM", "CONJ", "PUNCT", "X"};

inline std::string_view to_string(pos_tag t) { return pos_tag_names[static_cast<std::size_t>(t)]; }

inline std::optional<pos_tag> parse_pos_tag(std::string_view s) {
  for (std::size_t i = 0; i < pos_tag_names.size(); ++i)
    if (pos_tag_names[i] == s) return static_cast<pos_tag>(i);
  return std::nullopt;
}

struct token {
  text_span span;
  std::string surface;
  std::optional<pos_tag> pos;

  bool operator==(const token&) const = default;
};

struct sentence {
  std::string sent_id;
  text_span span;
  std::vector<token> tokens;

  bool operator==(const sentence&) const = default;
};

struct paragraph {
  std::string para_id;
  std::string text;
  std::vector<sentence> sentences;
  std::optional<std::string> source_section;

  bool operator==(const paragraph&) const = default;
};

struct document_metadata {
  std::string title;
  std::vector<std::string> authors;
  std::optional<int> year;

  bool operator==(const document_metadata&) const = default;
};

struct document {
  std::string doc_id;
  document_metadata metadata;
  std::vector<paragraph> paragraphs;

  bool operator==(const document&) const = default;
};

enum class source_format { tei_xml, plain_text };

inline std::string_view to_string(source_format f) {
  return f == source_format::tei_xml ? "tei-xml" : "plain-text";
}

inline std::optional<source_format> parse_source_format(std::string_view s) {
  if (s == "tei-xml" || s == "tei" || s == "xml") return source_format::tei_xml;
  if (s == "plain-text" || s == "text" || s == "txt") return source_format::plain_text;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Sentence segmentation

namespace detail {

inline bool is_terminal(char32_t c) { return c == U'.' || c == U'!' || c == U'?'; }

inline bool is_closer(char32_t c) {
  return c == U')' || c == U']' || c == U'}' || c == U'"' || c == U'\'' || c == 0x2019 ||
         c == 0x201D || c == 0xBB;
}

inline bool is_opener(char32_t c) {
  return c == U'(' || c == U'[' || c == U'"' || c == U'\'' || c == 0x2018 || c == 0x201C || c == 0xAB;
}

}  // namespace detail

// Splits after `.`/`!`/`?` (plus trailing closers) when followed by whitespace and an
// uppercase letter or digit. A period directly after a lone capital letter ("J. Smith")
// never splits, nor does a period with digits on both sides.
inline std::vector<text_span> segment_sentences(std::u32string_view text) {
  std::vector<text_span> spans;
  const std::size_t n = text.size();
  std::size_t start = 0;
  while (start < n && is_space(text[start])) ++start;
  std::size_t pos = start;
  while (pos < n) {
    char32_t c = text[pos];
    if (!detail::is_terminal(c)) {
      ++pos;
      continue;
    }
    std::size_t end = pos + 1;
    while (end < n && (detail::is_terminal(text[end]) || detail::is_closer(text[end]))) ++end;
    std::size_t next = end;
    while (next < n && is_space(text[next])) ++next;
    bool boundary = next > end && next < n;
    if (boundary) {
      char32_t nc = text[next];
      if (detail::is_opener(nc) && next + 1 < n) nc = text[next + 1];
      boundary = is_upper(nc) || is_digit(nc);
    }
    if (boundary && c == U'.' && pos > start) {
      char32_t prev = text[pos - 1];
      bool lone_capital = is_upper(prev) && (pos - 1 == start || is_space(text[pos - 2]) ||
                                             is_punct(text[pos - 2]));
      bool inside_number = is_digit(prev) && pos + 1 < n && is_digit(text[pos + 1]);
      if (lone_capital || inside_number) boundary = false;
    }
    if (boundary) {
      spans.push_back({start, end});
      start = next;
    }
    pos = end;
  }
  if (start < n) {
    std::size_t end = n;
    while (end > start && is_space(text[end - 1])) --end;
    if (end > start) spans.push_back({start, end});
  }
  return spans;
}

inline std::vector<text_span> segment_sentences(std::string_view utf8_text) {
  return segment_sentences(std::u32string_view(utf8::decode(utf8_text)));
}

// ---------------------------------------------------------------------------
// Tokenisation

// Whitespace split, then leading and trailing punctuation peeled off one character at a
// time. Inner punctuation (hyphens, decimal points) stays inside the token. Offsets are
// relative to `text`; only the region `within` is tokenised.
inline std::vector<text_span> tokenize(std::u32string_view text, text_span within) {
  std::vector<text_span> out;
  std::size_t i = within.start;
  const std::size_t stop = std::min(within.end, text.size());
  while (i < stop) {
    while (i < stop && is_space(text[i])) ++i;
    if (i >= stop) break;
    std::size_t a = i;
    while (i < stop && !is_space(text[i])) ++i;
    std::size_t b = i;
    while (a < b && is_punct(text[a])) {
      out.push_back({a, a + 1});
      ++a;
    }
    std::vector<text_span> trailing;
    while (b > a && is_punct(text[b - 1])) {
      trailing.push_back({b - 1, b});
      --b;
    }
    if (a < b) out.push_back({a, b});
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
  }
  return out;
}

inline std::vector<text_span> tokenize(std::u32string_view text) {
  return tokenize(text, {0, text.size()});
}

// ---------------------------------------------------------------------------
// POS tagging

class pos_tagger {
 public:
  virtual ~pos_tagger() = default;
  virtual std::vector<pos_tag> tag(std::span<const std::string> tokens) const = 0;
};

// Closed-class lexicon, then suffix and shape rules; anything left is a NOUN.
class heuristic_tagger final : public pos_tagger {
 public:
  std::vector<pos_tag> tag(std::span<const std::string> tokens) const override {
    std::vector<pos_tag> tags;
    tags.reserve(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) tags.push_back(tag_one(tokens[i], i == 0));
    return tags;
  }

  static pos_tag tag_one(const std::string& surface, bool sentence_initial) {
    auto u = utf8::decode(surface);
    if (u.empty()) return pos_tag::X;
    if (std::all_of(u.begin(), u.end(), is_punct)) return pos_tag::PUNCT;
    if (is_number(u)) return pos_tag::NUM;
    auto lower = to_lower(surface);
    if (auto it = lexicon().find(lower); it != lexicon().end()) return it->second;
    auto ends = [&](std::string_view suf) {
      return lower.size() > suf.size() + 1 && lower.compare(lower.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (ends("ly")) return pos_tag::ADV;
    if (ends("ing") || ends("ed")) return pos_tag::VERB;
    if (!sentence_initial && is_upper(u.front())) return pos_tag::PROPN;
    return pos_tag::NOUN;
  }

 private:
  static bool is_number(const std::u32string& u) {
    if (!is_digit(u.front())) return false;
    return std::all_of(u.begin(), u.end(), [](char32_t c) { return is_digit(c) || c == U'.' || c == U','; });
  }

  static const std::unordered_map<std::string, pos_tag>& lexicon() {
    static const std::unordered_map<std::string, pos_tag> lex = [] {
      std::unordered_map<std::string, pos_tag> m;
      auto add = [&m](pos_tag t, std::initializer_list<const char*> words) {
        for (auto w : words) m.emplace(w, t);
      };
      add(pos_tag::DET, {"the", "a", "an", "this", "that", "these", "those", "each", "every", "some",
                         "any", "no", "all", "both", "either", "neither", "another", "such"});
      add(pos_tag::PRON, {"i", "you", "he", "she", "it", "we", "they", "me", "him", "her", "us",
                          "them", "its", "their", "our", "his", "my", "your", "which", "who",
                          "whom", "whose", "what", "itself", "themselves"});
      add(pos_tag::ADP, {"of", "in", "on", "at", "by", "for", "with", "from", "to", "into", "onto",
                         "over", "under", "between", "through", "during", "without", "within",
                         "about", "against", "among", "across", "after", "before", "above",
                         "below", "upon", "via", "per", "than", "towards", "toward"});
      add(pos_tag::CONJ, {"and", "or", "but", "nor", "yet", "whereas", "while", "because",
                          "although", "if", "unless", "since"});
      add(pos_tag::VERB, {"is", "are", "was", "were", "be", "been", "being", "has", "have", "had",
                          "do", "does", "did", "can", "could", "may", "might", "must", "shall",
                          "should", "will", "would", "shows", "show", "causes", "cause"});
      add(pos_tag::ADV, {"not", "also", "very", "however", "thus", "therefore", "here", "there"});
      add(pos_tag::ADJ, {"high", "low", "new", "good", "large", "small", "stable", "higher", "lower"});
      return m;
    }();
    return lex;
  }
};

// ---------------------------------------------------------------------------
// Paragraph construction and ingestion

inline paragraph build_paragraph(std::string para_id, std::string text, const pos_tagger& tagger,
                                 std::optional<std::string> section = std::nullopt) {
  paragraph p;
  p.para_id = std::move(para_id);
  p.text = std::move(text);
  p.source_section = std::move(section);
  auto u = utf8::decode(p.text);
  std::size_t ordinal = 0;
  for (auto sspan : segment_sentences(std::u32string_view(u))) {
    sentence s;
    s.sent_id = p.para_id + ".s" + std::to_string(ordinal++);
    s.span = sspan;
    std::vector<std::string> surfaces;
    for (auto tspan : tokenize(u, sspan)) {
      token t;
      t.span = tspan;
      t.surface = utf8::encode(std::u32string_view(u).substr(tspan.start, tspan.length()));
      surfaces.push_back(t.surface);
      s.tokens.push_back(std::move(t));
    }
    auto tags = tagger.tag(surfaces);
    for (std::size_t i = 0; i < s.tokens.size() && i < tags.size(); ++i) s.tokens[i].pos = tags[i];
    p.sentences.push_back(std::move(s));
  }
  return p;
}

struct ingest_options {
  std::uint64_t id_seed = 0;
  const pos_tagger* tagger = nullptr;  // null selects heuristic_tagger
};

namespace detail {

inline std::string normalize_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending = !out.empty();
    } else {
      if (pending) out += ' ';
      pending = false;
      out += c;
    }
  }
  return out;
}

inline bool dropped_in_body(std::string_view local) {
  return local == "figure" || local == "table" || local == "note" || local == "formula" ||
         local == "listBibl" || local == "graphic";
}

// Paragraph text with dropped subtrees removed.
inline void paragraph_text(const xml::element& el, std::string& out) {
  for (const auto& c : el.children) {
    if (auto s = std::get_if<std::string>(&c)) {
      out += *s;
    } else {
      const auto& child = *std::get<std::unique_ptr<xml::element>>(c);
      if (!dropped_in_body(child.local_name())) paragraph_text(child, out);
    }
  }
}

struct tei_paragraph {
  std::string text;
  std::optional<std::string> section;
};

inline void collect_tei_paragraphs(const xml::element& el, std::vector<std::string>& heads,
                                   std::vector<tei_paragraph>& out) {
  bool pushed = false;
  if (el.local_name() == "div") {
    if (auto head = el.first_child("head")) {
      heads.push_back(normalize_ws(head->text()));
      pushed = true;
    }
  }
  el.for_each_child([&](const xml::element& child) {
    auto name = child.local_name();
    if (dropped_in_body(name)) return;
    if (name == "p") {
      std::string raw;
      paragraph_text(child, raw);
      auto text = normalize_ws(raw);
      if (text.empty()) return;
      std::optional<std::string> section;
      if (!heads.empty()) {
        std::string path;
        for (const auto& h : heads) {
          if (h.empty()) continue;
          if (!path.empty()) path += " > ";
          path += h;
        }
        if (!path.empty()) section = path;
      }
      out.push_back({std::move(text), std::move(section)});
    } else if (name != "head") {
      collect_tei_paragraphs(child, heads, out);
    }
  });
  if (pushed) heads.pop_back();
}

template <typename F>
void visit_elements(const xml::element& el, F&& f) {
  f(el);
  el.for_each_child([&](const xml::element& c) { visit_elements(c, f); });
}

inline const xml::element* find_descendant(const xml::element& el, std::string_view local) {
  const xml::element* found = nullptr;
  visit_elements(el, [&](const xml::element& e) {
    if (!found && &e != &el && e.local_name() == local) found = &e;
  });
  return found;
}

inline document_metadata tei_metadata(const xml::element& header) {
  document_metadata md;
  if (auto title_stmt = find_descendant(header, "titleStmt"))
    if (auto title = find_descendant(*title_stmt, "title")) md.title = normalize_ws(title->text());
  visit_elements(header, [&](const xml::element& e) {
    if (e.local_name() != "author") return;
    auto pers = find_descendant(e, "persName");
    if (!pers) return;
    std::string name;
    pers->for_each_child([&](const xml::element& part) {
      if (part.local_name() != "forename" && part.local_name() != "surname") return;
      auto t = normalize_ws(part.text());
      if (t.empty()) return;
      if (!name.empty()) name += ' ';
      name += t;
    });
    if (!name.empty()) md.authors.push_back(std::move(name));
  });
  visit_elements(header, [&](const xml::element& e) {
    if (md.year || e.local_name() != "date") return;
    std::string when = e.attribute("when") ? *e.attribute("when") : normalize_ws(e.text());
    int year = 0;
    if (when.size() >= 4 && parse_int(std::string_view(when).substr(0, 4), year)) md.year = year;
  });
  return md;
}

inline std::string content_id(std::string_view payload, source_format fmt, std::uint64_t seed) {
  auto h = fnv1a("khub-doc:" + std::to_string(seed) + ":" + std::string(to_string(fmt)) + "\n");
  return hex64(fnv1a(payload, h));
}

}  // namespace detail

inline document ingest_structured(std::string_view payload, source_format fmt,
                                  const ingest_options& opts = {}) {
  static const heuristic_tagger default_tagger;
  const pos_tagger& tagger = opts.tagger ? *opts.tagger : default_tagger;
  try {
    (void)utf8::decode(payload);
  } catch (const utf8::decode_error& e) {
    throw ingest_error("payload is not valid UTF-8", e.byte_pos());
  }

  document doc;
  doc.doc_id = detail::content_id(payload, fmt, opts.id_seed);
  std::vector<detail::tei_paragraph> paras;

  if (fmt == source_format::tei_xml) {
    std::unique_ptr<xml::element> root;
    try {
      root = xml::parse(payload);
    } catch (const xml::parse_error& e) {
      throw ingest_error(std::string("malformed XML: ") + e.what(), e.byte_pos());
    }
    if (auto header = detail::find_descendant(*root, "teiHeader")) doc.metadata = detail::tei_metadata(*header);
    const xml::element* body = root->local_name() == "body" ? root.get() : detail::find_descendant(*root, "body");
    if (!body) throw ingest_error("TEI document has no body element");
    std::vector<std::string> heads;
    detail::collect_tei_paragraphs(*body, heads, paras);
  } else {
    std::string normalized;
    normalized.reserve(payload.size());
    for (char c : payload)
      if (c != '\r') normalized += c;
    std::string block;
    auto flush = [&] {
      auto t = trim(block);
      if (!t.empty()) paras.push_back({std::string(t), std::nullopt});
      block.clear();
    };
    for (const auto& line : split(normalized, '\n')) {
      if (trim(line).empty()) {
        flush();
      } else {
        if (!block.empty()) block += '\n';
        block += line;
      }
    }
    flush();
  }

  if (paras.empty()) throw ingest_error("document body is empty");
  for (std::size_t i = 0; i < paras.size(); ++i)
    doc.paragraphs.push_back(build_paragraph(doc.doc_id + ".p" + std::to_string(i), std::move(paras[i].text),
                                             tagger, std::move(paras[i].section)));
  return doc;
}

// ---------------------------------------------------------------------------
// Corpus container

struct sentence_ref {
  const document* doc = nullptr;
  const paragraph* para = nullptr;
  const sentence* sent = nullptr;
};

class corpus {
 public:
  corpus() = default;
  explicit corpus(std::vector<document> docs) {
    for (auto& d : docs) add(std::move(d));
  }

  // Replaces an existing document with the same id (re-upload is idempotent).
  void add(document d) {
    if (auto it = doc_index_.find(d.doc_id); it != doc_index_.end()) {
      docs_[it->second] = std::move(d);
    } else {
      doc_index_.emplace(d.doc_id, docs_.size());
      docs_.push_back(std::move(d));
    }
    reindex();
  }

  const std::vector<document>& documents() const { return docs_; }
  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }

  const document* find_document(std::string_view id) const {
    auto it = doc_index_.find(std::string(id));
    return it == doc_index_.end() ? nullptr : &docs_[it->second];
  }

  const paragraph* find_paragraph(std::string_view id) const {
    auto it = para_index_.find(std::string(id));
    return it == para_index_.end() ? nullptr : &docs_[it->second.first].paragraphs[it->second.second];
  }

  const document* owner_of(std::string_view para_id) const {
    auto it = para_index_.find(std::string(para_id));
    return it == para_index_.end() ? nullptr : &docs_[it->second.first];
  }

  std::vector<const paragraph*> paragraphs() const {
    std::vector<const paragraph*> out;
    for (const auto& d : docs_)
      for (const auto& p : d.paragraphs) out.push_back(&p);
    return out;
  }

  bool operator==(const corpus& o) const { return docs_ == o.docs_; }

 private:
  std::vector<document> docs_;
  std::unordered_map<std::string, std::size_t> doc_index_;
  std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> para_index_;

  void reindex() {
    para_index_.clear();
    for (std::size_t d = 0; d < docs_.size(); ++d)
      for (std::size_t p = 0; p < docs_[d].paragraphs.size(); ++p)
        para_index_.emplace(docs_[d].paragraphs[p].para_id, std::make_pair(d, p));
  }
};

// Sentence containing the whole span, or null when the span crosses a boundary.
inline const sentence* sentence_covering(const paragraph& p, text_span sp) {
  for (const auto& s : p.sentences)
    if (s.span.contains(sp)) return &s;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Corpus file: one JSON object per line per document.

inline nlohmann::json to_json(const document& d) {
  using nlohmann::json;
  json paras = json::array();
  for (const auto& p : d.paragraphs) {
    json sents = json::array();
    for (const auto& s : p.sentences) {
      json toks = json::array();
      for (const auto& t : s.tokens)
        toks.push_back(json::array({t.span.start, t.span.end, t.pos ? json(std::string(to_string(*t.pos))) : json()}));
      sents.push_back({{"sent_id", s.sent_id}, {"span", {s.span.start, s.span.end}}, {"tokens", toks}});
    }
    json pj = {{"para_id", p.para_id}, {"text", p.text}, {"sentences", sents}};
    pj["source_section"] = p.source_section ? json(*p.source_section) : json();
    paras.push_back(std::move(pj));
  }
  json md = {{"title", d.metadata.title}, {"authors", d.metadata.authors}};
  md["year"] = d.metadata.year ? json(*d.metadata.year) : json();
  return {{"doc_id", d.doc_id}, {"metadata", md}, {"paragraphs", paras}};
}

inline document document_from_json(const nlohmann::json& j) {
  document d;
  d.doc_id = j.at("doc_id").get<std::string>();
  const auto& md = j.at("metadata");
  d.metadata.title = md.value("title", "");
  d.metadata.authors = md.value("authors", std::vector<std::string>{});
  if (md.contains("year") && !md["year"].is_null()) d.metadata.year = md["year"].get<int>();
  for (const auto& pj : j.at("paragraphs")) {
    paragraph p;
    p.para_id = pj.at("para_id").get<std::string>();
    p.text = pj.at("text").get<std::string>();
    if (pj.contains("source_section") && !pj["source_section"].is_null())
      p.source_section = pj["source_section"].get<std::string>();
    auto u = utf8::decode(p.text);
    for (const auto& sj : pj.at("sentences")) {
      sentence s;
      s.sent_id = sj.at("sent_id").get<std::string>();
      s.span = {sj.at("span")[0].get<std::size_t>(), sj.at("span")[1].get<std::size_t>()};
      for (const auto& tj : sj.at("tokens")) {
        token t;
        t.span = {tj[0].get<std::size_t>(), tj[1].get<std::size_t>()};
        if (t.span.start >= t.span.end || t.span.end > u.size())
          throw error("token span out of range in paragraph " + p.para_id);
        t.surface = utf8::encode(std::u32string_view(u).substr(t.span.start, t.span.length()));
        if (tj.size() > 2 && !tj[2].is_null()) t.pos = parse_pos_tag(tj[2].get<std::string>());
        s.tokens.push_back(std::move(t));
      }
      p.sentences.push_back(std::move(s));
    }
    d.paragraphs.push_back(std::move(p));
  }
  return d;
}

inline std::string write_corpus(const corpus& c) {
  std::string out;
  for (const auto& d : c.documents()) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

inline corpus read_corpus(std::string_view text) {
  corpus c;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      c.add(document_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw error("corpus record " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return c;
}

}  // namespace khub
