#pragma once

// Synthetic annotated corpora for the learning tests. Sentences are assembled word by
// word so gold character spans are known exactly, then run through the normal
// ingestion path.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "khub/annotation.hpp"
#include "khub/corpus.hpp"
#include "khub/ontology.hpp"

namespace khub::fixtures {

struct planned_entity {
  std::size_t first_word = 0;
  std::size_t n_words = 1;
  std::string type;
};

struct planned_relation {
  std::size_t head = 0;  // index into entities
  std::size_t tail = 0;
  std::string type;
};

struct planned_sentence {
  std::vector<std::string> words;  // the final "." is added by the builder
  std::vector<planned_entity> entities;
  std::vector<planned_relation> relations;
};

struct annotated_corpus {
  corpus docs;
  std::vector<annotation_set> gold;
};

// One paragraph per `per_paragraph` sentences, one document per `per_document` paragraphs.
inline annotated_corpus assemble(const std::vector<planned_sentence>& sentences, const std::string& doc_prefix,
                                 std::size_t per_paragraph = 3, std::size_t per_document = 10) {
  annotated_corpus out;
  heuristic_tagger tagger;
  std::size_t s = 0, doc_no = 0;
  while (s < sentences.size()) {
    document doc;
    doc.doc_id = doc_prefix + std::to_string(++doc_no);
    annotation_set gold;
    gold.doc_id = doc.doc_id;
    for (std::size_t p = 0; p < per_document && s < sentences.size(); ++p) {
      std::string para_id = doc.doc_id + ".p" + std::to_string(p);
      std::string text;
      for (std::size_t k = 0; k < per_paragraph && s < sentences.size(); ++k, ++s) {
        const auto& plan = sentences[s];
        if (!text.empty()) text += ' ';
        std::vector<std::size_t> starts;
        for (std::size_t w = 0; w < plan.words.size(); ++w) {
          if (w) text += ' ';
          starts.push_back(text.size());
          text += plan.words[w];
        }
        std::vector<std::string> ids;
        for (const auto& e : plan.entities) {
          std::size_t last = e.first_word + e.n_words - 1;
          text_span span{starts[e.first_word], starts[last] + plan.words[last].size()};
          ids.push_back(gold.next_entity_id());
          gold.entities.push_back({ids.back(), e.type, para_id, span, text.substr(span.start, span.length()),
                                   provenance::human});
        }
        for (const auto& r : plan.relations)
          gold.relations.push_back({gold.next_relation_id(), r.type, ids[r.head], ids[r.tail], provenance::human});
        text += " .";
      }
      doc.paragraphs.push_back(build_paragraph(para_id, text, tagger));
    }
    out.docs.add(doc);
    out.gold.push_back(std::move(gold));
  }
  return out;
}

inline const ontology_schema& synthetic_schema() {
  static const ontology_schema schema = load_schema(
      "entities: [MATERIAL, VALUE]\n"
      "rules:\n"
      "  - [MATERIAL, causes, VALUE]\n"
      "  - [VALUE, causes, MATERIAL]\n"
      "  - [MATERIAL, causes, MATERIAL]\n"
      "  - [VALUE, causes, VALUE]\n");
  return schema;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "sample", "was", "measured", "under", "ambient", "conditions", "with", "a", "new", "method",
      "and", "then", "heated", "slowly", "in", "air", "for", "several", "hours", "after",
      "mixing", "the", "powder", "we", "observed", "that", "film", "grew", "on", "substrate"};
  return words;
}

// Entities are recognisable by shape alone: MATERIAL looks like "Xxdd", VALUE is a
// four-digit number. A relation "causes" holds from the first to the second entity
// exactly when the token "causes" sits between them.
inline std::vector<planned_sentence> shape_sentences(std::mt19937& rng, std::size_t n) {
  static const std::string upper = "ABCDEFGHKLMNPRSTZ";
  static const std::string lower = "abdeilnoru";
  const auto& fill = filler_words();
  auto pick = [&](std::size_t k) { return std::uniform_int_distribution<std::size_t>(0, k - 1)(rng); };
  auto entity = [&](const std::string& type) {
    if (type == "VALUE") return std::to_string(1000 + pick(9000));
    std::string w;
    w += upper[pick(upper.size())];
    w += lower[pick(lower.size())];
    w += std::to_string(10 + pick(90));
    return w;
  };
  std::vector<planned_sentence> out;
  static const std::vector<std::string> openers = {"The", "This", "Each", "Our"};
  for (std::size_t i = 0; i < n; ++i) {
    planned_sentence s;
    s.words.push_back(openers[pick(openers.size())]);
    auto fillers = [&](std::size_t lo, std::size_t hi) {
      std::size_t k = lo + pick(hi - lo + 1);
      for (std::size_t j = 0; j < k; ++j) s.words.push_back(fill[pick(fill.size())]);
    };
    std::string t1 = pick(2) ? "MATERIAL" : "VALUE";
    std::string t2 = pick(2) ? "MATERIAL" : "VALUE";
    auto mode = pick(4);  // 0,1: trigger between; 2: trigger outside; 3: no trigger
    fillers(0, 3);
    if (mode == 2 && pick(2)) s.words.push_back("causes");
    s.entities.push_back({s.words.size(), 1, t1});
    s.words.push_back(entity(t1));
    fillers(0, 2);
    if (mode <= 1) {
      s.words.push_back("causes");
      fillers(0, 2);
    }
    s.entities.push_back({s.words.size(), 1, t2});
    s.words.push_back(entity(t2));
    fillers(1, 3);
    if (mode == 2 && s.words.back() != "causes" && std::count(s.words.begin(), s.words.end(), "causes") == 0)
      s.words.push_back("causes");
    if (mode <= 1) s.relations.push_back({0, 1, "causes"});
    out.push_back(std::move(s));
  }
  return out;
}

// A lexical-entity domain: entity words are drawn from a power-law pool shared by all
// documents, with no shape signal, so held-out recall grows with training coverage.
inline std::vector<planned_sentence> lexical_sentences(std::mt19937& rng, std::size_t n, std::size_t pool_size = 1500,
                                                       double exponent = 0.0) {
  static const std::string consonants = "bdfgklmnprstvz";
  static const std::string vowels = "aeiou";
  std::vector<std::string> pool;
  std::mt19937 pool_rng(4242);  // the pool itself is fixed
  while (pool.size() < pool_size) {
    std::string w;
    for (int k = 0; k < 3; ++k) {
      w += consonants[pool_rng() % consonants.size()];
      w += vowels[pool_rng() % vowels.size()];
    }
    if (std::find(pool.begin(), pool.end(), w) == pool.end()) pool.push_back(w);
  }
  std::vector<double> weights;
  for (std::size_t r = 0; r < pool.size(); ++r) weights.push_back(std::pow(static_cast<double>(r + 1), -exponent));
  std::discrete_distribution<std::size_t> draw(weights.begin(), weights.end());
  const auto& fill = filler_words();
  auto pick = [&](std::size_t k) { return std::uniform_int_distribution<std::size_t>(0, k - 1)(rng); };
  std::vector<planned_sentence> out;
  for (std::size_t i = 0; i < n; ++i) {
    planned_sentence s;
    s.words.push_back("The");
    std::size_t k = 4 + pick(8);
    for (std::size_t j = 0; j < k; ++j) {
      if (pick(3) == 0) {
        auto r = draw(rng);
        s.entities.push_back({s.words.size(), 1, r % 2 ? "VALUE" : "MATERIAL"});
        s.words.push_back(pool[r]);
      } else {
        s.words.push_back(fill[pick(fill.size())]);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace khub::fixtures
