#pragma once

// Paragraph retrieval: a pluggable embedder, an exact-scan cosine index and its dump format.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "khub/corpus.hpp"
#include "khub/util.hpp"

namespace khub {

class index_error : public error {
 public:
  using error::error;
};

using embedding = std::vector<double>;

class embedder {
 public:
  virtual ~embedder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dimension() const = 0;
  virtual embedding embed(std::string_view text) const = 0;
};

// Lowercased tokens and token bigrams hashed into D signed buckets, term-frequency
// weighted, L2-normalised. Pure punctuation tokens are skipped.
class hashing_embedder : public embedder {
 public:
  explicit hashing_embedder(std::size_t dim = 256) : dim_(dim) {
    if (dim == 0) throw index_error("embedding dimension must be positive");
  }

  std::string id() const override { return "hashing-tf-v1-d" + std::to_string(dim_); }
  std::size_t dimension() const override { return dim_; }

  embedding embed(std::string_view text) const override {
    embedding v(dim_, 0.0);
    std::vector<std::string> terms;
    auto u = utf8::decode(text);
    for (auto sp : tokenize(u, {0, u.size()})) {
      auto tok = u.substr(sp.start, sp.length());
      if (std::all_of(tok.begin(), tok.end(), [](char32_t c) { return is_punct(c); })) continue;
      terms.push_back(to_lower(utf8::encode(tok)));
    }
    auto add = [&](const std::string& feature) {
      auto h = fnv1a(feature);
      auto sign = fnv1a(feature, 0x9e3779b97f4a7c15ULL) & 1 ? 1.0 : -1.0;
      v[h % dim_] += sign;
    };
    for (std::size_t i = 0; i < terms.size(); ++i) {
      add(terms[i]);
      if (i + 1 < terms.size()) add(terms[i] + " " + terms[i + 1]);
    }
    double norm = 0;
    for (double x : v) norm += x * x;
    if (norm > 0) {
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
    }
    return v;
  }

 private:
  std::size_t dim_;
};

inline double cosine(const embedding& a, const embedding& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

struct retrieval_hit {
  std::string para_id;
  double score = 0;

  bool operator==(const retrieval_hit&) const = default;
};

class vector_index {
 public:
  vector_index() = default;
  vector_index(std::string embedder_id, std::size_t dim) : embedder_id_(std::move(embedder_id)), dim_(dim) {}

  const std::string& embedder_id() const { return embedder_id_; }
  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, embedding>& entries() const { return entries_; }

  // Inserts or replaces.
  void put(const std::string& para_id, embedding v) {
    if (v.size() != dim_) throw index_error("vector for " + para_id + " has dimension " + std::to_string(v.size()) +
                                            ", index has " + std::to_string(dim_));
    entries_[para_id] = std::move(v);
  }

  void merge(const vector_index& other) {
    if (other.embedder_id_ != embedder_id_ || other.dim_ != dim_)
      throw index_error("cannot merge index built by " + other.embedder_id_ + " (D=" + std::to_string(other.dim_) +
                        ") into " + embedder_id_ + " (D=" + std::to_string(dim_) + ")");
    for (const auto& [id, v] : other.entries_) entries_[id] = v;
  }

  bool operator==(const vector_index&) const = default;

 private:
  std::string embedder_id_;
  std::size_t dim_ = 0;
  std::map<std::string, embedding> entries_;
};

inline vector_index index_paragraphs(const corpus& c, const embedder& emb) {
  vector_index idx(emb.id(), emb.dimension());
  for (const auto* p : c.paragraphs()) idx.put(p->para_id, emb.embed(p->text));
  return idx;
}

// Exhaustive scan; descending score, ties by para_id.
inline std::vector<retrieval_hit> top_k(const vector_index& idx, const embedding& query, std::size_t k) {
  if (k == 0) throw index_error("k must be at least 1");
  if (query.size() != idx.dimension() && !idx.empty()) throw index_error("query dimension does not match the index");
  std::vector<retrieval_hit> hits;
  hits.reserve(idx.size());
  for (const auto& [id, v] : idx.entries()) {
    double dot = 0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * query[i];
    hits.push_back({id, std::clamp(dot, -1.0, 1.0)});
  }
  auto better = [](const retrieval_hit& a, const retrieval_hit& b) {
    return a.score != b.score ? a.score > b.score : a.para_id < b.para_id;
  };
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);
  hits.resize(k);
  return hits;
}

inline std::vector<retrieval_hit> top_k(const vector_index& idx, const embedder& emb, std::string_view query,
                                        std::size_t k = 3) {
  if (!idx.empty() && emb.id() != idx.embedder_id())
    throw index_error("index was built by " + idx.embedder_id() + ", query embedder is " + emb.id());
  return top_k(idx, emb.embed(query), k);
}

// Text dump: `khub-index 1 <D> <embedder_id> <count>`, then `<para_id>\t<v_1> ... <v_D>`
// per entry with shortest round-trip decimal values.
inline std::string serialize_index(const vector_index& idx) {
  std::string out = "khub-index 1 " + std::to_string(idx.dimension()) + " " + idx.embedder_id() + " " +
                    std::to_string(idx.size()) + "\n";
  char buf[32];
  for (const auto& [id, v] : idx.entries()) {
    out += id;
    out += '\t';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ' ';
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v[i]);
      out.append(buf, p);
    }
    out += '\n';
  }
  return out;
}

inline vector_index parse_index(std::string_view text) {
  auto lines = split_lines(text);
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw index_error("index file is empty");
  auto head = split(lines[0], ' ');
  std::size_t dim = 0, count = 0;
  if (head.size() != 5 || head[0] != "khub-index" || head[1] != "1" || !parse_int(head[2], dim) ||
      !parse_int(head[4], count) || dim == 0)
    throw index_error("bad index header");
  vector_index idx(head[3], dim);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto tab = lines[i].find('\t');
    if (tab == std::string::npos) throw index_error("index record " + std::to_string(i) + " is malformed");
    auto values = split(std::string_view(lines[i]).substr(tab + 1), ' ');
    if (values.size() != dim) throw index_error("index record " + std::to_string(i) + " has the wrong dimension");
    embedding v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      auto [p, ec] = std::from_chars(values[j].data(), values[j].data() + values[j].size(), v[j]);
      if (ec != std::errc{} || p != values[j].data() + values[j].size())
        throw index_error("index record " + std::to_string(i) + " has a bad number");
    }
    idx.put(lines[i].substr(0, tab), std::move(v));
  }
  if (idx.size() != count) throw index_error("index file truncated: expected " + std::to_string(count) + " entries");
  return idx;
}

inline void persist_index(const vector_index& idx, const std::filesystem::path& path) {
  write_file(path, serialize_index(idx));
}

inline vector_index load_index(const std::filesystem::path& path) { return parse_index(read_file(path)); }

}  // namespace khub
