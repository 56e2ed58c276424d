#pragma once

// Auto-annotation. Two modes:
//  - rule-based: gazetteer regular expressions mapped to entity types;
//  - learned: span detector + entity classifier (two-stage NER) and a pairwise relation
//    classifier, all hashed sparse linear models trained by full-batch gradient descent.
// Also micro-F1 evaluation of predicted against gold annotations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/regex.hpp>
#include <json.hpp>

#include "khub/annotation.hpp"
#include "khub/corpus.hpp"
#include "khub/ontology.hpp"
#include "khub/util.hpp"

namespace khub {

class train_error : public error {
 public:
  using error::error;
};

class model_schema_error : public error {
 public:
  using error::error;
};

class eval_error : public error {
 public:
  using error::error;
};

class model_load_error : public error {
 public:
  using error::error;
};

inline constexpr std::string_view span_feature_spec = "khub-span-features-v1";
inline constexpr std::string_view pair_feature_spec = "khub-pair-features-v1";

struct hyperparameters {
  int epochs = 200;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::size_t max_span_len = 8;
  double threshold = 0.5;
  std::uint32_t feature_dim = 1u << 18;

  bool operator==(const hyperparameters&) const = default;
};

// ---------------------------------------------------------------------------
// Rule-based annotation

struct gazetteer_rule {
  std::string pattern;
  std::string entity_type;
  bool case_sensitive = true;
};

// One rule per line: `<type>\t<regex>\t<cs|ci>`. Blank lines and `#` comments skipped.
inline std::vector<gazetteer_rule> parse_gazetteer(std::string_view text, const ontology_schema* schema = nullptr) {
  std::vector<gazetteer_rule> rules;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(text)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    auto f = split(line, '\t');
    auto where = "gazetteer line " + std::to_string(line_no) + ": ";
    if (f.size() != 3 || f[0].empty() || f[1].empty() || (f[2] != "cs" && f[2] != "ci"))
      throw error(where + "expected <type>\\t<regex>\\t<cs|ci>");
    if (schema && !schema->has_type(f[0])) throw schema_error(where + "entity type " + f[0] + " not in ontology");
    try {
      boost::regex probe(f[1]);
    } catch (const boost::regex_error& e) {
      throw error(where + "pattern does not compile: " + e.what());
    }
    rules.push_back({f[1], f[0], f[2] == "cs"});
  }
  return rules;
}

// Every non-overlapping leftmost-longest match of every rule, then cross-rule conflicts
// resolved by (longer span, earlier rule).
inline annotation_set regex_annotate(const document& doc, const std::vector<gazetteer_rule>& rules) {
  std::vector<boost::regex> compiled;
  for (const auto& r : rules)
    compiled.emplace_back(r.pattern, r.case_sensitive ? boost::regex::perl : boost::regex::perl | boost::regex::icase);

  annotation_set out;
  out.doc_id = doc.doc_id;
  for (const auto& p : doc.paragraphs) {
    // byte offset -> scalar offset, defined only at scalar boundaries
    std::vector<std::ptrdiff_t> scalar_at(p.text.size() + 1, -1);
    std::size_t cp = 0;
    for (std::size_t b = 0; b < p.text.size(); ++b)
      if ((static_cast<unsigned char>(p.text[b]) & 0xC0) != 0x80) scalar_at[b] = static_cast<std::ptrdiff_t>(cp++);
    scalar_at[p.text.size()] = static_cast<std::ptrdiff_t>(cp);

    struct hit {
      text_span span;
      std::size_t rule;
    };
    std::vector<hit> hits;
    for (std::size_t ri = 0; ri < compiled.size(); ++ri) {
      auto flags = boost::match_posix | boost::match_not_null;
      for (boost::sregex_iterator it(p.text.begin(), p.text.end(), compiled[ri], flags), end; it != end; ++it) {
        auto b = static_cast<std::size_t>(it->position());
        auto e = b + static_cast<std::size_t>(it->length());
        if (scalar_at[b] < 0 || scalar_at[e] < 0) continue;
        hits.push_back({{static_cast<std::size_t>(scalar_at[b]), static_cast<std::size_t>(scalar_at[e])}, ri});
      }
    }
    std::stable_sort(hits.begin(), hits.end(), [](const hit& a, const hit& b) {
      if (a.span.length() != b.span.length()) return a.span.length() > b.span.length();
      if (a.rule != b.rule) return a.rule < b.rule;
      return a.span.start < b.span.start;
    });
    std::vector<hit> accepted;
    for (const auto& h : hits)
      if (std::none_of(accepted.begin(), accepted.end(), [&](const hit& a) { return a.span.overlaps(h.span); }))
        accepted.push_back(h);
    std::sort(accepted.begin(), accepted.end(), [](const hit& a, const hit& b) { return a.span < b.span; });
    for (const auto& h : accepted)
      out.entities.push_back({out.next_entity_id(), rules[h.rule].entity_type, p.para_id, h.span,
                              utf8::slice(p.text, h.span), provenance::regex});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Span candidates and nested decoding

// All token ranges [i, j) with j - i <= max_len, in lexicographic order.
inline std::vector<text_span> enumerate_spans(std::size_t n_tokens, std::size_t max_len) {
  std::vector<text_span> out;
  for (std::size_t i = 0; i < n_tokens; ++i)
    for (std::size_t j = i + 1; j <= n_tokens && j - i <= max_len; ++j) out.push_back({i, j});
  return out;
}

struct scored_span {
  text_span range;
  double score = 0;
};

// Greedy by descending score (ties: earlier start, then longer). A candidate is kept
// unless it crosses an already kept span; nesting and disjointness are both fine.
inline std::vector<text_span> decode_nested(std::vector<scored_span> scored, double threshold) {
  std::erase_if(scored, [&](const scored_span& s) { return s.score < threshold; });
  std::stable_sort(scored.begin(), scored.end(), [](const scored_span& a, const scored_span& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.range.start != b.range.start) return a.range.start < b.range.start;
    return a.range.end > b.range.end;
  });
  std::vector<text_span> kept;
  for (const auto& s : scored) {
    if (std::find(kept.begin(), kept.end(), s.range) != kept.end()) continue;
    if (std::none_of(kept.begin(), kept.end(), [&](const text_span& k) { return k.crosses(s.range); }))
      kept.push_back(s.range);
  }
  std::sort(kept.begin(), kept.end(), [](const text_span& a, const text_span& b) {
    return a.start != b.start ? a.start < b.start : a.end > b.end;
  });
  return kept;
}

// ---------------------------------------------------------------------------
// Features

// Feature vector norms. Above 1 they act as a larger effective step for the optimiser.
inline constexpr double span_feature_norm = 3.0;
inline constexpr double pair_feature_norm = 2.0;

struct sparse_vector {
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by index, unique

  bool operator==(const sparse_vector&) const = default;
};

// Hashes string features into [0, dim) and scales the counts to a fixed L2 norm, so long
// and short spans contribute on the same scale.
class feature_hasher {
 public:
  feature_hasher(std::uint32_t dim, double norm) : dim_(dim), target_(norm) {}

  void add(std::string_view feature) { raw_.push_back(static_cast<std::uint32_t>(fnv1a(feature) % dim_)); }

  sparse_vector finish() {
    std::sort(raw_.begin(), raw_.end());
    sparse_vector v;
    for (auto idx : raw_) {
      if (!v.entries.empty() && v.entries.back().first == idx) v.entries.back().second += 1.0;
      else v.entries.emplace_back(idx, 1.0);
    }
    double norm = 0;
    for (const auto& [i, x] : v.entries) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0)
      for (auto& e : v.entries) e.second *= target_ / norm;
    raw_.clear();
    return v;
  }

 private:
  std::uint32_t dim_;
  double target_;
  std::vector<std::uint32_t> raw_;
};

// Character shape: X upper, x lower, d digit, other characters kept; runs capped at 4.
inline std::string token_shape(std::string_view surface) {
  std::u32string out;
  char32_t last = 0;
  int run = 0;
  for (char32_t c : utf8::decode(surface)) {
    char32_t m = is_upper(c) ? U'X' : is_lower(c) ? U'x' : is_digit(c) ? U'd' : c;
    if (!is_upper(c) && !is_lower(c) && !is_digit(c) && !is_punct(c) && !is_space(c)) m = U'x';
    run = (m == last) ? run + 1 : 1;
    last = m;
    if (run <= 4) out.push_back(m);
  }
  return utf8::encode(out);
}

inline std::string_view token_class(std::string_view surface) {
  bool upper = false, lower = false, digit = false, punct = false, other = false;
  auto u = utf8::decode(surface);
  for (char32_t c : u) {
    if (is_upper(c)) upper = true;
    else if (is_lower(c)) lower = true;
    else if (is_digit(c)) digit = true;
    else if (is_punct(c)) punct = true;
    else other = true;
  }
  bool alpha = upper || lower;
  if (alpha && digit) return "mixed-alnum";
  if (digit && !alpha) return punct ? "numeric" : "digits";
  if (!alpha && punct && !other) return "punct";
  if (upper && !lower) return "upper";
  if (lower && !upper) return (other || punct) ? "lower-mixed" : "lower";
  if (upper && lower) return is_upper(u.front()) && std::none_of(u.begin() + 1, u.end(), is_upper) ? "title" : "mixed-case";
  return "other";
}

inline std::string_view length_bucket(std::size_t n) {
  static constexpr std::string_view buckets[] = {"0", "1", "2", "3", "4", "5-8", "9+"};
  if (n <= 4) return buckets[n];
  return n <= 8 ? buckets[5] : buckets[6];
}

// Sentence-local features of the token range `range`.
inline sparse_vector featurize_span(const training_record& sent, text_span range, std::uint32_t dim) {
  feature_hasher h(dim, span_feature_norm);
  std::string span_text, pos_seq;
  for (std::size_t k = range.start; k < range.end; ++k) {
    auto lower = to_lower(sent.tokens[k]);
    h.add("w=" + lower);
    h.add("s=" + token_shape(sent.tokens[k]));
    if (!span_text.empty()) span_text += ' ';
    span_text += lower;
    if (!pos_seq.empty()) pos_seq += '_';
    pos_seq += k < sent.pos.size() ? sent.pos[k] : "X";
  }
  const auto& first = sent.tokens[range.start];
  const auto& last = sent.tokens[range.end - 1];
  for (std::size_t k = range.start + 1; k < range.end; ++k)
    h.add("ib=" + token_shape(sent.tokens[k - 1]) + "|" + token_shape(sent.tokens[k]));
  h.add("span=" + span_text);
  h.add("first=" + to_lower(first));
  h.add("last=" + to_lower(last));
  h.add("fs=" + token_shape(first));
  h.add("ls=" + token_shape(last));
  h.add(std::string("fc=") + std::string(token_class(first)));
  h.add(std::string("lcl=") + std::string(token_class(last)));
  const std::string len(length_bucket(range.length()));
  h.add("len=" + len);
  h.add("fs|ls=" + token_shape(first) + "|" + token_shape(last));
  h.add("fs|len=" + token_shape(first) + "|" + len);
  h.add("ls|len=" + token_shape(last) + "|" + len);
  h.add("pos=" + pos_seq);
  if (range.start == 0) {
    h.add("lc=<BOS>");
  } else {
    h.add("lc=" + to_lower(sent.tokens[range.start - 1]));
    h.add("lcs=" + token_shape(sent.tokens[range.start - 1]));
  }
  if (range.end >= sent.tokens.size()) {
    h.add("rc=<EOS>");
  } else {
    h.add("rc=" + to_lower(sent.tokens[range.end]));
    h.add("rcs=" + token_shape(sent.tokens[range.end]));
  }
  return h.finish();
}

inline std::string_view distance_bucket(std::size_t n) {
  static constexpr std::string_view buckets[] = {"0", "1", "2", "3", "4-5", "6-10", "11+"};
  if (n <= 3) return buckets[n];
  if (n <= 5) return buckets[4];
  return n <= 10 ? buckets[5] : buckets[6];
}

// Ordered pair (head, tail) of spans in one sentence with their entity types.
inline sparse_vector featurize_pair(const training_record& sent, text_span head, std::string_view head_type,
                                    text_span tail, std::string_view tail_type, std::uint32_t dim) {
  feature_hasher h(dim, pair_feature_norm);
  auto surface = [&](text_span r) {
    std::string s;
    for (std::size_t k = r.start; k < r.end; ++k) {
      if (!s.empty()) s += ' ';
      s += to_lower(sent.tokens[k]);
    }
    return s;
  };
  std::string ht(head_type), tt(tail_type);
  std::string dir;
  text_span between{0, 0};
  if (head.end <= tail.start) {
    dir = "fwd";
    between = {head.end, tail.start};
  } else if (tail.end <= head.start) {
    dir = "bwd";
    between = {tail.end, head.start};
  } else {
    dir = "ovl";
  }
  h.add("ht=" + ht);
  h.add("tt=" + tt);
  h.add("htt=" + ht + "|" + tt);
  h.add("hw=" + surface(head));
  h.add("tw=" + surface(tail));
  h.add("dir=" + dir);
  h.add("htd=" + ht + "|" + tt + "|" + dir);
  h.add(std::string("dist=") + std::string(distance_bucket(between.length())));
  if (between.length() == 0) h.add("nb|" + dir);
  for (std::size_t k = between.start; k < between.end; ++k) {
    auto lower = to_lower(sent.tokens[k]);
    h.add("btw=" + lower);
    h.add("btwd=" + lower + "|" + dir);
  }
  return h.finish();
}

// ---------------------------------------------------------------------------
// Linear models and deterministic full-batch training

inline double dot(const std::vector<double>& w, const sparse_vector& x) {
  double s = 0;
  for (const auto& [i, v] : x.entries) s += w[i] * v;
  return s;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  double e = std::exp(z);
  return e / (1.0 + e);
}

struct binary_logistic {
  std::vector<double> weights;
  double bias = 0;

  double score(const sparse_vector& x) const { return sigmoid(dot(weights, x) + bias); }
  bool operator==(const binary_logistic&) const = default;
};

struct multiclass_logistic {
  std::vector<std::string> classes;
  std::vector<std::vector<double>> weights;  // per class
  std::vector<double> biases;

  std::vector<double> logits(const sparse_vector& x) const {
    std::vector<double> z(classes.size());
    for (std::size_t c = 0; c < classes.size(); ++c) z[c] = dot(weights[c], x) + biases[c];
    return z;
  }

  std::size_t argmax(const sparse_vector& x) const {
    auto z = logits(x);
    return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  bool operator==(const multiclass_logistic&) const = default;
};

struct training_curve {
  std::vector<double> loss;  // regularised training loss before each update, plus final
};

namespace detail {

// f(theta, grad) returns the loss and, when grad is non-null, writes the gradient.
using objective = std::function<double(const std::vector<double>&, std::vector<double>*)>;

// Deterministic full-batch descent from the given start. Each epoch takes one step along
// the gradient scaled per coordinate by the accumulated squared gradients (AdaGrad), with
// base step `learning_rate`; the step is halved until the loss does not increase, so the
// recorded loss curve is non-increasing. Rare features therefore move as fast as common
// ones, which plain descent on a mean loss cannot manage in a few hundred epochs.
inline void minimise(std::vector<double>& theta, const objective& f, const hyperparameters& hp,
                     training_curve* curve) {
  const std::size_t n = theta.size();
  std::vector<double> grad(n), accum(n, 0.0), cand(n), cand_grad(n);
  double loss = f(theta, &grad);
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    if (curve) curve->loss.push_back(loss);
    for (std::size_t i = 0; i < n; ++i) accum[i] += grad[i] * grad[i];
    bool moved = false;
    double step = hp.learning_rate;
    for (int attempt = 0; attempt < 40 && !moved; ++attempt, step *= 0.5) {
      for (std::size_t i = 0; i < n; ++i)
        cand[i] = accum[i] > 0 ? theta[i] - step * grad[i] / std::sqrt(accum[i]) : theta[i];
      double cand_loss = f(cand, &cand_grad);
      if (cand_loss <= loss) {
        theta.swap(cand);
        grad.swap(cand_grad);
        loss = cand_loss;
        moved = true;
      }
    }
    if (!moved) {  // no descent direction left at machine precision
      if (curve)
        for (int rest = epoch + 1; rest < hp.epochs; ++rest) curve->loss.push_back(loss);
      break;
    }
  }
  if (curve) curve->loss.push_back(loss);
}

inline double logistic_loss(double margin) {
  return margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

// Class-balanced mean logistic loss + (l2/2)|w|^2 from all-zero weights. Each class carries
// half the total weight, so the rare positive class is not drowned by negatives. The
// parameter vector is the weights followed by the bias.
inline binary_logistic fit_binary(const std::vector<sparse_vector>& xs, const std::vector<int>& ys,
                                  const hyperparameters& hp, training_curve* curve = nullptr) {
  const std::size_t dim = hp.feature_dim;
  const double n = static_cast<double>(xs.size());
  const double n_pos = static_cast<double>(std::count(ys.begin(), ys.end(), 1));
  const double n_neg = n - n_pos;
  const double w_pos = n_pos > 0 && n_neg > 0 ? n / (2 * n_pos) : 1.0;
  const double w_neg = n_pos > 0 && n_neg > 0 ? n / (2 * n_neg) : 1.0;
  auto f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
    const double bias = theta[dim];
    double loss = 0;
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      double z = bias;
      for (const auto& [i, v] : xs[k].entries) z += theta[i] * v;
      double cw = ys[k] ? w_pos : w_neg;
      loss += cw * logistic_loss(ys[k] ? z : -z);
      if (grad) {
        double r = cw * (sigmoid(z) - ys[k]) / n;
        for (const auto& [i, v] : xs[k].entries) (*grad)[i] += r * v;
        (*grad)[dim] += r;
      }
    }
    loss /= n;
    for (std::size_t i = 0; i < dim; ++i) {
      loss += 0.5 * hp.l2 * theta[i] * theta[i];
      if (grad) (*grad)[i] += hp.l2 * theta[i];
    }
    return loss;
  };
  std::vector<double> theta(dim + 1, 0.0);
  if (!xs.empty()) minimise(theta, f, hp, curve);
  binary_logistic m;
  m.bias = theta[dim];
  theta.resize(dim);
  m.weights = std::move(theta);
  return m;
}

// Softmax regression with the same optimiser. Parameters: per-class weight blocks, then
// the K biases.
inline multiclass_logistic fit_softmax(const std::vector<sparse_vector>& xs, const std::vector<std::size_t>& ys,
                                       std::vector<std::string> classes, const hyperparameters& hp,
                                       training_curve* curve = nullptr) {
  const std::size_t dim = hp.feature_dim;
  const std::size_t kc = classes.size();
  const double n = static_cast<double>(xs.size());
  auto f = [&](const std::vector<double>& theta, std::vector<double>* grad) {
    double loss = 0;
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    std::vector<double> z(kc);
    for (std::size_t k = 0; k < xs.size(); ++k) {
      for (std::size_t c = 0; c < kc; ++c) {
        z[c] = theta[kc * dim + c];
        for (const auto& [i, v] : xs[k].entries) z[c] += theta[c * dim + i] * v;
      }
      double mx = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double v : z) sum += std::exp(v - mx);
      loss += mx + std::log(sum) - z[ys[k]];
      if (grad)
        for (std::size_t c = 0; c < kc; ++c) {
          double r = (std::exp(z[c] - mx) / sum - (ys[k] == c ? 1.0 : 0.0)) / n;
          if (r == 0) continue;
          for (const auto& [i, v] : xs[k].entries) (*grad)[c * dim + i] += r * v;
          (*grad)[kc * dim + c] += r;
        }
    }
    loss /= n;
    for (std::size_t i = 0; i < kc * dim; ++i) {
      loss += 0.5 * hp.l2 * theta[i] * theta[i];
      if (grad) (*grad)[i] += hp.l2 * theta[i];
    }
    return loss;
  };
  std::vector<double> theta(kc * dim + kc, 0.0);
  if (!xs.empty()) minimise(theta, f, hp, curve);
  multiclass_logistic m;
  m.classes = std::move(classes);
  for (std::size_t c = 0; c < kc; ++c) {
    m.weights.emplace_back(theta.begin() + static_cast<std::ptrdiff_t>(c * dim),
                           theta.begin() + static_cast<std::ptrdiff_t>((c + 1) * dim));
    m.biases.push_back(theta[kc * dim + c]);
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// NER: span detector + entity classifier

struct ner_model {
  std::string feature_spec = std::string(span_feature_spec);
  hyperparameters hyper;
  binary_logistic span_detector;
  multiclass_logistic entity_classifier;  // one-vs-rest: classes == type_list
  std::vector<std::string> type_list;

  bool operator==(const ner_model&) const = default;
};

// Label 1 iff the candidate equals a gold span of any type.
inline binary_logistic train_span_detector(const std::vector<training_record>& records, const hyperparameters& hp,
                                           training_curve* curve = nullptr) {
  std::vector<sparse_vector> xs;
  std::vector<int> ys;
  bool any_positive = false;
  for (const auto& r : records) {
    std::set<text_span> gold;
    for (const auto& g : r.spans) gold.insert({g.begin, g.end});
    for (auto c : enumerate_spans(r.tokens.size(), hp.max_span_len)) {
      xs.push_back(featurize_span(r, c, hp.feature_dim));
      int y = gold.count(c) ? 1 : 0;
      any_positive |= y == 1;
      ys.push_back(y);
    }
  }
  if (!any_positive) throw train_error("span detector needs at least one gold span");
  return detail::fit_binary(xs, ys, hp, curve);
}

struct entity_classifier_result {
  multiclass_logistic classifier;
  std::vector<std::string> warnings;
};

// One-vs-rest logistic regression over the features of gold spans.
inline entity_classifier_result train_entity_classifier(const std::vector<training_record>& records,
                                                        const hyperparameters& hp) {
  std::set<std::string> type_set;
  for (const auto& r : records)
    for (const auto& g : r.spans) type_set.insert(g.type);
  if (type_set.empty()) throw train_error("entity classifier needs at least one gold span");
  entity_classifier_result out;
  if (type_set.size() == 1)
    out.warnings.push_back("only one entity type (" + *type_set.begin() + ") in training data; classifier is degenerate");
  std::vector<std::string> types(type_set.begin(), type_set.end());
  std::vector<sparse_vector> xs;
  std::vector<std::string> labels;
  for (const auto& r : records)
    for (const auto& g : r.spans) {
      xs.push_back(featurize_span(r, {g.begin, g.end}, hp.feature_dim));
      labels.push_back(g.type);
    }
  auto& m = out.classifier;
  m.classes = types;
  for (const auto& t : types) {
    std::vector<int> ys;
    for (const auto& l : labels) ys.push_back(l == t ? 1 : 0);
    auto bin = detail::fit_binary(xs, ys, hp);
    m.weights.push_back(std::move(bin.weights));
    m.biases.push_back(bin.bias);
  }
  return out;
}

struct ner_training_result {
  ner_model model;
  training_curve detector_curve;
  std::vector<std::string> warnings;
};

inline ner_training_result train_ner(const std::vector<training_record>& records, const hyperparameters& hp = {}) {
  ner_training_result out;
  out.model.hyper = hp;
  out.model.span_detector = train_span_detector(records, hp, &out.detector_curve);
  auto cls = train_entity_classifier(records, hp);
  out.model.entity_classifier = std::move(cls.classifier);
  out.model.type_list = out.model.entity_classifier.classes;
  out.warnings = std::move(cls.warnings);
  return out;
}

struct predicted_span {
  text_span range;
  std::string type;
  double score = 0;

  bool operator==(const predicted_span&) const = default;
};

// Scorer interface for NER. The linear model below is the shipped implementation; any
// other scorer (an encoder behind a service, say) drives the same decoding pipeline.
class ner_scorer {
 public:
  virtual ~ner_scorer() = default;
  virtual double span_score(const training_record& sent, text_span range) const = 0;  // in (0,1)
  virtual std::string span_type(const training_record& sent, text_span range) const = 0;
  virtual const std::vector<std::string>& types() const = 0;
  virtual std::size_t max_span_len() const = 0;
  virtual double threshold() const = 0;
};

class linear_ner_scorer : public ner_scorer {
 public:
  explicit linear_ner_scorer(const ner_model& m) : m_(m) {}

  double span_score(const training_record& sent, text_span range) const override {
    return m_.span_detector.score(featurize_span(sent, range, m_.hyper.feature_dim));
  }
  std::string span_type(const training_record& sent, text_span range) const override {
    return m_.entity_classifier.classes[m_.entity_classifier.argmax(featurize_span(sent, range, m_.hyper.feature_dim))];
  }
  const std::vector<std::string>& types() const override { return m_.type_list; }
  std::size_t max_span_len() const override { return m_.hyper.max_span_len; }
  double threshold() const override { return m_.hyper.threshold; }

 private:
  const ner_model& m_;
};

// Enumerate -> score -> nested decode -> classify, for one sentence.
inline std::vector<predicted_span> predict_spans(const ner_scorer& scorer, const training_record& sent) {
  std::vector<scored_span> scored;
  for (auto c : enumerate_spans(sent.tokens.size(), scorer.max_span_len()))
    scored.push_back({c, scorer.span_score(sent, c)});
  std::vector<predicted_span> out;
  for (auto r : decode_nested(scored, scorer.threshold())) {
    auto it = std::find_if(scored.begin(), scored.end(), [&](const scored_span& c) { return c.range == r; });
    out.push_back({r, scorer.span_type(sent, r), it->score});
  }
  return out;
}

inline std::vector<predicted_span> predict_spans(const ner_model& m, const training_record& sent) {
  return predict_spans(linear_ner_scorer(m), sent);
}

// ---------------------------------------------------------------------------
// Relation classification

struct rc_model {
  std::string feature_spec = std::string(pair_feature_spec);
  hyperparameters hyper;
  multiclass_logistic classifier;  // classes: NONE first, then relations sorted

  const std::vector<std::string>& relation_list() const { return classifier.classes; }
  bool operator==(const rc_model&) const = default;
};

struct rc_training_result {
  rc_model model;
  training_curve curve;
};

inline rc_training_result train_rc(const std::vector<training_record>& records, const ontology_schema& schema,
                                   const hyperparameters& hp = {}) {
  std::vector<std::string> classes{std::string(no_relation)};
  for (const auto& r : schema.relation_names()) classes.push_back(r);
  std::map<std::string, std::size_t> class_index;
  for (std::size_t i = 0; i < classes.size(); ++i) class_index[classes[i]] = i;

  std::vector<sparse_vector> xs;
  std::vector<std::size_t> ys;
  bool any_relation = false;
  for (const auto& r : records)
    for (const auto& p : r.pairs) {
      auto it = class_index.find(p.label);
      if (it == class_index.end()) throw train_error("relation " + p.label + " is not in the ontology");
      const auto& h = r.spans[p.head];
      const auto& t = r.spans[p.tail];
      xs.push_back(featurize_pair(r, {h.begin, h.end}, h.type, {t.begin, t.end}, t.type, hp.feature_dim));
      ys.push_back(it->second);
      any_relation |= it->second != 0;
    }
  if (!any_relation) throw train_error("relation classifier needs at least one related pair");
  rc_training_result out;
  out.model.hyper = hp;
  out.model.classifier = detail::fit_softmax(xs, ys, classes, hp, &out.curve);
  return out;
}

// Scorer interface for relation classification over ordered pairs.
class rc_scorer {
 public:
  virtual ~rc_scorer() = default;
  virtual std::string relation(const training_record& sent, const predicted_span& head,
                               const predicted_span& tail) const = 0;  // a relation or NONE
  virtual const std::vector<std::string>& relations() const = 0;
};

class linear_rc_scorer : public rc_scorer {
 public:
  explicit linear_rc_scorer(const rc_model& m) : m_(m) {}

  std::string relation(const training_record& sent, const predicted_span& head,
                       const predicted_span& tail) const override {
    auto x = featurize_pair(sent, head.range, head.type, tail.range, tail.type, m_.hyper.feature_dim);
    return m_.classifier.classes[m_.classifier.argmax(x)];
  }
  const std::vector<std::string>& relations() const override { return m_.relation_list(); }

 private:
  const rc_model& m_;
};

// Label for the ordered pair; predictions outside the allowed triples become NONE.
inline std::string predict_relation(const rc_scorer& scorer, const training_record& sent, const predicted_span& head,
                                    const predicted_span& tail, const ontology_schema& schema) {
  auto label = scorer.relation(sent, head, tail);
  if (label == no_relation || !schema.allowed(head.type, label, tail.type)) return std::string(no_relation);
  return label;
}

inline std::string predict_relation(const rc_model& m, const training_record& sent, const predicted_span& head,
                                    const predicted_span& tail, const ontology_schema& schema) {
  return predict_relation(linear_rc_scorer(m), sent, head, tail, schema);
}

// ---------------------------------------------------------------------------
// Applying models to a document

inline void check_scorers(const ner_scorer& ner, const rc_scorer& rc, const ontology_schema& schema) {
  for (const auto& t : ner.types())
    if (!schema.has_type(t)) throw model_schema_error("model entity type " + t + " is not in the ontology");
  auto rels = schema.relation_names();
  for (const auto& r : rc.relations())
    if (r != no_relation && !rels.count(r))
      throw model_schema_error("model relation " + r + " is not in the ontology");
}

inline annotation_set auto_annotate(const document& doc, const ner_scorer& ner, const rc_scorer& rc,
                                    const ontology_schema& schema) {
  check_scorers(ner, rc, schema);
  annotation_set out;
  out.doc_id = doc.doc_id;
  for (const auto& p : doc.paragraphs)
    for (const auto& s : p.sentences) {
      auto rec = make_record(s);
      auto spans = predict_spans(ner, rec);
      std::vector<std::string> ids;
      for (const auto& sp : spans) {
        text_span chars{s.tokens[sp.range.start].span.start, s.tokens[sp.range.end - 1].span.end};
        ids.push_back(out.next_entity_id());
        out.entities.push_back({ids.back(), sp.type, p.para_id, chars, utf8::slice(p.text, chars), provenance::model});
      }
      for (std::size_t i = 0; i < spans.size(); ++i)
        for (std::size_t j = 0; j < spans.size(); ++j) {
          if (i == j) continue;
          auto label = predict_relation(rc, rec, spans[i], spans[j], schema);
          if (label != no_relation)
            out.relations.push_back({out.next_relation_id(), label, ids[i], ids[j], provenance::model});
        }
    }
  return out;
}

inline annotation_set auto_annotate(const document& doc, const ner_model& ner, const rc_model& rc,
                                    const ontology_schema& schema) {
  if (ner.feature_spec != span_feature_spec || rc.feature_spec != pair_feature_spec)
    throw model_schema_error("model feature spec is not supported by this build");
  return auto_annotate(doc, linear_ner_scorer(ner), linear_rc_scorer(rc), schema);
}

// ---------------------------------------------------------------------------
// Evaluation

struct type_scores {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t support = 0;  // gold count
};

struct eval_result {
  double precision = 0;
  double recall = 0;
  double micro_f1 = 0;
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t support = 0;
  std::map<std::string, type_scores> per_type;
};

inline type_scores prf(std::size_t tp, std::size_t predicted, std::size_t gold) {
  type_scores s;
  s.true_positives = tp;
  s.predicted = predicted;
  s.support = gold;
  s.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  s.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

// Exact (span, type) matching, micro-averaged over types. Keys are (location, type).
template <typename Key>
eval_result score_sets(const std::set<std::pair<Key, std::string>>& pred,
                       const std::set<std::pair<Key, std::string>>& gold) {
  std::map<std::string, std::array<std::size_t, 3>> counts;  // tp, pred, gold
  std::size_t tp = 0;
  for (const auto& p : pred) {
    counts[p.second][1]++;
    if (gold.count(p)) {
      ++tp;
      counts[p.second][0]++;
    }
  }
  for (const auto& g : gold) counts[g.second][2]++;
  auto total = prf(tp, pred.size(), gold.size());
  eval_result r;
  r.precision = total.precision;
  r.recall = total.recall;
  r.micro_f1 = total.f1;
  r.true_positives = tp;
  r.predicted = pred.size();
  r.support = gold.size();
  for (const auto& [type, c] : counts) r.per_type[type] = prf(c[0], c[1], c[2]);
  return r;
}

inline eval_result evaluate_micro_f1(const annotation_set& pred, const annotation_set& gold) {
  if (pred.doc_id != gold.doc_id)
    throw eval_error("prediction document " + pred.doc_id + " does not match gold document " + gold.doc_id);
  using key = std::tuple<std::string, std::size_t, std::size_t>;
  std::set<std::pair<key, std::string>> p, g;
  for (const auto& e : pred.entities) p.insert({{e.para_id, e.span.start, e.span.end}, e.type});
  for (const auto& e : gold.entities) g.insert({{e.para_id, e.span.start, e.span.end}, e.type});
  return score_sets(p, g);
}

// Pools several documents into one micro-averaged score.
inline eval_result evaluate_micro_f1(const std::vector<annotation_set>& pred, const std::vector<annotation_set>& gold) {
  if (pred.size() != gold.size()) throw eval_error("prediction and gold document counts differ");
  using key = std::tuple<std::string, std::string, std::size_t, std::size_t>;
  std::set<std::pair<key, std::string>> p, g;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].doc_id != gold[i].doc_id) throw eval_error("document mismatch: " + pred[i].doc_id + " vs " + gold[i].doc_id);
    for (const auto& e : pred[i].entities) p.insert({{pred[i].doc_id, e.para_id, e.span.start, e.span.end}, e.type});
    for (const auto& e : gold[i].entities) g.insert({{gold[i].doc_id, e.para_id, e.span.start, e.span.end}, e.type});
  }
  return score_sets(p, g);
}

// NER micro-F1 over token-level training records (held-out evaluation).
inline eval_result evaluate_records(const ner_model& m, const std::vector<training_record>& records) {
  using key = std::tuple<std::size_t, std::size_t, std::size_t>;
  std::set<std::pair<key, std::string>> p, g;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (const auto& s : predict_spans(m, records[i])) p.insert({{i, s.range.start, s.range.end}, s.type});
    for (const auto& s : records[i].spans) g.insert({{i, s.begin, s.end}, s.type});
  }
  return score_sets(p, g);
}

// Fraction of gold ordered pairs (NONE included) labelled correctly given gold spans.
inline double pair_accuracy(const rc_model& m, const std::vector<training_record>& records, const ontology_schema& schema) {
  std::size_t total = 0, correct = 0;
  for (const auto& r : records)
    for (const auto& p : r.pairs) {
      const auto& h = r.spans[p.head];
      const auto& t = r.spans[p.tail];
      auto label = predict_relation(m, r, {{h.begin, h.end}, h.type, 1.0}, {{t.begin, t.end}, t.type, 1.0}, schema);
      ++total;
      correct += label == p.label;
    }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// Deterministic 80/20 split by sentence: every fifth record goes to dev.
inline std::pair<std::vector<training_record>, std::vector<training_record>> split_train_dev(
    const std::vector<training_record>& records) {
  std::pair<std::vector<training_record>, std::vector<training_record>> out;
  for (std::size_t i = 0; i < records.size(); ++i) (i % 5 == 4 ? out.second : out.first).push_back(records[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Model files (JSON). Only non-zero weights are stored.

namespace detail {

inline nlohmann::json sparse_weights(const std::vector<double>& w) {
  auto out = nlohmann::json::array();
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] != 0.0) out.push_back({i, w[i]});
  return out;
}

inline std::vector<double> dense_weights(const nlohmann::json& j, std::uint32_t dim) {
  std::vector<double> w(dim, 0.0);
  for (const auto& e : j) {
    auto i = e.at(0).get<std::size_t>();
    if (i >= dim) throw model_load_error("weight index out of range");
    w[i] = e.at(1).get<double>();
  }
  return w;
}

inline nlohmann::json to_json(const hyperparameters& h) {
  return {{"epochs", h.epochs}, {"learning_rate", h.learning_rate}, {"l2", h.l2},
          {"max_span_len", h.max_span_len}, {"threshold", h.threshold}, {"feature_dim", h.feature_dim}};
}

inline hyperparameters hyper_from_json(const nlohmann::json& j) {
  hyperparameters h;
  h.epochs = j.at("epochs").get<int>();
  h.learning_rate = j.at("learning_rate").get<double>();
  h.l2 = j.at("l2").get<double>();
  h.max_span_len = j.at("max_span_len").get<std::size_t>();
  h.threshold = j.at("threshold").get<double>();
  h.feature_dim = j.at("feature_dim").get<std::uint32_t>();
  if (h.feature_dim == 0 || h.max_span_len == 0 || !(h.threshold > 0 && h.threshold < 1))
    throw model_load_error("invalid hyperparameters in model file");
  return h;
}

inline nlohmann::json to_json(const multiclass_logistic& m) {
  auto w = nlohmann::json::array();
  for (const auto& cw : m.weights) w.push_back(sparse_weights(cw));
  return {{"classes", m.classes}, {"biases", m.biases}, {"weights", w}};
}

inline multiclass_logistic multiclass_from_json(const nlohmann::json& j, std::uint32_t dim) {
  multiclass_logistic m;
  m.classes = j.at("classes").get<std::vector<std::string>>();
  m.biases = j.at("biases").get<std::vector<double>>();
  for (const auto& cw : j.at("weights")) m.weights.push_back(dense_weights(cw, dim));
  if (m.biases.size() != m.classes.size() || m.weights.size() != m.classes.size())
    throw model_load_error("class count mismatch in model file");
  return m;
}

inline nlohmann::json parse_model_json(std::string_view text, std::string_view kind, std::string_view spec) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw model_load_error(std::string("model file does not parse: ") + e.what());
  }
  if (j.value("kind", "") != kind) throw model_load_error("not a " + std::string(kind) + " model file");
  if (j.value("feature_spec", "") != spec)
    throw model_load_error("model feature spec " + j.value("feature_spec", std::string("?")) + " differs from " +
                           std::string(spec));
  return j;
}

}  // namespace detail

inline std::string serialize_model(const ner_model& m) {
  nlohmann::json j = {{"kind", "ner"},
                      {"feature_spec", m.feature_spec},
                      {"hyperparameters", detail::to_json(m.hyper)},
                      {"type_list", m.type_list},
                      {"span_detector", {{"bias", m.span_detector.bias}, {"weights", detail::sparse_weights(m.span_detector.weights)}}},
                      {"entity_classifier", detail::to_json(m.entity_classifier)}};
  return j.dump() + "\n";
}

inline std::string serialize_model(const rc_model& m) {
  nlohmann::json j = {{"kind", "rc"},
                      {"feature_spec", m.feature_spec},
                      {"hyperparameters", detail::to_json(m.hyper)},
                      {"classifier", detail::to_json(m.classifier)}};
  return j.dump() + "\n";
}

inline ner_model load_ner_model(std::string_view text) {
  auto j = detail::parse_model_json(text, "ner", span_feature_spec);
  try {
    ner_model m;
    m.feature_spec = j.at("feature_spec").get<std::string>();
    m.hyper = detail::hyper_from_json(j.at("hyperparameters"));
    m.type_list = j.at("type_list").get<std::vector<std::string>>();
    m.span_detector.bias = j.at("span_detector").at("bias").get<double>();
    m.span_detector.weights = detail::dense_weights(j.at("span_detector").at("weights"), m.hyper.feature_dim);
    m.entity_classifier = detail::multiclass_from_json(j.at("entity_classifier"), m.hyper.feature_dim);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw model_load_error(std::string("malformed NER model: ") + e.what());
  }
}

inline rc_model load_rc_model(std::string_view text) {
  auto j = detail::parse_model_json(text, "rc", pair_feature_spec);
  try {
    rc_model m;
    m.feature_spec = j.at("feature_spec").get<std::string>();
    m.hyper = detail::hyper_from_json(j.at("hyperparameters"));
    m.classifier = detail::multiclass_from_json(j.at("classifier"), m.hyper.feature_dim);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw model_load_error(std::string("malformed RC model: ") + e.what());
  }
}

}  // namespace khub
