#pragma once

// Retrieval-augmented question answering: the three nearest paragraphs are each sent to a
// generation backend with a per-context prompt, then all of them with a summary prompt.
// The answer carries the prompts actually sent and the subgraph of the contexts.

#include <chrono>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "khub/corpus.hpp"
#include "khub/graph.hpp"
#include "khub/retrieval.hpp"
#include "khub/util.hpp"

namespace khub {

inline constexpr std::size_t max_contexts = 3;
inline constexpr std::string_view no_context_message = "No relevant context was found for this question.";

struct generation_params {
  int max_tokens = 256;
  double temperature = 0.0;
};

struct question {
  std::string text;
  std::string project_id;
  std::string model_id = "mock";
  generation_params params;
};

// ---------------------------------------------------------------------------
// Templates

class template_error : public error {
 public:
  using error::error;
};

// A template file starts with `#version <id>`; the rest is the body. Placeholders are
// `{question}` and `{context_1}`..`{context_3}`. Body lines naming a context that was not
// retrieved are dropped.
struct prompt_template {
  std::string version;
  std::string body;
};

inline prompt_template parse_template(std::string_view text) {
  auto nl = text.find('\n');
  auto first = text.substr(0, nl);
  if (!starts_with(first, "#version ") || trim(first.substr(9)).empty())
    throw template_error("template must start with a '#version <id>' line");
  return {std::string(trim(first.substr(9))), nl == std::string_view::npos ? "" : std::string(text.substr(nl + 1))};
}

struct prompt_templates {
  prompt_template per_context;
  prompt_template summary;
};

inline const prompt_templates& default_templates() {
  static const prompt_templates t{
      parse_template("#version qa-per-context-v1\n"
                     "Answer the question using only the context below. If the context does not contain the "
                     "answer, say so.\n"
                     "\n"
                     "Context:\n"
                     "{context_1}\n"
                     "\n"
                     "Question: {question}\n"
                     "Answer:\n"),
      parse_template("#version qa-summary-v1\n"
                     "Write a short answer to the question that summarises what the numbered contexts below say. "
                     "Use only these contexts.\n"
                     "\n"
                     "Context 1: {context_1}\n"
                     "Context 2: {context_2}\n"
                     "Context 3: {context_3}\n"
                     "\n"
                     "Question: {question}\n"
                     "Summary:\n")};
  return t;
}

// Single pass: substituted text is never rescanned, so a paragraph containing "{question}"
// reaches the prompt verbatim.
inline std::string render(const prompt_template& t, std::string_view q, const std::vector<std::string_view>& contexts) {
  std::string out;
  for (auto line : split_lines(t.body)) {
    bool missing = false;
    for (std::size_t i = contexts.size() + 1; i <= max_contexts; ++i)
      if (line.find("{context_" + std::to_string(i) + "}") != std::string::npos) missing = true;
    if (missing) continue;
    std::size_t pos = 0;
    while (pos < line.size()) {
      auto open = line.find('{', pos);
      if (open == std::string::npos) {
        out.append(line, pos);
        break;
      }
      out.append(line, pos, open - pos);
      auto close = line.find('}', open);
      auto name = close == std::string::npos ? std::string() : line.substr(open + 1, close - open - 1);
      if (name == "question") {
        out += q;
        pos = close + 1;
      } else if (starts_with(name, "context_") && name.size() == 9 && name[8] >= '1' &&
                 static_cast<std::size_t>(name[8] - '0') <= contexts.size()) {
        out += contexts[static_cast<std::size_t>(name[8] - '1')];
        pos = close + 1;
      } else {
        out += '{';
        pos = open + 1;
      }
    }
    out += '\n';
  }
  if (!t.body.empty() && t.body.back() != '\n' && !out.empty()) out.pop_back();
  return out;
}

struct built_prompts {
  std::string summary_prompt;
  std::vector<std::string> per_context_prompts;
};

inline built_prompts build_prompts(std::string_view q, const std::vector<std::string_view>& contexts,
                                   const prompt_templates& t = default_templates()) {
  if (contexts.empty() || contexts.size() > max_contexts) throw error("build_prompts needs 1 to 3 contexts");
  built_prompts out;
  for (auto c : contexts) out.per_context_prompts.push_back(render(t.per_context, q, {c}));
  out.summary_prompt = render(t.summary, q, contexts);
  return out;
}

// ---------------------------------------------------------------------------
// Backends

// The prompt is what a real model sees; question and contexts ride along so offline
// backends can answer without parsing the prompt.
struct generation_request {
  std::string prompt;
  std::string model_id;
  generation_params params;
  std::string question;
  std::vector<std::string> contexts;
};

class backend_error : public error {
 public:
  using error::error;
};

class generation_backend {
 public:
  virtual ~generation_backend() = default;
  virtual std::string backend_id() const = 0;
  virtual std::string generate(const generation_request& req) = 0;
};

namespace detail {

inline std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> out;
  auto u = utf8::decode(text);
  for (auto sp : tokenize(u, {0, u.size()})) {
    auto tok = u.substr(sp.start, sp.length());
    if (std::all_of(tok.begin(), tok.end(), [](char32_t c) { return is_punct(c); })) continue;
    out.insert(to_lower(utf8::encode(tok)));
  }
  return out;
}

}  // namespace detail

// Extractive and offline: the context sentence sharing the most distinct words with the
// question (first such sentence on ties, contexts in retrieval order).
class mock_backend : public generation_backend {
 public:
  std::string backend_id() const override { return "mock-extractive-v1"; }

  std::string generate(const generation_request& req) override {
    auto q = detail::content_words(req.question);
    std::string best;
    std::size_t best_overlap = 0;
    bool found = false;
    for (const auto& c : req.contexts) {
      auto u = utf8::decode(c);
      for (auto sp : segment_sentences(std::u32string_view(u))) {
        auto s = utf8::encode(std::u32string_view(u).substr(sp.start, sp.length()));
        auto words = detail::content_words(s);
        std::size_t overlap = 0;
        for (const auto& w : words) overlap += q.count(w);
        if (!found || overlap > best_overlap) {
          best = s;
          best_overlap = overlap;
          found = true;
        }
      }
    }
    return best;
  }
};

// Returns the prompt unchanged.
class echo_backend : public generation_backend {
 public:
  std::string backend_id() const override { return "echo"; }
  std::string generate(const generation_request& req) override { return req.prompt; }
};

// POST {model_id, prompt, max_tokens, temperature} as JSON to `url`, expect {text}. A bearer
// token is read from the environment variable named by `token_env` when set. Connection
// failures and 5xx responses are retried once after a short backoff.
class http_backend : public generation_backend {
 public:
  struct options {
    std::string url;  // http://host:port/path
    std::string token_env = "KHUB_GEN_TOKEN";
    std::chrono::milliseconds timeout{30000};
    int retries = 1;
    std::chrono::milliseconds backoff{250};
  };

  explicit http_backend(options opts) : opts_(std::move(opts)) {
    auto scheme = opts_.url.find("://");
    if (scheme == std::string::npos || opts_.url.substr(0, scheme) != "http")
      throw backend_error("backend url must start with http://");
    auto slash = opts_.url.find('/', scheme + 3);
    origin_ = opts_.url.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : opts_.url.substr(slash);
  }

  std::string backend_id() const override { return "http:" + opts_.url; }

  std::string generate(const generation_request& req) override {
    nlohmann::json body = {{"model_id", req.model_id},
                           {"prompt", req.prompt},
                           {"max_tokens", req.params.max_tokens},
                           {"temperature", req.params.temperature}};
    httplib::Headers headers;
    if (const char* token = std::getenv(opts_.token_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
    std::string last_error;
    for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
      if (attempt) std::this_thread::sleep_for(opts_.backoff * (1 << (attempt - 1)));
      httplib::Client cli(origin_);
      auto secs = opts_.timeout.count() / 1000;
      auto usecs = (opts_.timeout.count() % 1000) * 1000;
      cli.set_connection_timeout(secs, usecs);
      cli.set_read_timeout(secs, usecs);
      auto res = cli.Post(path_, headers, body.dump(), "application/json");
      if (!res) {
        last_error = "connection failed: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "backend returned HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) throw backend_error("backend returned HTTP " + std::to_string(res->status));
      try {
        return nlohmann::json::parse(res->body).at("text").get<std::string>();
      } catch (const nlohmann::json::exception&) {
        throw backend_error("backend response has no text field");
      }
    }
    throw backend_error(last_error);
  }

 private:
  options opts_;
  std::string origin_;
  std::string path_;
};

// ---------------------------------------------------------------------------
// Asking

struct context_answer {
  std::string para_id;
  std::string text;
};

struct prompt_record {
  std::string kind;  // "context" or "summary"
  std::string para_id;  // empty for the summary
  std::string template_version;
  std::string prompt_hash;  // FNV-1a 64 of the prompt, hex
  std::string prompt;
  std::string response;
  std::string error;
};

struct answer {
  std::string question;
  std::string summary;
  std::vector<context_answer> per_context;
  std::vector<retrieval_hit> contexts;
  property_graph subgraph;
  std::vector<prompt_record> prompt_log;
};

class qa_error : public error {
 public:
  qa_error(const std::string& what, answer partial) : error(what), partial_(std::move(partial)) {}
  const answer& partial() const { return partial_; }

 private:
  answer partial_;
};

struct qa_sources {
  const corpus& docs;
  const vector_index& index;
  const embedder& emb;
  const property_graph& graph;
  const prompt_templates& templates = default_templates();
};

inline answer ask(const question& q, const qa_sources& src, generation_backend& backend) {
  if (trim(q.text).empty()) throw qa_error("question text is empty", {});
  answer a;
  a.question = q.text;
  a.contexts = top_k(src.index, src.emb, q.text, max_contexts);
  if (a.contexts.empty()) {
    a.summary = std::string(no_context_message);
    return a;
  }
  std::vector<std::string> ids;
  std::vector<std::string_view> texts;
  for (const auto& h : a.contexts) {
    const paragraph* p = src.docs.find_paragraph(h.para_id);
    if (!p) throw qa_error("index refers to paragraph " + h.para_id + " which is not in the corpus", a);
    ids.push_back(h.para_id);
    texts.push_back(p->text);
  }
  a.subgraph = subgraph_for_paragraphs(src.graph, ids);
  auto prompts = build_prompts(q.text, texts, src.templates);

  auto call = [&](std::string kind, std::string para_id, const prompt_template& t, const std::string& prompt,
                  std::vector<std::string> contexts) {
    prompt_record rec{std::move(kind), std::move(para_id), t.version, hex64(fnv1a(prompt)), prompt, "", ""};
    try {
      rec.response = backend.generate({prompt, q.model_id, q.params, q.text, std::move(contexts)});
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    a.prompt_log.push_back(rec);
    return rec;
  };
  std::string failure;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto rec = call("context", ids[i], src.templates.per_context, prompts.per_context_prompts[i], {std::string(texts[i])});
    if (!rec.error.empty() && failure.empty()) failure = rec.error;
    a.per_context.push_back({ids[i], rec.response});
  }
  auto rec = call("summary", "", src.templates.summary, prompts.summary_prompt,
                  std::vector<std::string>(texts.begin(), texts.end()));
  if (!rec.error.empty() && failure.empty()) failure = rec.error;
  a.summary = rec.response;
  if (!failure.empty()) throw qa_error("generation failed: " + failure, a);
  return a;
}

// ---------------------------------------------------------------------------
// Output

inline std::string format_score(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", s);
  return buf;
}

// Plain-text transcript; byte-stable for a deterministic backend.
inline std::string format_transcript(const answer& a) {
  std::string out = "question: " + a.question + "\n";
  out += "contexts: " + std::to_string(a.contexts.size()) + "\n";
  for (std::size_t i = 0; i < a.contexts.size(); ++i)
    out += "  [" + std::to_string(i + 1) + "] " + a.contexts[i].para_id + " score=" + format_score(a.contexts[i].score) + "\n";
  out += "answers: " + std::to_string(a.per_context.size()) + "\n";
  for (std::size_t i = 0; i < a.per_context.size(); ++i)
    out += "  [" + std::to_string(i + 1) + "] " + a.per_context[i].para_id + ": " + a.per_context[i].text + "\n";
  out += "summary: " + a.summary + "\n";
  out += "subgraph: nodes=" + std::to_string(a.subgraph.nodes().size()) +
         " edges=" + std::to_string(a.subgraph.edges().size()) + "\n";
  for (const auto& t : query_triples(a.subgraph))
    out += "  " + t.head.props.at("surface") + " (" + t.head.props.at("entity_type") + ") -" + t.relation + "-> " +
           t.tail.props.at("surface") + " (" + t.tail.props.at("entity_type") + ")\n";
  return out;
}

inline nlohmann::json graph_to_json(const property_graph& g) {
  auto nodes = nlohmann::json::array();
  for (const auto& n : g.nodes()) nodes.push_back({{"id", n.id}, {"kind", to_string(n.kind)}, {"props", n.props}});
  auto edges = nlohmann::json::array();
  for (const auto& e : g.edges()) edges.push_back({{"id", e.id}, {"kind", e.kind}, {"src", e.src}, {"dst", e.dst}});
  return {{"nodes", nodes}, {"edges", edges}};
}

inline nlohmann::json to_json(const answer& a) {
  nlohmann::json j;
  j["question"] = a.question;
  j["summary"] = a.summary;
  j["contexts"] = nlohmann::json::array();
  for (const auto& h : a.contexts) j["contexts"].push_back({{"para_id", h.para_id}, {"score", h.score}});
  j["per_context"] = nlohmann::json::array();
  for (const auto& c : a.per_context) j["per_context"].push_back({{"para_id", c.para_id}, {"answer", c.text}});
  j["subgraph"] = graph_to_json(a.subgraph);
  j["prompt_log"] = nlohmann::json::array();
  for (const auto& r : a.prompt_log) {
    nlohmann::json e = {{"kind", r.kind},           {"template_version", r.template_version},
                        {"prompt_hash", r.prompt_hash}, {"prompt", r.prompt},
                        {"response", r.response}};
    if (!r.para_id.empty()) e["para_id"] = r.para_id;
    if (!r.error.empty()) e["error"] = r.error;
    j["prompt_log"].push_back(e);
  }
  return j;
}

}  // namespace khub
