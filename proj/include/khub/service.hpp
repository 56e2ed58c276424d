#pragma once

// HTTP service: projects with members and privileges, document ingestion, annotation,
// training, auto-annotation, graph queries, retrieval and QA under /v1.
//
// Users, projects, members, jobs, models and the audit trail live in one SQLite file.
// Each project also has a directory holding its corpus, schema, annotation sets, models,
// graph and index in their module file formats.

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <sqlite3.h>

#include "khub/autoann.hpp"
#include "khub/graph.hpp"
#include "khub/ontology.hpp"
#include "khub/qa.hpp"
#include "khub/retrieval.hpp"
#include "khub/zip.hpp"

namespace khub::service {

using nlohmann::json;
namespace fs = std::filesystem;

// Carries the HTTP status and the {code, message, details} error body.
class http_error : public error {
 public:
  http_error(int status, std::string code, const std::string& message, json details = json::object())
      : error(message), status_(status), code_(std::move(code)), details_(std::move(details)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }
  const json& details() const { return details_; }

 private:
  int status_;
  std::string code_;
  json details_;
};

enum class privilege { viewer = 0, annotator = 1, owner = 2 };

inline std::string_view to_string(privilege p) {
  return p == privilege::owner ? "owner" : p == privilege::annotator ? "annotator" : "viewer";
}

inline std::optional<privilege> parse_privilege(std::string_view s) {
  if (s == "owner") return privilege::owner;
  if (s == "annotator") return privilege::annotator;
  if (s == "viewer") return privilege::viewer;
  return std::nullopt;
}

enum class job_state { queued, running, done, failed };

inline std::string_view to_string(job_state s) {
  switch (s) {
    case job_state::queued: return "queued";
    case job_state::running: return "running";
    case job_state::done: return "done";
    case job_state::failed: return "failed";
  }
  return "failed";
}

inline std::optional<job_state> parse_job_state(std::string_view s) {
  for (auto st : {job_state::queued, job_state::running, job_state::done, job_state::failed})
    if (to_string(st) == s) return st;
  return std::nullopt;
}

// queued -> running -> {done, failed}; nothing else.
inline bool valid_transition(job_state from, job_state to) {
  return (from == job_state::queued && to == job_state::running) ||
         (from == job_state::running && (to == job_state::done || to == job_state::failed));
}

inline constexpr std::array<std::string_view, 6> job_kinds = {"ingest",        "train_ner",   "train_rc",
                                                              "auto_annotate", "build_graph", "build_index"};

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------
// Configuration

struct service_config {
  fs::path data_dir = "khub-data";
  std::map<std::string, std::string> tokens;  // bearer token -> user id
  std::size_t workers = 2;
  std::optional<std::string> generation_url;
  std::string generation_token_env = "KHUB_GEN_TOKEN";
};

// data_dir (relative paths resolve against `base`), workers, tokens: {token: user},
// generation: {url, token_env}.
inline service_config load_service_config(std::string_view yaml, const fs::path& base = ".") {
  service_config c;
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw error(std::string("config: ") + e.what());
  }
  if (!root.IsMap()) throw error("config must be a mapping");
  if (root["data_dir"]) {
    fs::path p = root["data_dir"].as<std::string>();
    c.data_dir = p.is_absolute() ? p : base / p;
  }
  if (root["workers"]) c.workers = root["workers"].as<std::size_t>();
  if (c.workers == 0) throw error("config: workers must be at least 1");
  if (auto t = root["tokens"]) {
    if (!t.IsMap()) throw error("config: tokens must map token to user id");
    for (const auto& kv : t) c.tokens[kv.first.as<std::string>()] = kv.second.as<std::string>();
  }
  if (auto g = root["generation"]) {
    if (g["url"]) c.generation_url = g["url"].as<std::string>();
    if (g["token_env"]) c.generation_token_env = g["token_env"].as<std::string>();
  }
  return c;
}

// ---------------------------------------------------------------------------
// SQLite

class database {
 public:
  using value = std::optional<std::string>;
  using row = std::vector<value>;

  explicit database(const fs::path& path) {
    if (sqlite3_open_v2(path.string().c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                        nullptr) != SQLITE_OK) {
      std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
      sqlite3_close(db_);
      throw error("cannot open database " + path.string() + ": " + msg);
    }
    sqlite3_busy_timeout(db_, 5000);
    query("PRAGMA journal_mode=WAL");
    query("PRAGMA foreign_keys=ON");
  }
  ~database() { sqlite3_close(db_); }
  database(const database&) = delete;
  database& operator=(const database&) = delete;

  std::vector<row> query(std::string_view sql, const std::vector<value>& args = {}) {
    std::lock_guard lock(m_);
    sqlite3_stmt* st = nullptr;
    if (sqlite3_prepare_v2(db_, sql.data(), static_cast<int>(sql.size()), &st, nullptr) != SQLITE_OK)
      throw error(std::string("sql: ") + sqlite3_errmsg(db_));
    std::unique_ptr<sqlite3_stmt, decltype(&sqlite3_finalize)> guard(st, sqlite3_finalize);
    for (std::size_t i = 0; i < args.size(); ++i) {
      int idx = static_cast<int>(i + 1);
      if (args[i]) sqlite3_bind_text(st, idx, args[i]->c_str(), static_cast<int>(args[i]->size()), SQLITE_TRANSIENT);
      else sqlite3_bind_null(st, idx);
    }
    std::vector<row> out;
    for (;;) {
      int rc = sqlite3_step(st);
      if (rc == SQLITE_DONE) break;
      if (rc != SQLITE_ROW) throw error(std::string("sql: ") + sqlite3_errmsg(db_));
      row r;
      for (int c = 0; c < sqlite3_column_count(st); ++c) {
        auto* txt = sqlite3_column_text(st, c);
        if (txt) r.emplace_back(std::string(reinterpret_cast<const char*>(txt), static_cast<std::size_t>(sqlite3_column_bytes(st, c))));
        else r.emplace_back(std::nullopt);
      }
      out.push_back(std::move(r));
    }
    return out;
  }

  std::int64_t last_insert_id() {
    std::lock_guard lock(m_);
    return sqlite3_last_insert_rowid(db_);
  }

  template <typename F>
  auto transaction(F&& f) {
    std::lock_guard lock(m_);
    query("BEGIN IMMEDIATE");
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        query("COMMIT");
      } else {
        auto r = f();
        query("COMMIT");
        return r;
      }
    } catch (...) {
      query("ROLLBACK");
      throw;
    }
  }

 private:
  sqlite3* db_ = nullptr;
  std::recursive_mutex m_;
};

inline void create_tables(database& db) {
  db.query(R"(CREATE TABLE IF NOT EXISTS projects(
    seq INTEGER PRIMARY KEY AUTOINCREMENT, project_id TEXT UNIQUE, name TEXT NOT NULL,
    created_by TEXT NOT NULL, created_at TEXT NOT NULL, UNIQUE(created_by, name)))");
  db.query(R"(CREATE TABLE IF NOT EXISTS members(
    project_id TEXT NOT NULL, user_id TEXT NOT NULL, privilege TEXT NOT NULL,
    PRIMARY KEY(project_id, user_id)))");
  db.query(R"(CREATE TABLE IF NOT EXISTS jobs(
    seq INTEGER PRIMARY KEY AUTOINCREMENT, job_id TEXT UNIQUE, project_id TEXT NOT NULL, kind TEXT NOT NULL,
    state TEXT NOT NULL, log TEXT NOT NULL DEFAULT '', created_by TEXT NOT NULL,
    created_at TEXT NOT NULL, updated_at TEXT NOT NULL))");
  db.query(R"(CREATE TABLE IF NOT EXISTS models(
    project_id TEXT NOT NULL, kind TEXT NOT NULL, version INTEGER NOT NULL, created_by TEXT NOT NULL,
    created_at TEXT NOT NULL, job_id TEXT, PRIMARY KEY(project_id, kind, version)))");
  db.query(R"(CREATE TABLE IF NOT EXISTS audit(
    seq INTEGER PRIMARY KEY AUTOINCREMENT, project_id TEXT, user_id TEXT NOT NULL, action TEXT NOT NULL,
    target TEXT NOT NULL, at TEXT NOT NULL))");
}

// ---------------------------------------------------------------------------
// Jobs

struct job_record {
  std::string job_id;
  std::string project_id;
  std::string kind;
  job_state state = job_state::queued;
  std::string log;
  std::string created_by;
  std::string created_at;
  std::string updated_at;
};

inline json to_json(const job_record& j) {
  return {{"job_id", j.job_id},         {"project_id", j.project_id}, {"kind", j.kind},
          {"state", to_string(j.state)}, {"log", j.log},               {"created_by", j.created_by},
          {"created_at", j.created_at}, {"updated_at", j.updated_at}};
}

class job_table {
 public:
  explicit job_table(database& db) : db_(db) {}

  job_record create(const std::string& project_id, std::string_view kind, const std::string& user) {
    if (std::find(job_kinds.begin(), job_kinds.end(), kind) == job_kinds.end())
      throw error("unknown job kind " + std::string(kind));
    return db_.transaction([&] {
      auto now = utc_now();
      db_.query("INSERT INTO jobs(project_id, kind, state, created_by, created_at, updated_at) VALUES(?,?,?,?,?,?)",
                {project_id, std::string(kind), "queued", user, now, now});
      auto id = "j" + std::to_string(db_.last_insert_id());
      db_.query("UPDATE jobs SET job_id=? WHERE seq=?", {id, std::to_string(db_.last_insert_id())});
      return *find(id);
    });
  }

  std::optional<job_record> find(const std::string& job_id) {
    auto rows = db_.query(
        "SELECT job_id, project_id, kind, state, log, created_by, created_at, updated_at FROM jobs WHERE job_id=?",
        {job_id});
    if (rows.empty()) return std::nullopt;
    auto& r = rows[0];
    return job_record{*r[0], *r[1], *r[2], *parse_job_state(*r[3]), *r[4], *r[5], *r[6], *r[7]};
  }

  void append_log(const std::string& job_id, const std::string& line) {
    db_.query("UPDATE jobs SET log = log || ?, updated_at=? WHERE job_id=?", {line + "\n", utc_now(), job_id});
  }

  // Throws when the transition is not allowed by the state machine.
  void transition(const std::string& job_id, job_state to) {
    db_.transaction([&] {
      auto j = find(job_id);
      if (!j) throw error("unknown job " + job_id);
      if (!valid_transition(j->state, to))
        throw error("job " + job_id + ": illegal transition " + std::string(to_string(j->state)) + " -> " +
                    std::string(to_string(to)));
      db_.query("UPDATE jobs SET state=?, updated_at=? WHERE job_id=?", {std::string(to_string(to)), utc_now(), job_id});
    });
  }

  // Jobs left unfinished by a previous process are failed on startup.
  void fail_interrupted() {
    for (auto& r : db_.query("SELECT job_id, state FROM jobs WHERE state IN ('queued','running')")) {
      if (*r[1] == "queued") transition(*r[0], job_state::running);
      append_log(*r[0], "interrupted by service restart");
      transition(*r[0], job_state::failed);
    }
  }

 private:
  database& db_;
};

// Fixed-size pool; tasks run in submission order per free worker.
class worker_pool {
 public:
  explicit worker_pool(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
      threads_.emplace_back([this] {
        for (;;) {
          std::function<void()> task;
          {
            std::unique_lock lock(m_);
            cv_.wait(lock, [this] { return stop_ || !tasks_.empty(); });
            if (tasks_.empty()) return;
            task = std::move(tasks_.front());
            tasks_.pop_front();
            ++active_;
          }
          task();
          {
            std::lock_guard lock(m_);
            --active_;
          }
          idle_.notify_all();
        }
      });
  }
  ~worker_pool() {
    {
      std::lock_guard lock(m_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void submit(std::function<void()> task) {
    {
      std::lock_guard lock(m_);
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  void wait_idle() {
    std::unique_lock lock(m_);
    idle_.wait(lock, [this] { return tasks_.empty() && active_ == 0; });
  }

 private:
  std::mutex m_;
  std::condition_variable cv_, idle_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  std::size_t active_ = 0;
  bool stop_ = false;
};

// ---------------------------------------------------------------------------
// Project state

struct stored_set {
  std::uint64_t revision = 0;
  annotation_set set;
};

// In-memory mirror of a project directory. Readers take `lock` shared, mutations
// take it exclusively; `busy` admits one mutation job at a time.
struct project_state {
  std::shared_mutex lock;
  std::atomic<bool> busy{false};
  fs::path dir;
  corpus docs;
  ontology_schema schema;
  std::map<std::string, stored_set> working;
  std::map<std::string, annotation_set> predicted;
  property_graph graph;
  vector_index index;

  explicit project_state(fs::path d) : dir(std::move(d)) {
    fs::create_directories(dir / "annotations");
    fs::create_directories(dir / "predictions");
    fs::create_directories(dir / "models");
    if (fs::exists(dir / "corpus.jsonl")) docs = read_corpus(read_file(dir / "corpus.jsonl"));
    if (fs::exists(dir / "schema.yaml")) schema = load_schema(read_file(dir / "schema.yaml"));
    for (const auto& e : fs::directory_iterator(dir / "annotations")) {
      auto j = json::parse(read_file(e.path()));
      stored_set s{j.at("revision").get<std::uint64_t>(), annotation_set_from_json(j.at("set"))};
      working[s.set.doc_id] = std::move(s);
    }
    for (const auto& e : fs::directory_iterator(dir / "predictions")) {
      auto s = annotation_set_from_json(json::parse(read_file(e.path())));
      predicted[s.doc_id] = std::move(s);
    }
    index = vector_index(hashing_embedder().id(), hashing_embedder().dimension());
    if (fs::exists(dir / "graph.tsv")) graph = load_graph(dir / "graph.tsv");
    if (fs::exists(dir / "index.txt")) index = load_index(dir / "index.txt");
  }

  static std::string file_name(std::string_view doc_id) { return hex64(fnv1a(doc_id)) + ".json"; }

  void save_corpus() { write_file(dir / "corpus.jsonl", write_corpus(docs)); }
  void save_schema() { write_file(dir / "schema.yaml", serialize_schema(schema)); }
  void save_working(const std::string& doc_id) {
    const auto& s = working.at(doc_id);
    write_file(dir / "annotations" / file_name(doc_id), json{{"revision", s.revision}, {"set", to_json(s.set)}}.dump());
  }
  void save_predicted(const std::string& doc_id) {
    write_file(dir / "predictions" / file_name(doc_id), to_json(predicted.at(doc_id)).dump());
  }

  std::vector<annotation_set> graph_inputs() const {
    std::vector<annotation_set> sets;
    for (const auto& [id, s] : working)
      if (docs.find_document(id)) sets.push_back(s.set);
    for (const auto& [id, s] : predicted)
      if (docs.find_document(id)) sets.push_back(s);
    return sets;
  }

  void rebuild_graph() {
    graph = build_graph(docs, graph_inputs());
    persist_graph(graph, dir / "graph.tsv");
  }

  void rebuild_index() {
    index = index_paragraphs(docs, hashing_embedder());
    persist_index(index, dir / "index.txt");
  }
};

// ---------------------------------------------------------------------------
// Request helpers

namespace detail {

inline json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw http_error(422, "invalid_body", std::string("request body is not valid JSON: ") + e.what());
  }
}

inline hyperparameters hyper_from_body(const json& j) {
  hyperparameters h;
  if (!j.is_object()) return h;
  h.epochs = j.value("epochs", h.epochs);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.l2 = j.value("l2", h.l2);
  h.max_span_len = j.value("max_span_len", h.max_span_len);
  h.threshold = j.value("threshold", h.threshold);
  h.feature_dim = j.value("feature_dim", h.feature_dim);
  if (h.epochs < 0 || !(h.learning_rate > 0) || h.l2 < 0 || h.max_span_len == 0 || !(h.threshold > 0 && h.threshold < 1) ||
      h.feature_dim == 0)
    throw http_error(422, "invalid_hyperparameters", "hyperparameters out of range", khub::detail::to_json(h));
  return h;
}

inline json report_json(const validation_report& r) {
  json v = json::array();
  for (const auto& x : r.violations) v.push_back({{"ann_id", x.ann_id}, {"kind", x.kind}, {"message", x.message}});
  return {{"violations", v}};
}

inline json eval_json(const eval_result& r) {
  json per = json::object();
  for (const auto& [t, s] : r.per_type)
    per[t] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
              {"true_positives", s.true_positives}, {"predicted", s.predicted}, {"support", s.support}};
  return {{"precision", r.precision}, {"recall", r.recall}, {"micro_f1", r.micro_f1},
          {"true_positives", r.true_positives}, {"predicted", r.predicted}, {"support", r.support}, {"per_type", per}};
}

inline json entity_json(const node& n) {
  return {{"id", n.id}, {"surface", n.props.at("surface")}, {"entity_type", n.props.at("entity_type")},
          {"para_id", n.props.at("para_id")}, {"provenance", n.props.at("provenance")}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Application

class app {
 public:
  explicit app(service_config cfg)
      : cfg_(std::move(cfg)),
        db_((fs::create_directories(cfg_.data_dir), cfg_.data_dir / "khub.sqlite")),
        jobs_(db_) {
    create_tables(db_);
    jobs_.fail_interrupted();
    pool_ = std::make_unique<worker_pool>(cfg_.workers);
    routes();
  }

  ~app() { pool_.reset(); }

  httplib::Server& http() { return server_; }
  job_table& jobs() { return jobs_; }
  database& db() { return db_; }

  // Blocks until every submitted job has finished.
  void wait_idle() { pool_->wait_idle(); }

 private:
  using handler = std::function<void(const httplib::Request&, httplib::Response&, const std::string& user)>;

  service_config cfg_;
  database db_;
  job_table jobs_;
  std::unique_ptr<worker_pool> pool_;
  httplib::Server server_;
  std::mutex projects_m_;
  std::map<std::string, std::shared_ptr<project_state>> projects_;

  // -- plumbing --------------------------------------------------------------

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, const http_error& e) {
    send(res, e.status(), {{"code", e.code()}, {"message", e.what()}, {"details", e.details()}});
  }

  std::string authenticate(const httplib::Request& req) const {
    auto h = req.get_header_value("Authorization");
    if (!starts_with(h, "Bearer ")) throw http_error(401, "unauthenticated", "missing bearer token");
    auto it = cfg_.tokens.find(h.substr(7));
    if (it == cfg_.tokens.end()) throw http_error(401, "unauthenticated", "unknown bearer token");
    return it->second;
  }

  httplib::Server::Handler wrap(handler h) {
    return [this, h](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res, authenticate(req));
      } catch (const http_error& e) {
        send_error(res, e);
      } catch (const json::exception& e) {
        send_error(res, http_error(422, "invalid_body", std::string("malformed request body: ") + e.what()));
      } catch (const std::exception& e) {
        send_error(res, http_error(500, "internal", e.what()));
      }
    };
  }

  void audit(const std::string& project_id, const std::string& user, std::string_view action, const std::string& target) {
    db_.query("INSERT INTO audit(project_id, user_id, action, target, at) VALUES(?,?,?,?,?)",
              {project_id, user, std::string(action), target, utc_now()});
  }

  std::optional<privilege> member_privilege(const std::string& project_id, const std::string& user) {
    auto rows = db_.query("SELECT privilege FROM members WHERE project_id=? AND user_id=?", {project_id, user});
    if (rows.empty()) return std::nullopt;
    return parse_privilege(*rows[0][0]);
  }

  bool project_exists(const std::string& project_id) {
    return !db_.query("SELECT 1 FROM projects WHERE project_id=?", {project_id}).empty();
  }

  // 404 for an unknown project, 403 when the user lacks `need`.
  std::shared_ptr<project_state> authorize(const std::string& project_id, const std::string& user, privilege need) {
    if (!project_exists(project_id)) throw http_error(404, "not_found", "unknown project " + project_id);
    auto have = member_privilege(project_id, user);
    if (!have) throw http_error(403, "forbidden", user + " is not a member of " + project_id);
    if (static_cast<int>(*have) < static_cast<int>(need))
      throw http_error(403, "forbidden", "this action needs " + std::string(to_string(need)) + " privilege",
                       {{"privilege", to_string(*have)}, {"required", to_string(need)}});
    return state(project_id);
  }

  std::shared_ptr<project_state> state(const std::string& project_id) {
    std::lock_guard lock(projects_m_);
    auto& p = projects_[project_id];
    if (!p) p = std::make_shared<project_state>(cfg_.data_dir / "projects" / project_id);
    return p;
  }

  json project_json(const std::string& project_id) {
    auto row = db_.query("SELECT name, created_by, created_at FROM projects WHERE project_id=?", {project_id}).at(0);
    json members = json::array();
    for (auto& m : db_.query("SELECT user_id, privilege FROM members WHERE project_id=? ORDER BY user_id", {project_id}))
      members.push_back({{"user_id", *m[0]}, {"privilege", *m[1]}});
    json models = {{"ner", json::array()}, {"rc", json::array()}};
    for (auto& m : db_.query("SELECT kind, version FROM models WHERE project_id=? ORDER BY kind, version", {project_id}))
      models[*m[0]].push_back(std::stoi(*m[1]));
    auto st = state(project_id);
    std::shared_lock lock(st->lock);
    return {{"project_id", project_id},         {"name", *row[0]},       {"created_by", *row[1]},
            {"created_at", *row[2]},           {"members", members},    {"models", models},
            {"documents", st->docs.size()},    {"schema", serialize_schema(st->schema)}};
  }

  // Queues `work` as a job; rejects with 409 while another job of the project is pending.
  std::string submit(const std::string& project_id, std::string_view kind, const std::string& user,
                     std::function<void(project_state&, const std::string& job_id)> work) {
    auto st = state(project_id);
    bool expected = false;
    if (!st->busy.compare_exchange_strong(expected, true))
      throw http_error(409, "conflict", "another job is already queued or running for this project");
    job_record job;
    try {
      job = jobs_.create(project_id, kind, user);
    } catch (...) {
      st->busy = false;
      throw;
    }
    audit(project_id, user, std::string("job:") + std::string(kind), job.job_id);
    pool_->submit([this, st, id = job.job_id, work] {
      jobs_.transition(id, job_state::running);
      auto end = job_state::done;
      try {
        work(*st, id);
      } catch (const std::exception& e) {
        jobs_.append_log(id, std::string("error: ") + e.what());
        end = job_state::failed;
      }
      // free the project before the job is observably finished, so a client that
      // polls for done can submit the next job straight away
      st->busy = false;
      jobs_.transition(id, end);
    });
    return job.job_id;
  }

  std::optional<int> latest_model(const std::string& project_id, std::string_view kind) {
    auto rows = db_.query("SELECT MAX(version) FROM models WHERE project_id=? AND kind=?", {project_id, std::string(kind)});
    if (rows.empty() || !rows[0][0]) return std::nullopt;
    return std::stoi(*rows[0][0]);
  }

  std::vector<std::string> select_documents(const project_state& st, const json& body) {
    std::vector<std::string> ids;
    if (body.contains("documents")) {
      for (const auto& d : body["documents"]) {
        auto id = d.get<std::string>();
        if (!st.docs.find_document(id)) throw http_error(404, "not_found", "unknown document " + id);
        ids.push_back(id);
      }
    } else {
      for (const auto& d : st.docs.documents()) ids.push_back(d.doc_id);
    }
    return ids;
  }

  // -- routes ----------------------------------------------------------------

  void routes() {
    auto& s = server_;
    s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send(res, res.status, {{"code", "not_found"}, {"message", "no such endpoint"}, {"details", json::object()}});
    });

    s.Post("/v1/projects", wrap([this](auto& req, auto& res, auto& user) { create_project(req, res, user); }));
    s.Get("/v1/projects", wrap([this](auto&, auto& res, auto& user) {
            json out = json::array();
            for (auto& r : db_.query("SELECT project_id FROM members WHERE user_id=? ORDER BY project_id", {user}))
              out.push_back(project_json(*r[0]));
            send(res, 200, {{"projects", out}});
          }));
    s.Get(R"(/v1/projects/([^/]+))", wrap([this](auto& req, auto& res, auto& user) {
            authorize(req.matches[1], user, privilege::viewer);
            send(res, 200, project_json(req.matches[1]));
          }));
    s.Post(R"(/v1/projects/([^/]+)/members)", wrap([this](auto& req, auto& res, auto& user) { set_member(req, res, user); }));
    s.Delete(R"(/v1/projects/([^/]+)/members/([^/]+))",
             wrap([this](auto& req, auto& res, auto& user) { remove_member(req, res, user); }));
    s.Get(R"(/v1/projects/([^/]+)/audit)", wrap([this](auto& req, auto& res, auto& user) {
            authorize(req.matches[1], user, privilege::viewer);
            json out = json::array();
            for (auto& r : db_.query("SELECT user_id, action, target, at FROM audit WHERE project_id=? ORDER BY seq",
                                     {std::string(req.matches[1])}))
              out.push_back({{"user_id", *r[0]}, {"action", *r[1]}, {"target", *r[2]}, {"at", *r[3]}});
            send(res, 200, {{"entries", out}});
          }));

    s.Post(R"(/v1/projects/([^/]+)/documents)", wrap([this](auto& req, auto& res, auto& user) { upload(req, res, user); }));
    s.Get(R"(/v1/projects/([^/]+)/documents)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::shared_lock lock(st->lock);
            json out = json::array();
            for (const auto& d : st->docs.documents())
              out.push_back({{"doc_id", d.doc_id}, {"title", d.metadata.title}, {"paragraphs", d.paragraphs.size()}});
            send(res, 200, {{"documents", out}});
          }));
    s.Get(R"(/v1/projects/([^/]+)/documents/([^/]+)/paragraphs)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::shared_lock lock(st->lock);
            const auto* d = st->docs.find_document(std::string(req.matches[2]));
            if (!d) throw http_error(404, "not_found", "unknown document " + std::string(req.matches[2]));
            send(res, 200, khub::to_json(*d));
          }));

    s.Get(R"(/v1/projects/([^/]+)/schema)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::shared_lock lock(st->lock);
            res.set_content(serialize_schema(st->schema), "application/yaml");
          }));
    s.Put(R"(/v1/projects/([^/]+)/schema)", wrap([this](auto& req, auto& res, auto& user) { put_schema(req, res, user); }));

    s.Get(R"(/v1/projects/([^/]+)/documents/([^/]+)/annotations)",
          wrap([this](auto& req, auto& res, auto& user) { get_annotations(req, res, user); }));
    s.Put(R"(/v1/projects/([^/]+)/documents/([^/]+)/annotations)",
          wrap([this](auto& req, auto& res, auto& user) { put_annotations(req, res, user); }));
    s.Post(R"(/v1/projects/([^/]+)/documents/([^/]+)/annotations/revisions)",
           wrap([this](auto& req, auto& res, auto& user) { revise_annotations(req, res, user); }));
    s.Get(R"(/v1/projects/([^/]+)/documents/([^/]+)/predictions)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::shared_lock lock(st->lock);
            std::string doc = req.matches[2];
            if (!st->docs.find_document(doc)) throw http_error(404, "not_found", "unknown document " + doc);
            auto it = st->predicted.find(doc);
            annotation_set empty;
            empty.doc_id = doc;
            send(res, 200, khub::to_json(it == st->predicted.end() ? empty : it->second));
          }));

    s.Post(R"(/v1/projects/([^/]+)/train)", wrap([this](auto& req, auto& res, auto& user) { train(req, res, user); }));
    s.Post(R"(/v1/projects/([^/]+)/auto-annotate)",
           wrap([this](auto& req, auto& res, auto& user) { auto_annotate_docs(req, res, user); }));
    s.Post(R"(/v1/projects/([^/]+)/evaluate)", wrap([this](auto& req, auto& res, auto& user) { evaluate(req, res, user); }));

    s.Get(R"(/v1/projects/([^/]+)/graph/triples)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            triple_filter f;
            for (auto [key, field] : {std::pair{"head_type", &f.head_type}, std::pair{"relation", &f.relation},
                                      std::pair{"tail_type", &f.tail_type}})
              if (req.has_param(key) && !req.get_param_value(key).empty()) *field = req.get_param_value(key);
            std::shared_lock lock(st->lock);
            json out = json::array();
            for (const auto& t : query_triples(st->graph, f))
              out.push_back({{"head", detail::entity_json(t.head)}, {"relation", t.relation}, {"tail", detail::entity_json(t.tail)}});
            send(res, 200, {{"triples", out}});
          }));
    s.Get(R"(/v1/projects/([^/]+)/graph/subgraph)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::vector<std::string> ids;
            for (std::size_t i = 0; i < req.get_param_value_count("para_id"); ++i) ids.push_back(req.get_param_value("para_id", i));
            std::shared_lock lock(st->lock);
            try {
              send(res, 200, graph_to_json(subgraph_for_paragraphs(st->graph, ids)));
            } catch (const query_error& e) {
              throw http_error(404, "not_found", e.what());
            }
          }));
    s.Post(R"(/v1/projects/([^/]+)/graph/build)", wrap([this](auto& req, auto& res, auto& user) {
             authorize(req.matches[1], user, privilege::owner);
             auto id = submit(req.matches[1], "build_graph", user, [this](project_state& st, const std::string& job) {
               std::unique_lock lock(st.lock);
               st.rebuild_graph();
               jobs_.append_log(job, "graph: " + std::to_string(st.graph.nodes().size()) + " nodes, " +
                                         std::to_string(st.graph.edges().size()) + " edges");
             });
             send(res, 202, {{"job_id", id}});
           }));
    s.Post(R"(/v1/projects/([^/]+)/index/build)", wrap([this](auto& req, auto& res, auto& user) {
             authorize(req.matches[1], user, privilege::owner);
             auto id = submit(req.matches[1], "build_index", user, [this](project_state& st, const std::string& job) {
               std::unique_lock lock(st.lock);
               st.rebuild_index();
               jobs_.append_log(job, "index: " + std::to_string(st.index.size()) + " paragraphs");
             });
             send(res, 202, {{"job_id", id}});
           }));
    s.Get(R"(/v1/projects/([^/]+)/index/query)", wrap([this](auto& req, auto& res, auto& user) {
            auto st = authorize(req.matches[1], user, privilege::viewer);
            std::size_t k = 3;
            if (req.has_param("k") && !parse_int(req.get_param_value("k"), k))
              throw http_error(422, "invalid_parameter", "k must be a positive integer");
            std::shared_lock lock(st->lock);
            try {
              json out = json::array();
              for (const auto& h : top_k(st->index, hashing_embedder(), req.get_param_value("q"), k))
                out.push_back({{"para_id", h.para_id}, {"score", h.score}});
              send(res, 200, {{"hits", out}});
            } catch (const index_error& e) {
              throw http_error(422, "invalid_parameter", e.what());
            }
          }));
    s.Post(R"(/v1/projects/([^/]+)/ask)", wrap([this](auto& req, auto& res, auto& user) { ask_question(req, res, user); }));

    s.Get(R"(/v1/jobs/([^/]+))", wrap([this](auto& req, auto& res, auto& user) {
            auto job = jobs_.find(req.matches[1]);
            if (!job) throw http_error(404, "not_found", "unknown job " + std::string(req.matches[1]));
            authorize(job->project_id, user, privilege::viewer);
            send(res, 200, to_json(*job));
          }));
  }

  // -- projects and members --------------------------------------------------

  void create_project(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    auto body = detail::parse_body(req);
    auto name = body.value("name", "");
    if (trim(name).empty()) throw http_error(422, "invalid_body", "project name is required");
    std::optional<ontology_schema> schema;
    if (body.contains("schema")) {
      try {
        schema = load_schema(body["schema"].get<std::string>());
      } catch (const error& e) {
        throw http_error(422, "invalid_schema", e.what());
      }
    }
    if (!db_.query("SELECT 1 FROM projects WHERE created_by=? AND name=?", {user, name}).empty())
      throw http_error(409, "conflict", "you already have a project named " + name);
    auto id = db_.transaction([&] {
      db_.query("INSERT INTO projects(name, created_by, created_at) VALUES(?,?,?)", {name, user, utc_now()});
      auto seq = db_.last_insert_id();
      auto pid = "p" + std::to_string(seq);
      db_.query("UPDATE projects SET project_id=? WHERE seq=?", {pid, std::to_string(seq)});
      db_.query("INSERT INTO members(project_id, user_id, privilege) VALUES(?,?,'owner')", {pid, user});
      return pid;
    });
    audit(id, user, "create_project", name);
    if (schema) {
      auto st = state(id);
      std::unique_lock lock(st->lock);
      st->schema = *schema;
      st->save_schema();
    }
    send(res, 201, project_json(id));
  }

  std::size_t owner_count(const std::string& project_id) {
    return db_.query("SELECT 1 FROM members WHERE project_id=? AND privilege='owner'", {project_id}).size();
  }

  void set_member(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    authorize(pid, user, privilege::owner);
    auto body = detail::parse_body(req);
    auto member = body.value("user_id", "");
    auto priv = parse_privilege(body.value("privilege", ""));
    if (member.empty() || !priv) throw http_error(422, "invalid_body", "user_id and privilege (owner|annotator|viewer) are required");
    db_.transaction([&] {
      db_.query("INSERT INTO members(project_id, user_id, privilege) VALUES(?,?,?) "
                "ON CONFLICT(project_id, user_id) DO UPDATE SET privilege=excluded.privilege",
                {pid, member, std::string(to_string(*priv))});
      if (owner_count(pid) == 0) throw http_error(422, "last_owner", "a project needs at least one owner");
    });
    audit(pid, user, "set_member", member + "=" + std::string(to_string(*priv)));
    send(res, 200, project_json(pid));
  }

  void remove_member(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1], member = req.matches[2];
    authorize(pid, user, privilege::owner);
    if (!member_privilege(pid, member)) throw http_error(404, "not_found", member + " is not a member");
    db_.transaction([&] {
      db_.query("DELETE FROM members WHERE project_id=? AND user_id=?", {pid, member});
      if (owner_count(pid) == 0) throw http_error(422, "last_owner", "a project needs at least one owner");
    });
    audit(pid, user, "remove_member", member);
    send(res, 200, project_json(pid));
  }

  // -- documents and schema --------------------------------------------------

  void upload(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    authorize(pid, user, privilege::owner);
    if (req.body.empty()) throw http_error(422, "invalid_body", "empty document payload");
    std::string fmt = req.get_param_value("format");
    auto ctype = req.get_header_value("Content-Type");
    if (fmt.empty()) {
      if (ctype.find("zip") != std::string::npos || looks_like_zip(req.body)) fmt = "zip";
      else if (ctype.find("xml") != std::string::npos) fmt = "tei-xml";
      else if (ctype.find("text/plain") != std::string::npos) fmt = "plain-text";
      else fmt = trim(req.body).starts_with("<") ? "tei-xml" : "plain-text";
    }
    // payloads as (name, format, bytes)
    std::vector<std::tuple<std::string, source_format, std::string>> payloads;
    if (fmt == "zip") {
      std::vector<zip_entry> entries;
      try {
        entries = read_zip(req.body);
      } catch (const zip_error& e) {
        throw http_error(422, "invalid_archive", e.what());
      }
      for (auto& e : entries) {
        auto ext = fs::path(e.name).extension().string();
        if (ext == ".xml") payloads.emplace_back(e.name, source_format::tei_xml, std::move(e.data));
        else if (ext == ".txt") payloads.emplace_back(e.name, source_format::plain_text, std::move(e.data));
      }
      if (payloads.empty()) throw http_error(422, "invalid_archive", "archive holds no .xml or .txt documents");
    } else {
      auto f = parse_source_format(fmt);
      if (!f) throw http_error(422, "invalid_parameter", "unknown format " + fmt);
      payloads.emplace_back("body", *f, req.body);
    }
    auto id = submit(pid, "ingest", user, [this, payloads = std::move(payloads)](project_state& st, const std::string& job) {
      std::vector<document> docs;
      for (const auto& [name, f, bytes] : payloads) {
        try {
          docs.push_back(ingest_structured(bytes, f));
        } catch (const std::exception& e) {
          throw error(name + ": " + e.what());
        }
        jobs_.append_log(job, name + ": " + docs.back().doc_id + " (" + std::to_string(docs.back().paragraphs.size()) + " paragraphs)");
      }
      std::unique_lock lock(st.lock);
      for (auto& d : docs) st.docs.add(std::move(d));
      st.save_corpus();
      st.rebuild_index();
      st.rebuild_graph();
    });
    send(res, 202, {{"job_id", id}});
  }

  void put_schema(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    auto st = authorize(pid, user, privilege::owner);
    ontology_schema schema;
    try {
      schema = load_schema(req.body);
    } catch (const error& e) {
      throw http_error(422, "invalid_schema", e.what());
    }
    std::unique_lock lock(st->lock);
    st->schema = schema;
    st->save_schema();
    audit(pid, user, "put_schema", "schema");
    res.set_content(serialize_schema(st->schema), "application/yaml");
  }

  // -- annotations -----------------------------------------------------------

  static json stored_json(const stored_set& s) {
    auto j = khub::to_json(s.set);
    j["revision"] = s.revision;
    return j;
  }

  static void check_if_match(const httplib::Request& req, std::uint64_t revision) {
    if (!req.has_header("If-Match")) return;
    auto want = req.get_header_value("If-Match");
    if (want.size() >= 2 && want.front() == '"') want = want.substr(1, want.size() - 2);
    if (want != std::to_string(revision))
      throw http_error(409, "conflict", "annotations changed since revision " + want, {{"revision", revision}});
  }

  // Shared by PUT and revisions: integrity, corpus consistency, ontology.
  static void check_set(const annotation_set& set, const project_state& st) {
    try {
      check_integrity(set);
    } catch (const parse_error& e) {
      throw http_error(422, "invalid_annotations", e.what());
    }
    for (const auto& e : set.entities)
      if (st.docs.owner_of(e.para_id) != st.docs.find_document(set.doc_id))
        throw http_error(422, "invalid_annotations", e.id + ": paragraph " + e.para_id + " is not in document " + set.doc_id);
    auto problems = check_against_corpus(set, st.docs);
    if (!problems.empty()) throw http_error(422, "invalid_annotations", problems.front(), {{"problems", problems}});
    auto report = validate(set, st.schema);
    if (!report.ok()) throw http_error(422, "schema_violation", report.violations.front().message, detail::report_json(report));
  }

  void commit_working(project_state& st, const std::string& pid, const std::string& user, annotation_set set,
                      httplib::Response& res, std::string_view action) {
    auto& slot = st.working[set.doc_id];
    auto previous = slot.set;
    slot.set = std::move(set);
    try {
      st.rebuild_graph();
    } catch (const build_error& e) {
      slot.set = std::move(previous);
      throw http_error(422, "invalid_annotations", e.what());
    }
    ++slot.revision;
    st.save_working(slot.set.doc_id);
    audit(pid, user, action, slot.set.doc_id + "@" + std::to_string(slot.revision));
    res.set_header("ETag", "\"" + std::to_string(slot.revision) + "\"");
    send(res, 200, stored_json(slot));
  }

  void get_annotations(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    auto st = authorize(req.matches[1], user, privilege::viewer);
    std::string doc = req.matches[2];
    std::shared_lock lock(st->lock);
    if (!st->docs.find_document(doc)) throw http_error(404, "not_found", "unknown document " + doc);
    stored_set s;
    s.set.doc_id = doc;
    if (auto it = st->working.find(doc); it != st->working.end()) s = it->second;
    res.set_header("ETag", "\"" + std::to_string(s.revision) + "\"");
    if (req.get_param_value("format") == "standoff") {
      auto para = req.get_param_value("para_id");
      if (!st->docs.find_paragraph(para) || st->docs.owner_of(para)->doc_id != doc)
        throw http_error(404, "not_found", "unknown paragraph " + para);
      res.set_content(serialize_standoff(s.set, para), "text/plain");
      return;
    }
    send(res, 200, stored_json(s));
  }

  void put_annotations(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1], doc = req.matches[2];
    auto st = authorize(pid, user, privilege::annotator);
    std::unique_lock lock(st->lock);
    if (!st->docs.find_document(doc)) throw http_error(404, "not_found", "unknown document " + doc);
    auto& current = st->working[doc];
    current.set.doc_id = doc;
    check_if_match(req, current.revision);
    annotation_set set;
    if (req.get_header_value("Content-Type").find("text/plain") != std::string::npos) {
      // standoff for one paragraph replaces that paragraph's annotations
      auto para_id = req.get_param_value("para_id");
      const auto* para = st->docs.find_paragraph(para_id);
      if (!para || st->docs.owner_of(para_id)->doc_id != doc)
        throw http_error(404, "not_found", "unknown paragraph " + para_id);
      annotation_set parsed;
      try {
        parsed = parse_standoff(req.body, para->text, para_id);
      } catch (const parse_error& e) {
        throw http_error(422, "invalid_annotations", e.what());
      }
      set.doc_id = doc;
      std::set<std::string> dropped;
      for (const auto& e : current.set.entities)
        if (e.para_id == para_id) dropped.insert(e.id);
        else set.entities.push_back(e);
      for (const auto& r : current.set.relations)
        if (!dropped.count(r.arg1) && !dropped.count(r.arg2)) set.relations.push_back(r);
      std::map<std::string, std::string> rename;
      for (auto e : parsed.entities) {
        rename[e.id] = set.next_entity_id();
        e.id = rename[e.id];
        set.entities.push_back(std::move(e));
      }
      for (auto r : parsed.relations) {
        r.id = set.next_relation_id();
        r.arg1 = rename.at(r.arg1);
        r.arg2 = rename.at(r.arg2);
        set.relations.push_back(std::move(r));
      }
    } else {
      set = annotation_set_from_json(detail::parse_body(req));
      set.doc_id = doc;
      for (auto& e : set.entities)
        if (e.surface.empty())
          if (const auto* p = st->docs.find_paragraph(e.para_id); p && e.span.end <= utf8::length(p->text))
            e.surface = utf8::slice(p->text, e.span);
    }
    for (auto& e : set.entities) e.source = provenance::human;
    for (auto& r : set.relations) r.source = provenance::human;
    check_set(set, *st);
    commit_working(*st, pid, user, std::move(set), res, "put_annotations");
  }

  void revise_annotations(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1], doc = req.matches[2];
    auto st = authorize(pid, user, privilege::annotator);
    auto body = detail::parse_body(req);
    std::unique_lock lock(st->lock);
    if (!st->docs.find_document(doc)) throw http_error(404, "not_found", "unknown document " + doc);
    auto& current = st->working[doc];
    current.set.doc_id = doc;
    check_if_match(req, current.revision);
    std::vector<revision_edit> edits;
    for (const auto& e : body.at("edits")) {
      auto op = e.at("op").get<std::string>();
      if (op == "add_entity") {
        auto para_id = e.at("para_id").get<std::string>();
        text_span sp{e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>()};
        const auto* p = st->docs.find_paragraph(para_id);
        if (!p || sp.end > utf8::length(p->text)) throw http_error(422, "invalid_annotations", "span outside paragraph " + para_id);
        edits.push_back(add_entity{e.at("type").get<std::string>(), para_id, sp, utf8::slice(p->text, sp)});
      } else if (op == "add_relation") {
        edits.push_back(add_relation{e.at("type").get<std::string>(), e.at("arg1").get<std::string>(), e.at("arg2").get<std::string>()});
      } else if (op == "delete") {
        edits.push_back(delete_annotation{e.at("id").get<std::string>()});
      } else if (op == "retype") {
        edits.push_back(retype_annotation{e.at("id").get<std::string>(), e.at("type").get<std::string>()});
      } else {
        throw http_error(422, "invalid_body", "unknown edit op " + op);
      }
    }
    annotation_set revised;
    try {
      revised = apply_revision(current.set, edits);
    } catch (const revision_error& e) {
      throw http_error(422, "invalid_revision", e.what());
    }
    check_set(revised, *st);
    commit_working(*st, pid, user, std::move(revised), res, "revise_annotations");
  }

  // -- learning --------------------------------------------------------------

  void train(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    auto st = authorize(pid, user, privilege::owner);
    auto body = detail::parse_body(req);
    auto which = body.value("model", "ner");
    if (which != "ner" && which != "rc") throw http_error(422, "invalid_body", "model must be ner or rc");
    auto hp = detail::hyper_from_body(body.value("hyperparameters", json::object()));
    std::vector<std::string> docs;
    {
      std::shared_lock lock(st->lock);
      docs = select_documents(*st, body);
    }
    auto id = submit(pid, which == "ner" ? "train_ner" : "train_rc", user,
                     [this, pid, user, which, hp, docs](project_state& s, const std::string& job) {
                       corpus selected;
                       std::vector<annotation_set> sets;
                       ontology_schema schema;
                       {
                         std::shared_lock lock(s.lock);
                         for (const auto& d : docs) {
                           selected.add(*s.docs.find_document(d));
                           if (auto it = s.working.find(d); it != s.working.end()) sets.push_back(it->second.set);
                         }
                         schema = s.schema;
                       }
                       auto records = export_training(selected, sets).records;
                       jobs_.append_log(job, std::to_string(records.size()) + " training sentences");
                       std::string text;
                       if (which == "ner") {
                         auto r = train_ner(records, hp);
                         for (const auto& w : r.warnings) jobs_.append_log(job, "warning: " + w);
                         if (!r.detector_curve.loss.empty())
                           jobs_.append_log(job, "span detector final loss " + std::to_string(r.detector_curve.loss.back()));
                         text = serialize_model(r.model);
                       } else {
                         auto r = train_rc(records, schema, hp);
                         if (!r.curve.loss.empty()) jobs_.append_log(job, "relation classifier final loss " + std::to_string(r.curve.loss.back()));
                         text = serialize_model(r.model);
                       }
                       std::unique_lock lock(s.lock);
                       int version = latest_model(pid, which).value_or(0) + 1;
                       write_file(s.dir / "models" / (which + "-v" + std::to_string(version) + ".json"), text);
                       db_.query("INSERT INTO models(project_id, kind, version, created_by, created_at, job_id) VALUES(?,?,?,?,?,?)",
                                 {pid, which, std::to_string(version), user, utc_now(), job});
                       jobs_.append_log(job, "stored " + which + " model version " + std::to_string(version));
                     });
    send(res, 202, {{"job_id", id}});
  }

  void auto_annotate_docs(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    auto st = authorize(pid, user, privilege::annotator);
    auto body = detail::parse_body(req);
    auto method = body.value("method", "model");
    std::vector<std::string> docs;
    std::vector<gazetteer_rule> rules;
    std::string ner_text, rc_text;
    {
      std::shared_lock lock(st->lock);
      docs = select_documents(*st, body);
      if (method == "regex") {
        try {
          rules = parse_gazetteer(body.value("rules", ""), &st->schema);
        } catch (const error& e) {
          throw http_error(422, "invalid_rules", e.what());
        }
      } else if (method == "model") {
        auto pick = [&](const char* kind, const char* field) {
          auto v = body.contains(field) ? std::optional<int>(body[field].get<int>()) : latest_model(pid, kind);
          auto path = st->dir / "models" / (std::string(kind) + "-v" + std::to_string(v.value_or(0)) + ".json");
          if (!v || !fs::exists(path))
            throw http_error(422, "no_model", std::string("no ") + kind + " model" + (v ? " version " + std::to_string(*v) : ""));
          return read_file(path);
        };
        ner_text = pick("ner", "ner_version");
        rc_text = pick("rc", "rc_version");
      } else {
        throw http_error(422, "invalid_body", "method must be model or regex");
      }
    }
    auto id = submit(pid, "auto_annotate", user,
                     [this, pid, user, docs, rules, ner_text, rc_text, method](project_state& s, const std::string& job) {
                       std::optional<ner_model> ner;
                       std::optional<rc_model> rc;
                       if (method == "model") {
                         ner = load_ner_model(ner_text);
                         rc = load_rc_model(rc_text);
                       }
                       std::unique_lock lock(s.lock);
                       for (const auto& d : docs) {
                         const auto& doc = *s.docs.find_document(d);
                         auto set = ner ? auto_annotate(doc, *ner, *rc, s.schema) : regex_annotate(doc, rules);
                         jobs_.append_log(job, d + ": " + std::to_string(set.entities.size()) + " entities, " +
                                                   std::to_string(set.relations.size()) + " relations");
                         s.predicted[d] = set;
                         s.save_predicted(d);
                         auto& slot = s.working[d];
                         if (slot.set.empty()) {
                           slot.set = set;
                           ++slot.revision;
                           s.save_working(d);
                         }
                         audit(pid, user, "auto_annotate", d);
                       }
                       s.rebuild_graph();
                     });
    send(res, 202, {{"job_id", id}});
  }

  void evaluate(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    auto st = authorize(req.matches[1], user, privilege::viewer);
    auto body = detail::parse_body(req);
    std::shared_lock lock(st->lock);
    std::vector<annotation_set> pred, gold;
    for (const auto& d : select_documents(*st, body)) {
      auto p = st->predicted.find(d);
      if (p == st->predicted.end()) {
        if (body.contains("documents")) throw http_error(422, "no_predictions", "document " + d + " has no predictions");
        continue;
      }
      pred.push_back(p->second);
      annotation_set g;
      g.doc_id = d;
      if (auto w = st->working.find(d); w != st->working.end()) g = w->second.set;
      gold.push_back(g);
    }
    if (pred.empty()) throw http_error(422, "no_predictions", "no documents with predictions to evaluate");
    send(res, 200, detail::eval_json(evaluate_micro_f1(pred, gold)));
  }

  // -- QA --------------------------------------------------------------------

  std::unique_ptr<generation_backend> backend_for(const std::string& model_id) {
    if (model_id == "mock") return std::make_unique<mock_backend>();
    if (model_id == "echo") return std::make_unique<echo_backend>();
    if (!cfg_.generation_url) throw http_error(422, "no_backend", "no generation endpoint is configured for model " + model_id);
    http_backend::options o;
    o.url = *cfg_.generation_url;
    o.token_env = cfg_.generation_token_env;
    return std::make_unique<http_backend>(o);
  }

  void ask_question(const httplib::Request& req, httplib::Response& res, const std::string& user) {
    std::string pid = req.matches[1];
    auto st = authorize(pid, user, privilege::viewer);
    auto body = detail::parse_body(req);
    question q;
    q.text = body.value("text", "");
    q.project_id = pid;
    q.model_id = body.value("model_id", "mock");
    if (body.contains("params")) {
      q.params.max_tokens = body["params"].value("max_tokens", q.params.max_tokens);
      q.params.temperature = body["params"].value("temperature", q.params.temperature);
    }
    if (trim(q.text).empty()) throw http_error(422, "invalid_question", "question text is empty");
    auto backend = backend_for(q.model_id);
    std::shared_lock lock(st->lock);
    hashing_embedder emb;
    try {
      auto a = ask(q, {st->docs, st->index, emb, st->graph}, *backend);
      auto j = khub::to_json(a);
      j["transcript"] = format_transcript(a);
      send(res, 200, j);
    } catch (const qa_error& e) {
      throw http_error(502, "generation_failed", e.what(), khub::to_json(e.partial()));
    }
  }
};

}  // namespace khub::service
