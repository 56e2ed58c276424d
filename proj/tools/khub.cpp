// khub: command-line driver for the pipeline. Each subcommand wraps one library
// operation and writes that module's file format to stdout.
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "khub/autoann.hpp"
#include "khub/graph.hpp"
#include "khub/qa.hpp"
#include "khub/retrieval.hpp"

using namespace khub;

namespace {

struct validation_failure : error {
  using error::error;
};

// Annotation sets, one JSON object per line.
std::vector<annotation_set> read_sets(const std::vector<std::string>& paths) {
  std::vector<annotation_set> out;
  for (const auto& p : paths) {
    std::size_t line_no = 0;
    for (const auto& line : split_lines(read_file(p))) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        out.push_back(annotation_set_from_json(nlohmann::json::parse(line)));
      } catch (const std::exception& e) {
        throw error(p + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
  return out;
}

void print_sets(const std::vector<annotation_set>& sets) {
  for (const auto& s : sets) std::cout << to_json(s).dump() << "\n";
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void print_eval(const eval_result& r) {
  std::cout << "precision\t" << fixed(r.precision) << "\n"
            << "recall\t" << fixed(r.recall) << "\n"
            << "micro_f1\t" << fixed(r.micro_f1) << "\n"
            << "true_positives\t" << r.true_positives << "\n"
            << "predicted\t" << r.predicted << "\n"
            << "support\t" << r.support << "\n";
  for (const auto& [type, s] : r.per_type)
    std::cout << "type\t" << type << "\t" << fixed(s.precision) << "\t" << fixed(s.recall) << "\t" << fixed(s.f1) << "\t"
              << s.support << "\n";
}

corpus load_corpus(const std::string& path) { return read_corpus(read_file(path)); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"khub: scientific-literature knowledge pipeline"};
  app.require_subcommand(1);
  std::function<void()> run;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "ingest documents into a corpus file (JSON lines)");
  std::vector<std::string> ingest_inputs;
  std::string ingest_format = "auto";
  std::uint64_t ingest_seed = 0;
  ingest->add_option("inputs", ingest_inputs, "document files")->required()->check(CLI::ExistingFile);
  ingest->add_option("--format", ingest_format, "tei-xml, plain-text or auto (by extension)");
  ingest->add_option("--seed", ingest_seed, "id seed mixed into document ids");
  ingest->callback([&] {
    run = [&] {
      corpus c;
      for (const auto& path : ingest_inputs) {
        auto fmt = ingest_format == "auto"
                       ? (std::filesystem::path(path).extension() == ".xml" ? source_format::tei_xml : source_format::plain_text)
                       : parse_source_format(ingest_format).value();
        c.add(ingest_structured(read_file(path), fmt, {ingest_seed}));
      }
      std::cout << write_corpus(c);
    };
  });

  // schema validate
  auto* schema_cmd = app.add_subcommand("schema", "ontology schema tools");
  schema_cmd->require_subcommand(1);
  auto* schema_validate = schema_cmd->add_subcommand("validate", "check a schema and optionally annotation sets");
  std::string sv_schema;
  std::vector<std::string> sv_sets;
  schema_validate->add_option("--schema", sv_schema, "schema YAML")->required()->check(CLI::ExistingFile);
  schema_validate->add_option("--annotations", sv_sets, "annotation set files (JSON lines)")->check(CLI::ExistingFile);
  schema_validate->callback([&] {
    run = [&] {
      ontology_schema schema;
      try {
        schema = load_schema(read_file(sv_schema));
      } catch (const schema_error& e) {
        throw validation_failure(std::string("schema: ") + e.what());
      }
      std::size_t problems = 0;
      for (const auto& s : read_sets(sv_sets))
        for (const auto& v : validate(s, schema).violations) {
          std::cout << s.doc_id << "\t" << v.ann_id << "\t" << v.kind << "\t" << v.message << "\n";
          ++problems;
        }
      if (problems) throw validation_failure(std::to_string(problems) + " violation(s)");
      std::cout << "ok\t" << schema.entity_types().size() << " entity types\t" << schema.rules().size() << " rules\n";
    };
  });

  // annotate-regex
  auto* regex_cmd = app.add_subcommand("annotate-regex", "gazetteer annotation of a corpus");
  std::string rx_corpus, rx_rules, rx_schema;
  regex_cmd->add_option("--corpus", rx_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  regex_cmd->add_option("--rules", rx_rules, "gazetteer: <type> TAB <regex> TAB <cs|ci>")->required()->check(CLI::ExistingFile);
  regex_cmd->add_option("--schema", rx_schema, "schema YAML (checks rule types)")->check(CLI::ExistingFile);
  regex_cmd->callback([&] {
    run = [&] {
      std::optional<ontology_schema> schema;
      if (!rx_schema.empty()) schema = load_schema(read_file(rx_schema));
      auto rules = parse_gazetteer(read_file(rx_rules), schema ? &*schema : nullptr);
      std::vector<annotation_set> sets;
      auto docs = load_corpus(rx_corpus);
      for (const auto& d : docs.documents()) sets.push_back(regex_annotate(d, rules));
      print_sets(sets);
    };
  });

  // train
  auto* train_cmd = app.add_subcommand("train", "train an NER or RC model; writes the model JSON");
  std::string tr_corpus, tr_schema, tr_model = "ner";
  std::vector<std::string> tr_sets;
  hyperparameters hp;
  train_cmd->add_option("--corpus", tr_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--annotations", tr_sets, "annotation set files")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--schema", tr_schema, "schema YAML (required for rc)")->check(CLI::ExistingFile);
  train_cmd->add_option("--model", tr_model, "ner or rc")->check(CLI::IsMember({"ner", "rc"}));
  train_cmd->add_option("--epochs", hp.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr", hp.learning_rate, "base step size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--l2", hp.l2, "L2 penalty")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--max-span-len", hp.max_span_len, "longest candidate span in tokens")->check(CLI::PositiveNumber);
  train_cmd->add_option("--threshold", hp.threshold, "span acceptance threshold")->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--feature-dim", hp.feature_dim, "hashed feature dimension")->check(CLI::PositiveNumber);
  train_cmd->callback([&] {
    run = [&] {
      auto records = export_training(load_corpus(tr_corpus), read_sets(tr_sets)).records;
      if (tr_model == "ner") {
        auto r = train_ner(records, hp);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
        std::cout << serialize_model(r.model);
      } else {
        if (tr_schema.empty()) throw CLI::ValidationError("--schema", "rc training needs --schema");
        std::cout << serialize_model(train_rc(records, load_schema(read_file(tr_schema)), hp).model);
      }
    };
  });

  // auto-annotate
  auto* auto_cmd = app.add_subcommand("auto-annotate", "annotate a corpus with trained models");
  std::string aa_corpus, aa_ner, aa_rc, aa_schema;
  auto_cmd->add_option("--corpus", aa_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  auto_cmd->add_option("--ner", aa_ner, "NER model JSON")->required()->check(CLI::ExistingFile);
  auto_cmd->add_option("--rc", aa_rc, "RC model JSON")->required()->check(CLI::ExistingFile);
  auto_cmd->add_option("--schema", aa_schema, "schema YAML")->required()->check(CLI::ExistingFile);
  auto_cmd->callback([&] {
    run = [&] {
      auto ner = load_ner_model(read_file(aa_ner));
      auto rc = load_rc_model(read_file(aa_rc));
      auto schema = load_schema(read_file(aa_schema));
      std::vector<annotation_set> sets;
      auto docs = load_corpus(aa_corpus);
      for (const auto& d : docs.documents()) sets.push_back(auto_annotate(d, ner, rc, schema));
      print_sets(sets);
    };
  });

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "micro P/R/F1 of predicted against gold entities");
  std::string ev_pred, ev_gold, ev_text;
  eval_cmd->add_option("--pred", ev_pred, "predictions: standoff (.ann, with --text) or annotation sets")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--gold", ev_gold, "gold, same format as --pred")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--text", ev_text, "paragraph text for standoff inputs")->check(CLI::ExistingFile);
  eval_cmd->callback([&] {
    run = [&] {
      if (!ev_text.empty()) {
        auto text = read_file(ev_text);
        auto pred = parse_standoff(read_file(ev_pred), text, "p");
        auto gold = parse_standoff(read_file(ev_gold), text, "p");
        print_eval(evaluate_micro_f1(pred, gold));
      } else {
        print_eval(evaluate_micro_f1(read_sets({ev_pred}), read_sets({ev_gold})));
      }
    };
  });

  // graph build|triples|subgraph
  auto* graph_cmd = app.add_subcommand("graph", "knowledge graph tools");
  graph_cmd->require_subcommand(1);
  auto* gb = graph_cmd->add_subcommand("build", "build the graph dump from a corpus and annotation sets");
  std::string g_corpus, g_file;
  std::vector<std::string> g_sets, g_paras;
  triple_filter g_filter;
  gb->add_option("--corpus", g_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  gb->add_option("--annotations", g_sets, "annotation set files")->check(CLI::ExistingFile);
  gb->callback([&] { run = [&] { std::cout << serialize_graph(build_graph(load_corpus(g_corpus), read_sets(g_sets))); }; });
  auto* gt = graph_cmd->add_subcommand("triples", "list (head, relation, tail) triples");
  gt->add_option("--graph", g_file, "graph dump")->required()->check(CLI::ExistingFile);
  gt->add_option("--head-type", g_filter.head_type, "head entity type");
  gt->add_option("--relation", g_filter.relation, "relation name");
  gt->add_option("--tail-type", g_filter.tail_type, "tail entity type");
  gt->callback([&] {
    run = [&] {
      for (const auto& t : query_triples(load_graph(g_file), g_filter))
        std::cout << t.head.props.at("surface") << "\t" << t.head.props.at("entity_type") << "\t" << t.relation << "\t"
                  << t.tail.props.at("surface") << "\t" << t.tail.props.at("entity_type") << "\n";
    };
  });
  auto* gs = graph_cmd->add_subcommand("subgraph", "subgraph induced by paragraphs");
  gs->add_option("--graph", g_file, "graph dump")->required()->check(CLI::ExistingFile);
  gs->add_option("--para", g_paras, "paragraph ids")->required();
  gs->callback([&] { run = [&] { std::cout << serialize_graph(subgraph_for_paragraphs(load_graph(g_file), g_paras)); }; });

  // index build|query
  auto* index_cmd = app.add_subcommand("index", "paragraph retrieval index");
  index_cmd->require_subcommand(1);
  std::string ix_corpus, ix_file, ix_query;
  std::size_t ix_dim = 256, ix_k = 3;
  auto* ib = index_cmd->add_subcommand("build", "embed every paragraph");
  ib->add_option("--corpus", ix_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  ib->add_option("--dim", ix_dim, "embedding dimension")->check(CLI::PositiveNumber);
  ib->callback([&] { run = [&] { std::cout << serialize_index(index_paragraphs(load_corpus(ix_corpus), hashing_embedder(ix_dim))); }; });
  auto* iq = index_cmd->add_subcommand("query", "top-k paragraphs for a query");
  iq->add_option("--index", ix_file, "index dump")->required()->check(CLI::ExistingFile);
  iq->add_option("--q", ix_query, "query text")->required();
  iq->add_option("--k", ix_k, "number of hits")->check(CLI::PositiveNumber);
  iq->callback([&] {
    run = [&] {
      auto idx = load_index(ix_file);
      for (const auto& h : top_k(idx, hashing_embedder(idx.dimension()), ix_query, ix_k))
        std::cout << h.para_id << "\t" << format_score(h.score) << "\n";
    };
  });

  // ask
  auto* ask_cmd = app.add_subcommand("ask", "answer a question from the top 3 paragraphs");
  std::string q_corpus, q_index, q_graph, q_text, q_model = "default", q_templates;
  bool q_mock = false, q_json = false;
  generation_params q_params;
  ask_cmd->add_option("--corpus", q_corpus, "corpus file")->required()->check(CLI::ExistingFile);
  ask_cmd->add_option("--index", q_index, "index dump")->required()->check(CLI::ExistingFile);
  ask_cmd->add_option("--graph", q_graph, "graph dump")->required()->check(CLI::ExistingFile);
  ask_cmd->add_option("--q", q_text, "question")->required();
  ask_cmd->add_flag("--mock", q_mock, "offline extractive backend (no network)");
  ask_cmd->add_option("--model-id", q_model, "model id sent to the generation endpoint");
  ask_cmd->add_option("--max-tokens", q_params.max_tokens, "generation length")->check(CLI::PositiveNumber);
  ask_cmd->add_option("--temperature", q_params.temperature, "sampling temperature")->check(CLI::NonNegativeNumber);
  ask_cmd->add_option("--templates", q_templates, "directory with per_context.txt and summary.txt")->check(CLI::ExistingDirectory);
  ask_cmd->add_flag("--json", q_json, "print the answer as JSON instead of the transcript");
  ask_cmd->callback([&] {
    run = [&] {
      std::unique_ptr<generation_backend> backend;
      if (q_mock) {
        backend = std::make_unique<mock_backend>();
        q_model = "mock";
      } else {
        const char* url = std::getenv("KHUB_GEN_URL");
        if (!url || !*url) throw CLI::ValidationError("ask", "set KHUB_GEN_URL (and optionally KHUB_GEN_TOKEN) or pass --mock");
        backend = std::make_unique<http_backend>(http_backend::options{url});
      }
      prompt_templates templates = default_templates();
      if (!q_templates.empty()) {
        templates.per_context = parse_template(read_file(std::filesystem::path(q_templates) / "per_context.txt"));
        templates.summary = parse_template(read_file(std::filesystem::path(q_templates) / "summary.txt"));
      }
      auto docs = load_corpus(q_corpus);
      auto idx = load_index(q_index);
      auto g = load_graph(q_graph);
      hashing_embedder emb(idx.empty() ? 256 : idx.dimension());
      auto a = ask({q_text, "", q_model, q_params}, {docs, idx, emb, g, templates}, *backend);
      std::cout << (q_json ? to_json(a).dump(2) + "\n" : format_transcript(a));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }
  try {
    run();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "khub: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const validation_failure& e) {
    std::cerr << "khub: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "khub: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
