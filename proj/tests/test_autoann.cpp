#include <gtest/gtest.h>

#include <random>

#include "khub/autoann.hpp"
#include "support/generators.hpp"
#include "support/synthetic.hpp"

using namespace khub;

namespace {

document one_paragraph_doc(const std::string& text, const std::string& doc_id = "d") {
  heuristic_tagger tagger;
  document d;
  d.doc_id = doc_id;
  d.paragraphs.push_back(build_paragraph(doc_id + ".p0", text, tagger));
  return d;
}

hyperparameters small_hyper() {
  hyperparameters h;
  h.feature_dim = 1u << 12;
  h.epochs = 30;
  return h;
}

}  // namespace

TEST(EnumerateSpans, Counts) {
  EXPECT_EQ(enumerate_spans(2, 8).size(), 3u);
  EXPECT_EQ(enumerate_spans(0, 8).size(), 0u);
  EXPECT_EQ(enumerate_spans(3, 1).size(), 3u);
  EXPECT_EQ(enumerate_spans(10, 8).size(), 52u);
}

TEST(EnumerateSpans, CountFormulaProperty) {
  for (std::size_t n = 0; n < 20; ++n)
    for (std::size_t l = 1; l < 10; ++l) {
      std::size_t expected = 0;
      for (std::size_t k = 1; k <= std::min(n, l); ++k) expected += n - k + 1;
      EXPECT_EQ(enumerate_spans(n, l).size(), expected);
    }
}

TEST(DecodeNested, NestedAndCrossing) {
  // tokens "a b c"; A=[0,2) B=[1,3) C=[0,1)
  std::vector<scored_span> s = {{{0, 2}, 0.9}, {{1, 3}, 0.8}, {{0, 1}, 0.7}};
  EXPECT_EQ(decode_nested(s, 0.5), (std::vector<text_span>{{0, 2}, {0, 1}}));
  EXPECT_EQ(decode_nested({{{0, 2}, 0.9}, {{1, 3}, 0.8}}, 0.5), (std::vector<text_span>{{0, 2}}));
}

TEST(DecodeNested, ThresholdAndEmpty) {
  EXPECT_TRUE(decode_nested({}, 0.5).empty());
  EXPECT_TRUE(decode_nested({{{0, 1}, 0.49}}, 0.5).empty());
  EXPECT_EQ(decode_nested({{{0, 1}, 0.5}}, 0.5).size(), 1u);
}

// Soundness (no crossing, all above threshold) and maximality (every rejected candidate
// above threshold crosses a kept span), checked against brute force.
TEST(DecodeNested, SoundAndMaximalProperty) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::size_t n = 1 + rng() % 8;
    std::vector<scored_span> cands;
    for (auto c : enumerate_spans(n, 8)) cands.push_back({c, std::uniform_real_distribution<double>(0, 1)(rng)});
    auto kept = decode_nested(cands, 0.5);
    for (const auto& a : kept)
      for (const auto& b : kept) EXPECT_FALSE(a.crosses(b));
    for (const auto& c : cands) {
      bool in = std::find(kept.begin(), kept.end(), c.range) != kept.end();
      if (c.score < 0.5) {
        EXPECT_FALSE(in);
      } else if (!in) {
        EXPECT_TRUE(std::any_of(kept.begin(), kept.end(), [&](const text_span& k) { return k.crosses(c.range); }));
      }
    }
  }
}

TEST(Features, ShapeAndClass) {
  EXPECT_EQ(token_shape("LiFePO4"), "XxXxXXd");
  EXPECT_EQ(token_shape("anode"), "xxxx");
  EXPECT_EQ(token_shape("2024"), "dddd");
  EXPECT_EQ(token_class("LiFePO4"), "mixed-alnum");
  EXPECT_EQ(token_class("anode"), "lower");
  EXPECT_EQ(token_class("Cathode"), "title");
  EXPECT_EQ(token_class("3.5"), "numeric");
}

TEST(Features, DifferByShapeAndNormalised) {
  training_record r;
  r.tokens = {"LiFePO4", "anode"};
  r.pos = {"PROPN", "NOUN"};
  auto a = featurize_span(r, {0, 1}, 1u << 18);
  auto b = featurize_span(r, {1, 2}, 1u << 18);
  EXPECT_NE(a, b);
  double norm = 0;
  for (const auto& [i, v] : a.entries) norm += v * v;
  EXPECT_NEAR(norm, span_feature_norm * span_feature_norm, 1e-9);
  EXPECT_EQ(featurize_span(r, {0, 1}, 1u << 18), a);
}

TEST(SpanDetector, ZeroEpochsScoresHalf) {
  std::mt19937 rng(1);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 10), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto h = small_hyper();
  h.epochs = 0;
  auto m = train_span_detector(recs, h);
  EXPECT_DOUBLE_EQ(m.score(featurize_span(recs[0], {0, 1}, h.feature_dim)), 0.5);
}

TEST(SpanDetector, EmptyFeaturesScoreIsBias) {
  std::mt19937 rng(1);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 10), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto m = train_span_detector(recs, small_hyper());
  EXPECT_DOUBLE_EQ(m.score(sparse_vector{}), sigmoid(m.bias));
  EXPECT_LT(m.bias, 0.0);  // negatives dominate
}

TEST(SpanDetector, LossNonIncreasing) {
  std::mt19937 rng(2);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 20), "s");
  auto recs = export_training(data.docs, data.gold).records;
  training_curve curve;
  train_span_detector(recs, small_hyper(), &curve);
  ASSERT_EQ(curve.loss.size(), 31u);
  for (std::size_t i = 1; i < curve.loss.size(); ++i) EXPECT_LE(curve.loss[i], curve.loss[i - 1] + 1e-12);
}

TEST(SpanDetector, NoGoldIsError) {
  training_record r;
  r.tokens = {"a"};
  r.pos = {"DET"};
  EXPECT_THROW(train_span_detector({r}, small_hyper()), train_error);
}

TEST(EntityClassifier, SingleTypeWarns) {
  training_record r;
  r.tokens = {"Li45", "x"};
  r.pos = {"PROPN", "X"};
  r.spans = {{0, 1, "MATERIAL"}};
  auto res = train_entity_classifier({r}, small_hyper());
  EXPECT_EQ(res.warnings.size(), 1u);
  EXPECT_EQ(res.classifier.classes, (std::vector<std::string>{"MATERIAL"}));
}

TEST(RelationClassifier, LossNonIncreasingAndNeedsRelation) {
  std::mt19937 rng(3);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 20), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto res = train_rc(recs, fixtures::synthetic_schema(), small_hyper());
  for (std::size_t i = 1; i < res.curve.loss.size(); ++i) EXPECT_LE(res.curve.loss[i], res.curve.loss[i - 1] + 1e-12);
  EXPECT_EQ(res.model.relation_list(), (std::vector<std::string>{"NONE", "causes"}));
  for (auto& r : recs)
    for (auto& p : r.pairs) p.label = "NONE";
  EXPECT_THROW(train_rc(recs, fixtures::synthetic_schema(), small_hyper()), train_error);
}

TEST(RelationClassifier, DisallowedPredictionMasked) {
  rc_model m;
  m.hyper = small_hyper();
  m.classifier.classes = {"NONE", "causes"};
  m.classifier.weights.assign(2, std::vector<double>(m.hyper.feature_dim, 0.0));
  m.classifier.biases = {0.0, 1.0};  // always prefers "causes"
  auto narrow = load_schema("entities: [MATERIAL, VALUE]\nrules: [[VALUE, causes, VALUE]]\n");
  training_record r;
  r.tokens = {"Li45", "causes", "Ab12"};
  r.pos = {"PROPN", "VERB", "PROPN"};
  predicted_span h{{0, 1}, "MATERIAL", 1}, t{{2, 3}, "MATERIAL", 1};
  EXPECT_EQ(predict_relation(m, r, h, t, fixtures::synthetic_schema()), "causes");
  EXPECT_EQ(predict_relation(m, r, h, t, narrow), "NONE");
}

TEST(Learning, SyntheticCorpusIsLearned) {
  std::mt19937 rng(11);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 500), "s");
  auto [train, dev] = split_train_dev(export_training(data.docs, data.gold).records);
  auto ner = train_ner(train);
  auto rc = train_rc(train, fixtures::synthetic_schema());
  auto f1 = evaluate_records(ner.model, dev).micro_f1;
  auto acc = pair_accuracy(rc.model, dev, fixtures::synthetic_schema());
  RecordProperty("ner_f1", std::to_string(f1));
  RecordProperty("rc_acc", std::to_string(acc));
  std::printf("ner f1 %.4f  rc acc %.4f\n", f1, acc);
  EXPECT_GE(f1, 0.95);
  EXPECT_GE(acc, 0.95);
}

TEST(Gazetteer, ParseAndErrors) {
  auto rules = parse_gazetteer("# comment\nMATERIAL\tLi[A-Za-z]+\tcs\n\nVALUE\t[0-9]+\tci\n");
  ASSERT_EQ(rules.size(), 2u);
  EXPECT_EQ(rules[0].entity_type, "MATERIAL");
  EXPECT_FALSE(rules[1].case_sensitive);
  EXPECT_THROW(parse_gazetteer("MATERIAL\t[\tcs\n"), error);
  EXPECT_THROW(parse_gazetteer("MATERIAL\tx\n"), error);
  EXPECT_THROW(parse_gazetteer("OTHER\tx\tcs\n", &fixtures::synthetic_schema()), schema_error);
}

TEST(Gazetteer, LeftmostLongestAndRulePriority) {
  auto doc = one_paragraph_doc("LiFePO4 and LiCoO2 at 25 C.");
  auto rules = parse_gazetteer("MATERIAL\tLi|LiFePO4|LiCoO2\tcs\nVALUE\tLiFe\tcs\nVALUE\t[0-9]+ C\tcs\n");
  auto set = regex_annotate(doc, rules);
  ASSERT_EQ(set.entities.size(), 3u);
  EXPECT_EQ(set.entities[0].surface, "LiFePO4");
  EXPECT_EQ(set.entities[0].type, "MATERIAL");
  EXPECT_EQ(set.entities[1].surface, "LiCoO2");
  EXPECT_EQ(set.entities[2].surface, "25 C");
  EXPECT_EQ(set.entities[2].source, provenance::regex);
  EXPECT_EQ(set.entities[0].id, "T1");
}

TEST(Gazetteer, EqualLengthEarlierRuleWins) {
  auto doc = one_paragraph_doc("anode");
  auto set = regex_annotate(doc, parse_gazetteer("B\tanode\tcs\nA\tANODE\tci\n"));
  ASSERT_EQ(set.entities.size(), 1u);
  EXPECT_EQ(set.entities[0].type, "B");
}

TEST(Gazetteer, UnicodeOffsets) {
  auto doc = one_paragraph_doc("électrode α-phase");
  auto set = regex_annotate(doc, parse_gazetteer("PHASE\tα-phase\tcs\n"));
  ASSERT_EQ(set.entities.size(), 1u);
  EXPECT_EQ(set.entities[0].span, (text_span{10, 17}));
}

TEST(Evaluate, FixedExample) {
  annotation_set gold, pred;
  gold.doc_id = pred.doc_id = "d";
  gold.entities = {{"T1", "A", "p", {0, 5}, "", provenance::human}, {"T2", "B", "p", {10, 12}, "", provenance::human}};
  pred.entities = {{"T1", "A", "p", {0, 5}, "", provenance::model}, {"T2", "A", "p", {10, 12}, "", provenance::model}};
  auto r = evaluate_micro_f1(pred, gold);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 0.5);
  EXPECT_DOUBLE_EQ(r.micro_f1, 0.5);
  EXPECT_DOUBLE_EQ(r.per_type["A"].f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.per_type["B"].f1, 0.0);
  EXPECT_EQ(r.per_type["B"].support, 1u);
}

TEST(Evaluate, IdentityEmptyAndMismatch) {
  std::mt19937 rng(5);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 5), "s");
  EXPECT_DOUBLE_EQ(evaluate_micro_f1(data.gold[0], data.gold[0]).micro_f1, 1.0);
  annotation_set empty;
  empty.doc_id = data.gold[0].doc_id;
  auto r = evaluate_micro_f1(empty, data.gold[0]);
  EXPECT_DOUBLE_EQ(r.precision, 0.0);
  EXPECT_DOUBLE_EQ(r.micro_f1, 0.0);
  empty.doc_id = "other";
  EXPECT_THROW(evaluate_micro_f1(empty, data.gold[0]), eval_error);
}

TEST(AutoAnnotate, SchemaMismatchAndModelRoundTrip) {
  std::mt19937 rng(9);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 40), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto ner = train_ner(recs, small_hyper()).model;
  auto rc = train_rc(recs, fixtures::synthetic_schema(), small_hyper()).model;
  auto narrow = load_schema("entities: [MATERIAL]\nrules: []\n");
  const auto& doc = data.docs.documents()[0];
  EXPECT_THROW(auto_annotate(doc, ner, rc, narrow), model_schema_error);

  auto ner2 = load_ner_model(serialize_model(ner));
  auto rc2 = load_rc_model(serialize_model(rc));
  EXPECT_EQ(ner2, ner);
  EXPECT_EQ(rc2, rc);
  EXPECT_EQ(serialize_model(ner2), serialize_model(ner));

  auto a = auto_annotate(doc, ner, rc, fixtures::synthetic_schema());
  EXPECT_EQ(a.doc_id, doc.doc_id);
  EXPECT_NO_THROW(check_integrity(a));
  for (const auto& e : a.entities) EXPECT_EQ(e.source, provenance::model);
  EXPECT_EQ(a, auto_annotate(doc, ner2, rc2, fixtures::synthetic_schema()));
}

TEST(AutoAnnotate, ForeignFeatureSpecRejected) {
  std::mt19937 rng(9);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 10), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto text = serialize_model(train_ner(recs, small_hyper()).model);
  auto pos = text.find(std::string(span_feature_spec));
  text.replace(pos, span_feature_spec.size(), "other-spec-v9");
  EXPECT_THROW(load_ner_model(text), model_load_error);
  EXPECT_THROW(load_ner_model("{"), model_load_error);
  EXPECT_THROW(load_rc_model(serialize_model(train_ner(recs, small_hyper()).model)), model_load_error);
}

TEST(Determinism, TrainingTwiceIsBitwiseEqual) {
  std::mt19937 rng(10);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 40), "s");
  auto recs = export_training(data.docs, data.gold).records;
  EXPECT_EQ(serialize_model(train_ner(recs, small_hyper()).model), serialize_model(train_ner(recs, small_hyper()).model));
  EXPECT_EQ(serialize_model(train_rc(recs, fixtures::synthetic_schema(), small_hyper()).model),
            serialize_model(train_rc(recs, fixtures::synthetic_schema(), small_hyper()).model));
}

TEST(Split, EveryFifthToDev) {
  std::vector<training_record> recs(10);
  for (std::size_t i = 0; i < 10; ++i) recs[i].sent_id = std::to_string(i);
  auto [train, dev] = split_train_dev(recs);
  EXPECT_EQ(train.size(), 8u);
  ASSERT_EQ(dev.size(), 2u);
  EXPECT_EQ(dev[0].sent_id, "4");
  EXPECT_EQ(dev[1].sent_id, "9");
}

TEST(EnumerateSpans, DocumentedCounts) {
  EXPECT_EQ(enumerate_spans(3, 2).size(), 5u);
  EXPECT_EQ(enumerate_spans(2, 5).size(), 3u);
  auto c = enumerate_spans(3, 2);
  EXPECT_EQ(c.front(), (text_span{0, 1}));
  EXPECT_EQ(c[1], (text_span{0, 2}));
  EXPECT_EQ(c.back(), (text_span{2, 3}));
}

TEST(DecodeNested, DocumentedExamples) {
  EXPECT_EQ(decode_nested({{{0, 4}, 0.9}, {{2, 6}, 0.8}}, 0.5), (std::vector<text_span>{{0, 4}}));
  EXPECT_EQ(decode_nested({{{0, 4}, 0.9}, {{1, 3}, 0.8}}, 0.5), (std::vector<text_span>{{0, 4}, {1, 3}}));
  EXPECT_TRUE(decode_nested({{{0, 4}, 0.2}, {{1, 3}, 0.3}}, 0.5).empty());
}

TEST(DecodeNested, TiesPreferEarlierThenLonger) {
  EXPECT_EQ(decode_nested({{{1, 3}, 0.8}, {{0, 2}, 0.8}}, 0.5), (std::vector<text_span>{{0, 2}}));
  // equal start: longer first, the shorter one nests inside it
  EXPECT_EQ(decode_nested({{{0, 1}, 0.8}, {{0, 3}, 0.8}, {{1, 4}, 0.8}}, 0.5),
            (std::vector<text_span>{{0, 3}, {0, 1}}));
}

TEST(Gazetteer, DocumentedExamples) {
  auto doc = one_paragraph_doc("LiFePO4 cathode");
  auto set = regex_annotate(doc, parse_gazetteer("MATERIAL\tLiFePO4\tcs\n"));
  ASSERT_EQ(set.entities.size(), 1u);
  EXPECT_EQ(set.entities[0].span, (text_span{0, 7}));
  EXPECT_TRUE(regex_annotate(doc, parse_gazetteer("MATERIAL\tgraphite\tcs\n")).entities.empty());
  auto tie = regex_annotate(doc, parse_gazetteer("A\tcathode\tcs\nB\tcathode\tcs\n"));
  ASSERT_EQ(tie.entities.size(), 1u);
  EXPECT_EQ(tie.entities[0].type, "A");
}

TEST(EntityClassifier, EmptyFeaturesPickLargestBias) {
  multiclass_logistic m;
  m.classes = {"A", "B", "C"};
  m.weights.assign(3, std::vector<double>(16, 0.0));
  m.biases = {0.1, 0.7, -0.2};
  EXPECT_EQ(m.classes[m.argmax(sparse_vector{})], "B");
}

TEST(EntityClassifier, SeparableTrainingExamplesGetGoldType) {
  std::mt19937 rng(12);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 60), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto m = train_entity_classifier(recs, hyperparameters{}).classifier;
  for (const auto& r : recs)
    for (const auto& g : r.spans) EXPECT_EQ(m.classes[m.argmax(featurize_span(r, {g.begin, g.end}, 1u << 18))], g.type);
}

TEST(RelationClassifier, NoSignalPairIsNone) {
  std::mt19937 rng(13);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 100), "s");
  auto recs = export_training(data.docs, data.gold).records;
  auto m = train_rc(recs, fixtures::synthetic_schema()).model;
  training_record r;
  r.tokens = {"Ab12", "zzz", "qqq", "4455"};
  r.pos = {"PROPN", "NOUN", "NOUN", "NUM"};
  predicted_span h{{0, 1}, "MATERIAL", 1}, t{{3, 4}, "VALUE", 1};
  EXPECT_EQ(predict_relation(m, r, h, t, fixtures::synthetic_schema()), "NONE");
}

namespace {

struct trained_models {
  ner_model ner;
  rc_model rc;
};

const trained_models& synthetic_models() {
  static const trained_models m = [] {
    std::mt19937 rng(21);
    auto data = fixtures::assemble(fixtures::shape_sentences(rng, 300), "train");
    auto recs = export_training(data.docs, data.gold).records;
    return trained_models{train_ner(recs).model, train_rc(recs, fixtures::synthetic_schema()).model};
  }();
  return m;
}

}  // namespace

TEST(AutoAnnotate, EmptyDocumentAndSingleEntity) {
  const auto& m = synthetic_models();
  document empty;
  empty.doc_id = "e";
  EXPECT_TRUE(auto_annotate(empty, m.ner, m.rc, fixtures::synthetic_schema()).empty());
  auto one = auto_annotate(one_paragraph_doc("The sample Ab12 was heated ."), m.ner, m.rc, fixtures::synthetic_schema());
  ASSERT_EQ(one.entities.size(), 1u);
  EXPECT_EQ(one.entities[0].surface, "Ab12");
  EXPECT_TRUE(one.relations.empty());
}

TEST(AutoAnnotate, HeldOutDocumentsMatchGeneratorAndValidate) {
  const auto& m = synthetic_models();
  std::mt19937 rng(22);
  auto data = fixtures::assemble(fixtures::shape_sentences(rng, 60), "test");
  std::vector<annotation_set> pred;
  for (const auto& d : data.docs.documents()) {
    pred.push_back(auto_annotate(d, m.ner, m.rc, fixtures::synthetic_schema()));
    EXPECT_TRUE(validate(pred.back(), fixtures::synthetic_schema()).violations.empty());
  }
  EXPECT_GE(evaluate_micro_f1(pred, data.gold).micro_f1, 0.9);
}

TEST(AutoAnnotate, CustomScorerDrivesPipeline) {
  // a scorer that marks every four-digit token as VALUE, related to its right neighbour
  struct digits : ner_scorer {
    std::vector<std::string> t{"VALUE"};
    double span_score(const training_record& s, text_span r) const override {
      return r.length() == 1 && token_shape(s.tokens[r.start]) == "dddd" ? 0.9 : 0.1;
    }
    std::string span_type(const training_record&, text_span) const override { return "VALUE"; }
    const std::vector<std::string>& types() const override { return t; }
    std::size_t max_span_len() const override { return 2; }
    double threshold() const override { return 0.5; }
  };
  struct forward : rc_scorer {
    std::vector<std::string> r{"NONE", "causes"};
    std::string relation(const training_record&, const predicted_span& h, const predicted_span& t) const override {
      return h.range.start < t.range.start ? "causes" : "NONE";
    }
    const std::vector<std::string>& relations() const override { return r; }
  };
  auto set = auto_annotate(one_paragraph_doc("The 1234 then 5678 ."), digits{}, forward{}, fixtures::synthetic_schema());
  ASSERT_EQ(set.entities.size(), 2u);
  ASSERT_EQ(set.relations.size(), 1u);
  EXPECT_EQ(set.relations[0].arg1, "T1");
  EXPECT_EQ(set.relations[0].arg2, "T2");
  EXPECT_THROW(auto_annotate(one_paragraph_doc("x"), digits{}, forward{}, load_schema("entities: [MATERIAL]\n")),
               model_schema_error);
}

TEST(Evaluate, SwapExchangesPrecisionAndRecallProperty) {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto text = fixtures::random_paragraph(rng, 5, 30);
    auto a = fixtures::random_annotation_set(rng, text, "p");
    auto b = fixtures::random_annotation_set(rng, text, "p");
    auto ab = evaluate_micro_f1(a, b);
    auto ba = evaluate_micro_f1(b, a);
    EXPECT_DOUBLE_EQ(ab.precision, ba.recall);
    EXPECT_DOUBLE_EQ(ab.recall, ba.precision);
    EXPECT_DOUBLE_EQ(ab.micro_f1, ba.micro_f1);
  }
}
