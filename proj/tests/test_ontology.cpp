#include <gtest/gtest.h>

#include "khub/ontology.hpp"

using namespace khub;

TEST(Schema, LoadsValidConfig) {
  auto s = load_schema("entities: [A, B]\nrules: [[A, rel, B]]\n");
  EXPECT_EQ(s.entity_types(), (std::set<std::string>{"A", "B"}));
  EXPECT_EQ(s.rules().size(), 1u);
  EXPECT_TRUE(s.allowed("A", "rel", "B"));
}

TEST(Schema, UndeclaredTypeNamed) {
  try {
    load_schema("entities: [A]\nrules: [[A, rel, B]]\n");
    FAIL();
  } catch (const schema_error& e) {
    EXPECT_STREQ(e.what(), "B undeclared");
  }
}

TEST(Schema, DuplicateRuleCollapses) {
  auto s = load_schema("entities: [A, B, A]\nrules:\n  - [A, rel, B]\n  - [A, rel, B]\n");
  EXPECT_EQ(s.rules().size(), 1u);
  EXPECT_EQ(s.entity_types().size(), 2u);
}

TEST(Schema, UnknownFieldRejected) {
  EXPECT_THROW(load_schema("entities: [A]\nrules: []\nextra: 1\n"), schema_error);
}

TEST(Schema, MalformedRuleRejected) {
  EXPECT_THROW(load_schema("entities: [A]\nrules: [[A, rel]]\n"), schema_error);
  EXPECT_THROW(load_schema("entities: [A, '']\n"), schema_error);
  EXPECT_THROW(load_schema("[1, 2]"), schema_error);
  EXPECT_THROW(load_schema("entities: [A"), schema_error);
}

TEST(Schema, NamesAreCaseSensitive) {
  auto s = load_schema("entities: [Material, MATERIAL]\nrules: []\n");
  EXPECT_EQ(s.entity_types().size(), 2u);
}

TEST(Allowed, DirectedAndExact) {
  auto s = load_schema("entities: [A, B]\nrules: [[A, r, B]]\n");
  EXPECT_TRUE(allowed(s, "A", "r", "B"));
  EXPECT_FALSE(allowed(s, "B", "r", "A"));
  EXPECT_FALSE(allowed(s, "A", "unknown", "B"));
}

TEST(Schema, SerializeLoadIsIdentity) {
  auto s = load_schema(
      "entities: [MATERIAL, PROPERTY, 'Odd: name', \"with,comma\"]\n"
      "rules: [[MATERIAL, hasProperty, PROPERTY], ['Odd: name', 'rel [x]', \"with,comma\"]]\n");
  auto text = serialize_schema(s);
  EXPECT_EQ(load_schema(text), s);
  EXPECT_EQ(serialize_schema(load_schema(text)), text);
}

TEST(Schema, SerializedShape) {
  auto s = load_schema("entities: [MATERIAL, PROPERTY]\nrules: [[MATERIAL, hasProperty, PROPERTY]]\n");
  EXPECT_EQ(serialize_schema(s), "entities: [MATERIAL, PROPERTY]\nrules:\n  - [MATERIAL, hasProperty, PROPERTY]\n");
}

namespace {
ontology_listing two_entity_listing() {
  return load_listing(
      "entities:\n"
      "  - {name: A, parent: Thing, relations: [[r, B]]}\n"
      "  - {name: B, parent: Thing}\n");
}
}  // namespace

TEST(ImportListing, SelectAllEqualsListing) {
  auto s = import_listing(two_entity_listing(), {"A", "B"});
  EXPECT_EQ(s, load_schema("entities: [A, B]\nrules: [[A, r, B]]\n"));
}

TEST(ImportListing, EndpointFilter) {
  auto s = import_listing(two_entity_listing(), {"A"});
  EXPECT_EQ(s.entity_types(), (std::set<std::string>{"A"}));
  EXPECT_TRUE(s.rules().empty());
}

TEST(ImportListing, UnknownSelection) {
  EXPECT_THROW(import_listing(two_entity_listing(), {"C"}), schema_error);
}
