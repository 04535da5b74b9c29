// SPDX-License-Identifier: Apache-2.0
#include <random>

#include <gtest/gtest.h>

#include "selfcheck/caption_parser.hpp"
#include "selfcheck/text.hpp"

namespace selfcheck {
namespace {

using A = AgentClass;

std::vector<std::string> texts(const std::vector<Sentence>& s) {
  std::vector<std::string> out;
  for (const auto& x : s) out.push_back(x.text);
  return out;
}

Sentence sent(std::string t) { return Sentence{std::move(t), 0}; }

TEST(Segment, PromptExample) {
  const auto s = segment_sentences("There are cars. There are people.");
  EXPECT_EQ(texts(s), (std::vector<std::string>{"There are cars", "There are people"}));
  EXPECT_EQ(s[0].index, 0u);
  EXPECT_EQ(s[1].index, 1u);
}

TEST(Segment, EmptyAndUnterminated) {
  EXPECT_TRUE(segment_sentences("").empty());
  EXPECT_TRUE(segment_sentences("  ..  ! ? ").empty());
  EXPECT_EQ(texts(segment_sentences("There is a car")), (std::vector<std::string>{"There is a car"}));
}

TEST(Segment, AllTerminatorsAndWhitespace) {
  EXPECT_EQ(texts(segment_sentences("  Cars!\n\nPeople?  Trees.  ")),
            (std::vector<std::string>{"Cars", "People", "Trees"}));
}

TEST(Segment, IdempotentOnJoinedOutput) {
  std::mt19937 rng(11);
  const std::string alphabet = "ab .!?\n";
  for (int i = 0; i < 500; ++i) {
    std::string s;
    const int n = static_cast<int>(rng() % 40);
    for (int k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    const auto once = segment_sentences(s);
    EXPECT_EQ(segment_sentences(join_sentences(once)), once) << s;
    for (const auto& x : once) {
      EXPECT_FALSE(x.text.empty());
      EXPECT_EQ(text::trim(x.text), x.text);
      EXPECT_EQ(x.text.find_first_of(".!?"), std::string::npos);
    }
  }
}

TEST(Canonicalize, Examples) {
  const auto t = default_synonym_table();
  EXPECT_EQ(canonicalize_term("cars", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("tree", t), std::nullopt);
  EXPECT_EQ(canonicalize_term("Pedestrians", t), A::pedestrian);
  EXPECT_EQ(canonicalize_term("  TRUCK ", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("Bike  Riders", t), A::cyclist);
  EXPECT_EQ(canonicalize_term("", t), std::nullopt);
}

TEST(Canonicalize, PluralFallbacks) {
  SynonymTable t;
  t.add("lorry", A::vehicle);
  t.add("taxi", A::vehicle);
  t.add("bus", A::vehicle);
  EXPECT_EQ(canonicalize_term("lorries", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("taxis", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("buses", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("s", t), std::nullopt);
}

TEST(Canonicalize, BareBicycleSwitch) {
  EXPECT_EQ(canonicalize_term("bicycles", default_synonym_table()), A::cyclist);
  EXPECT_EQ(canonicalize_term("bicycles", default_synonym_table({false})), std::nullopt);
  EXPECT_EQ(canonicalize_term("cyclists", default_synonym_table({false})), A::cyclist);
}

TEST(Extract, AllMentions) {
  const auto t = default_synonym_table();
  EXPECT_EQ(extract_sentence_agents(sent("There is a pedestrian and a vehicle"), t),
            (AgentSet{A::pedestrian, A::vehicle}));
  EXPECT_EQ(extract_sentence_agents(sent("There is a tree"), t), AgentSet{});
  EXPECT_EQ(extract_sentence_agents(sent("There is a person on a bicycle"), t), AgentSet{A::cyclist});
  EXPECT_EQ(extract_sentence_agents(sent("Two men, a bus and several bike riders"), t),
            (AgentSet{A::pedestrian, A::vehicle, A::cyclist}));
}

// Hand-parsed corpus: sentence -> class of its first noun block.
TEST(Extract, FirstNounCorpus) {
  const auto t = default_synonym_table();
  const ExtractionOptions first{ExtractionMode::first_noun, false};
  const std::vector<std::pair<std::string, AgentSet>> corpus = {
      {"There are cars and trucks", {A::vehicle}},
      {"There is a pedestrian and a vehicle", {A::pedestrian}},
      {"There is a tree and a car", {}},
      {"There are two red cars", {A::vehicle}},
      {"There are people walking near buses", {A::pedestrian}},
      {"There is a person on a bicycle", {A::cyclist}},
      {"There are cyclists", {A::cyclist}},
      {"There are buildings with pedestrians", {}},
      {"Cars", {A::vehicle}},
      {"There are", {}},
      {"", {}},
  };
  for (const auto& [s, expected] : corpus) {
    EXPECT_EQ(extract_sentence_agents(sent(s), t, first), expected) << s;
  }
}

TEST(Extract, NegationFilter) {
  const auto t = default_synonym_table();
  const ExtractionOptions keep{ExtractionMode::all_mentions, false};
  const ExtractionOptions drop{ExtractionMode::all_mentions, true};
  EXPECT_EQ(extract_sentence_agents(sent("There are no pedestrians"), t, keep), AgentSet{A::pedestrian});
  EXPECT_EQ(extract_sentence_agents(sent("There are no pedestrians"), t, drop), AgentSet{});
  EXPECT_EQ(extract_sentence_agents(sent("There are not any cyclists but cars"), t, drop), AgentSet{A::vehicle});
  EXPECT_EQ(extract_sentence_agents(sent("There are cars and no people"), t, drop), AgentSet{A::vehicle});
  EXPECT_EQ(extract_sentence_agents(sent("There are no pedestrians"), t, {ExtractionMode::first_noun, true}),
            AgentSet{});
}

TEST(CaptionAgents, Examples) {
  const auto t = default_synonym_table();
  EXPECT_EQ(caption_agents(segment_sentences("There are cars. There are people."), t),
            (AgentSet{A::vehicle, A::pedestrian}));
  EXPECT_EQ(caption_agents({}, t), AgentSet{});
  EXPECT_EQ(caption_agents(segment_sentences("There is a tree. There is a vehicle."), t), AgentSet{A::vehicle});
}

std::string random_sentence(std::mt19937& rng) {
  static const std::vector<std::string> words = {
      "there", "are", "is", "a", "no", "not", "any", "cars", "people", "tree", "and", "on",
      "person", "bicycle", "bike", "riders", "red", "bus", "with", "cyclist", "men", ",", "buildings"};
  std::string s;
  const int n = static_cast<int>(rng() % 10);
  for (int i = 0; i < n; ++i) s += words[rng() % words.size()] + " ";
  return s;
}

TEST(Extract, Properties) {
  const auto t = default_synonym_table();
  std::mt19937 rng(12);
  for (int i = 0; i < 2000; ++i) {
    const auto s = sent(random_sentence(rng));
    for (bool neg : {false, true}) {
      const auto first = extract_sentence_agents(s, t, {ExtractionMode::first_noun, neg});
      const auto all = extract_sentence_agents(s, t, {ExtractionMode::all_mentions, neg});
      EXPECT_TRUE(first.is_subset_of(all)) << s.text;
      EXPECT_LE(first.size(), 1u);
      EXPECT_EQ(all, extract_sentence_agents(s, t, {ExtractionMode::all_mentions, neg}));
    }
  }
}

TEST(CaptionAgents, MonotoneInSentences) {
  const auto t = default_synonym_table();
  std::mt19937 rng(13);
  for (int i = 0; i < 500; ++i) {
    std::vector<Sentence> sentences;
    AgentSet prev;
    for (int k = 0; k < 6; ++k) {
      sentences.push_back(Sentence{random_sentence(rng), sentences.size()});
      const auto now = caption_agents(sentences, t);
      EXPECT_TRUE(prev.is_subset_of(now));
      prev = now;
    }
  }
}

TEST(SynonymFile, ParsesAndReportsErrors) {
  const auto t = SynonymTable::parse("# comment\n  lorry = vehicle # trailing\n\nE-Scooter Rider=cyclist\n");
  EXPECT_EQ(t.size(), 2u);
  EXPECT_EQ(canonicalize_term("Lorry", t), A::vehicle);
  EXPECT_EQ(canonicalize_term("e-scooter riders", t), A::cyclist);
  EXPECT_THROW(SynonymTable::parse("lorry"), ConfigError);
  EXPECT_THROW(SynonymTable::parse("lorry=truckish"), ConfigError);
  try {
    SynonymTable::parse("a=vehicle\nb=tree\n", "x.txt");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.txt:2"), std::string::npos);
  }
}

TEST(SynonymFile, ShippedFileMatchesBuiltin) {
  const auto shipped = SynonymTable::load(std::string(SELFCHECK_SOURCE_DIR) + "/data/synonyms.txt");
  EXPECT_EQ(shipped.entries(), default_synonym_table().entries());
}

}  // namespace
}  // namespace selfcheck
