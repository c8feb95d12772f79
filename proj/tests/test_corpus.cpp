#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "kmine/corpus.hpp"
#include "kmine/errors.hpp"
#include "kmine/util.hpp"

using namespace kmine;
using namespace kmine::corpus;

namespace {

std::string write_tmp(const std::string& contents) {
  static int counter = 0;
  std::string path = "/tmp/kmine_corpus_test_" + std::to_string(counter++) + ".jsonl";
  std::ofstream out(path);
  out << contents;
  return path;
}

SyntheticSpec small_spec(int seed = 7) {
  SyntheticSpec s;
  s.vocab_size = 72;
  s.num_topics = 12;
  s.pool_size = 5;
  s.facts_per_topic = 4;
  s.noise_rate = 0.0;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("parse_turn maps fields directly") {
  auto t = parse_turn(
      R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":["a","b"],"gold_index":1,"response":"b!"})",
      1);
  CHECK(t.m() == 2);
  CHECK(t.context.size() == 1);
  CHECK(t.context[0].speaker == Speaker::user);
  CHECK(t.context[0].text == "hi");
  REQUIRE(t.gold_index.has_value());
  CHECK(*t.gold_index == 1);
  CHECK(t.response == "b!");
  CHECK(t.uses_knowledge);
}

TEST_CASE("no-knowledge sentinel clears uses_knowledge and is dropped under wKn") {
  const std::string line =
      R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":["no_passages_used","x"],"gold_index":0,"response":"ok"})";
  auto t = parse_turn(line, 1);
  CHECK_FALSE(t.uses_knowledge);

  auto path = write_tmp(line + "\n");
  auto all = load_jsonl(path, Setting::All);
  CHECK(all.turns.size() == 1);
  auto wkn = load_jsonl(path, Setting::wKn);
  CHECK(wkn.turns.empty());
  std::remove(path.c_str());
}

TEST_CASE("gold_index out of bounds raises GoldOutOfRange with line number") {
  const std::string line =
      R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":["a","b"],"gold_index":5,"response":"r"})";
  CHECK_THROWS_AS(parse_turn(line, 3), GoldOutOfRange);
  try {
    parse_turn(line, 3);
  } catch (const GoldOutOfRange& e) {
    CHECK(std::string(e.what()).find("3") != std::string::npos);
  }
}

TEST_CASE("malformed lines raise MalformedLine") {
  CHECK_THROWS_AS(parse_turn("not json", 1), MalformedLine);
  CHECK_THROWS_AS(parse_turn("[1,2]", 1), MalformedLine);
  CHECK_THROWS_AS(parse_turn(R"({"context":[],"knowledge":["a"],"response":"r"})", 1),
                  MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(R"({"context":[{"speaker":"user","text":"hi"}],"response":"r"})", 1),
      MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(
          R"({"context":[{"speaker":"agent","text":"hi"}],"knowledge":["a"],"response":"r"})", 1),
      MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(
          R"({"context":[{"speaker":"user","text":"  "}],"knowledge":["a"],"response":"r"})", 1),
      MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(
          R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":[],"response":"r"})", 1),
      MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(
          R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":["no_passages_used","no_passages_used"],"response":"r"})",
          1),
      MalformedLine);
  CHECK_THROWS_AS(
      parse_turn(
          R"({"context":[{"speaker":"user","text":"hi"}],"knowledge":["a"],"gold_index":"x","response":"r"})",
          1),
      MalformedLine);
}

TEST_CASE("utterance text is trimmed and speakers parsed") {
  auto t = parse_turn(
      R"({"context":[{"speaker":"agent","text":"  hello "},{"speaker":"user","text":"q"}],"knowledge":["k"],"response":"r"})",
      1);
  CHECK(t.context[0].speaker == Speaker::agent);
  CHECK(t.context[0].text == "hello");
  CHECK_FALSE(t.gold_index.has_value());
  CHECK_FALSE(t.uses_knowledge);
}

TEST_CASE("JSONL round-trip preserves every field") {
  auto data = generate_synthetic(small_spec(), 25);
  auto path = write_tmp("");
  save_jsonl(data, path);
  auto back = load_jsonl(path, Setting::All);
  REQUIRE(back.turns.size() == data.turns.size());
  for (std::size_t i = 0; i < data.turns.size(); ++i) {
    const auto& a = data.turns[i];
    const auto& b = back.turns[i];
    REQUIRE(a.context.size() == b.context.size());
    for (std::size_t c = 0; c < a.context.size(); ++c) {
      CHECK(a.context[c].speaker == b.context[c].speaker);
      CHECK(a.context[c].text == b.context[c].text);
    }
    CHECK(a.pool == b.pool);
    CHECK(a.gold_index == b.gold_index);
    CHECK(a.response == b.response);
    CHECK(a.uses_knowledge == b.uses_knowledge);
  }
  std::remove(path.c_str());
}

TEST_CASE("synthetic generation is a pure function of the seed") {
  auto a = generate_synthetic(small_spec(7), 40);
  auto b = generate_synthetic(small_spec(7), 40);
  REQUIRE(a.turns.size() == b.turns.size());
  for (std::size_t i = 0; i < a.turns.size(); ++i)
    CHECK(turn_to_json(a.turns[i]) == turn_to_json(b.turns[i]));
  auto c = generate_synthetic(small_spec(8), 40);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.turns.size(); ++i)
    if (turn_to_json(a.turns[i]) != turn_to_json(c.turns[i])) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("brute-force topic match identifies gold uniquely on every turn") {
  for (int seed : {7, 21, 1234}) {
    auto spec = small_spec(seed);
    auto data = generate_synthetic(spec, 120);
    for (const auto& t : data.turns) {
      REQUIRE(t.gold_index.has_value());
      CHECK(topic_match_oracle(t, spec) == *t.gold_index);
      CHECK(t.m() == spec.pool_size);
      CHECK(t.context.back().speaker == Speaker::user);
    }
  }
}

TEST_CASE("context carries exactly one topic token; distractor topics are distinct") {
  auto spec = small_spec(11);
  auto data = generate_synthetic(spec, 60);
  for (const auto& t : data.turns) {
    int topic_tokens = 0;
    for (const auto& w : split_ws(t.context.back().text))
      if (w.rfind("topic", 0) == 0) ++topic_tokens;
    CHECK(topic_tokens == 1);
    std::set<std::string> topics;
    for (const auto& opt : t.pool) topics.insert(split_ws(opt)[0]);
    CHECK(topics.size() == t.pool.size());
  }
}

TEST_CASE("noise_rate=0 keeps response tokens inside gold option plus template") {
  auto spec = small_spec(9);
  auto data = generate_synthetic(spec, 80);
  const std::set<std::string> tmpl = {"tell", "me", "about", "the", "answer", "is"};
  for (const auto& t : data.turns) {
    std::set<std::string> allowed = tmpl;
    for (const auto& w : split_ws(t.pool[*t.gold_index])) allowed.insert(w);
    for (const auto& w : split_ws(t.response)) CHECK(allowed.count(w) == 1);
  }
}

TEST_CASE("noise_rate=1 corrupts at least one response on a reasonable sample") {
  auto spec = small_spec(9);
  spec.noise_rate = 1.0;
  auto data = generate_synthetic(spec, 20);
  const std::set<std::string> tmpl = {"tell", "me", "about", "the", "answer", "is"};
  bool corrupted = false;
  for (const auto& t : data.turns) {
    std::set<std::string> allowed = tmpl;
    for (const auto& w : split_ws(t.pool[*t.gold_index])) allowed.insert(w);
    for (const auto& w : split_ws(t.response))
      if (!allowed.count(w)) corrupted = true;
  }
  CHECK(corrupted);
}

TEST_CASE("infeasible specs are rejected") {
  auto spec = small_spec();
  spec.num_topics = 3;  // < pool_size 5
  CHECK_THROWS_AS(generate_synthetic(spec, 1), SpecInfeasible);

  spec = small_spec();
  spec.vocab_size = 10;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), SpecInfeasible);
  CHECK_THROWS_AS(synthetic_vocab(spec), SpecInfeasible);

  spec = small_spec();
  spec.pool_size = 1;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), SpecInfeasible);

  spec = small_spec();
  CHECK_THROWS_AS(generate_synthetic(spec, 0), SpecInfeasible);

  spec = small_spec();
  spec.noise_rate = 1.5;
  CHECK_THROWS_AS(generate_synthetic(spec, 1), SpecInfeasible);
}

TEST_CASE("split_dataset allocates floors with remainder to the first split") {
  auto data = generate_synthetic(small_spec(), 10);
  auto parts = split_dataset(data, {0.8, 0.2});
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].turns.size() == 8);
  CHECK(parts[1].turns.size() == 2);
  // order-preserving partition
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(turn_to_json(parts[0].turns[i]) == turn_to_json(data.turns[i]));
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(turn_to_json(parts[1].turns[i]) == turn_to_json(data.turns[8 + i]));

  auto ident = split_dataset(data, {1.0});
  REQUIRE(ident.size() == 1);
  CHECK(ident[0].turns.size() == 10);

  auto three = generate_synthetic(small_spec(3), 3);
  auto halves = split_dataset(three, {0.5, 0.5});
  CHECK(halves[0].turns.size() == 2);
  CHECK(halves[1].turns.size() == 1);
}

TEST_CASE("bad fractions are rejected") {
  auto data = generate_synthetic(small_spec(), 4);
  CHECK_THROWS_AS(split_dataset(data, {}), BadFractions);
  CHECK_THROWS_AS(split_dataset(data, {0.5, 0.4}), BadFractions);
  CHECK_THROWS_AS(split_dataset(data, {1.5, -0.5}), BadFractions);
}

TEST_CASE("wKn is a subsequence of All and never larger") {
  auto spec = small_spec(5);
  auto data = generate_synthetic(spec, 30);
  // sprinkle in turns without gold and with the sentinel
  DialogueTurn plain;
  plain.context.push_back({Speaker::user, "hello there"});
  plain.pool = {"alpha beta", "gamma"};
  plain.response = "hi";
  plain.uses_knowledge = false;
  data.turns.insert(data.turns.begin() + 3, plain);
  DialogueTurn sentinel = plain;
  sentinel.pool = {kNoKnowledgeSentinel, "gamma"};
  sentinel.gold_index = 0;
  data.turns.insert(data.turns.begin() + 10, sentinel);

  auto wkn = filter_wkn(data);
  CHECK(wkn.turns.size() <= data.turns.size());
  CHECK(wkn.turns.size() == 30);
  std::size_t cursor = 0;
  for (const auto& t : wkn.turns) {
    bool found = false;
    for (; cursor < data.turns.size(); ++cursor) {
      if (turn_to_json(data.turns[cursor]) == turn_to_json(t)) {
        found = true;
        ++cursor;
        break;
      }
    }
    CHECK(found);
  }
}

TEST_CASE("synthetic vocab covers template, topics, facts, filler") {
  auto spec = small_spec();
  auto vocab = synthetic_vocab(spec);
  CHECK(static_cast<int>(vocab.size()) == spec.vocab_size);
  std::set<std::string> set(vocab.begin(), vocab.end());
  CHECK(set.size() == vocab.size());
  CHECK(set.count("tell") == 1);
  CHECK(set.count("topic0") == 1);
  CHECK(set.count("topic11") == 1);
  CHECK(set.count("fact11_3") == 1);
}
