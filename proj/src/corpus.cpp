#include "kmine/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kmine/errors.hpp"
#include "kmine/util.hpp"

using nlohmann::json;

namespace kmine::corpus {

namespace {

Speaker parse_speaker(const std::string& s, int line_no) {
  if (s == "user") return Speaker::user;
  if (s == "agent") return Speaker::agent;
  throw MalformedLine(line_no, "speaker must be 'user' or 'agent', got '" + s + "'");
}

void validate_turn(DialogueTurn& t, int line_no) {
  if (t.context.empty()) throw MalformedLine(line_no, "context is empty");
  if (t.context.back().speaker != Speaker::user)
    throw MalformedLine(line_no, "last context utterance must be from the user");
  if (t.pool.empty()) throw MalformedLine(line_no, "knowledge pool is empty");
  int sentinels = 0;
  for (const auto& k : t.pool)
    if (k == kNoKnowledgeSentinel) ++sentinels;
  if (sentinels > 1) throw MalformedLine(line_no, "more than one no-knowledge sentinel in pool");
  if (t.gold_index) {
    if (*t.gold_index < 0 || *t.gold_index >= t.m())
      throw GoldOutOfRange(line_no, *t.gold_index, t.m());
  }
  t.uses_knowledge = t.gold_index && t.pool[*t.gold_index] != kNoKnowledgeSentinel;
}

}  // namespace

DialogueTurn parse_turn(const std::string& line, int line_no) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw MalformedLine(line_no, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw MalformedLine(line_no, "line is not a JSON object");
  for (const char* key : {"context", "knowledge", "response"})
    if (!j.contains(key)) throw MalformedLine(line_no, std::string("missing key '") + key + "'");

  DialogueTurn t;
  try {
    for (const auto& u : j.at("context")) {
      Utterance utt;
      utt.speaker = parse_speaker(u.at("speaker").get<std::string>(), line_no);
      utt.text = trim(u.at("text").get<std::string>());
      if (utt.text.empty()) throw MalformedLine(line_no, "utterance text empty after trimming");
      t.context.push_back(std::move(utt));
    }
    for (const auto& k : j.at("knowledge")) t.pool.push_back(k.get<std::string>());
    t.response = j.at("response").get<std::string>();
    if (j.contains("gold_index")) {
      if (!j.at("gold_index").is_number_integer())
        throw MalformedLine(line_no, "gold_index must be an integer");
      t.gold_index = j.at("gold_index").get<int>();
    }
  } catch (const json::exception& e) {
    throw MalformedLine(line_no, std::string("schema violation: ") + e.what());
  }
  validate_turn(t, line_no);
  return t;
}

Dataset load_jsonl(const std::string& path, Setting setting, Split split) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  Dataset d;
  d.setting = setting;
  d.split = split;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    DialogueTurn t = parse_turn(line, line_no);
    if (setting == Setting::wKn && !t.uses_knowledge) continue;
    d.turns.push_back(std::move(t));
  }
  return d;
}

std::string turn_to_json(const DialogueTurn& t) {
  json j;
  j["context"] = json::array();
  for (const auto& u : t.context) {
    j["context"].push_back(
        {{"speaker", u.speaker == Speaker::user ? "user" : "agent"}, {"text", u.text}});
  }
  j["knowledge"] = t.pool;
  if (t.gold_index) j["gold_index"] = *t.gold_index;
  j["response"] = t.response;
  return j.dump();
}

void save_jsonl(const Dataset& d, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  for (const auto& t : d.turns) out << turn_to_json(t) << "\n";
}

Dataset filter_wkn(const Dataset& d) {
  Dataset out;
  out.split = d.split;
  out.setting = Setting::wKn;
  for (const auto& t : d.turns)
    if (t.uses_knowledge) out.turns.push_back(t);
  return out;
}

std::vector<std::string> synthetic_vocab(const SyntheticSpec& spec) {
  static const std::vector<std::string> kTemplateWords = {"tell", "me", "about",
                                                          "the", "answer", "is"};
  const int required = static_cast<int>(kTemplateWords.size()) +
                       spec.num_topics * (1 + spec.facts_per_topic);
  if (spec.vocab_size < required)
    throw SpecInfeasible("vocab_size " + std::to_string(spec.vocab_size) + " < required " +
                         std::to_string(required));
  std::vector<std::string> vocab = kTemplateWords;
  for (int t = 0; t < spec.num_topics; ++t) vocab.push_back("topic" + std::to_string(t));
  for (int t = 0; t < spec.num_topics; ++t)
    for (int f = 0; f < spec.facts_per_topic; ++f)
      vocab.push_back("fact" + std::to_string(t) + "_" + std::to_string(f));
  for (int w = static_cast<int>(vocab.size()); w < spec.vocab_size; ++w)
    vocab.push_back("filler" + std::to_string(w));
  return vocab;
}

Dataset generate_synthetic(const SyntheticSpec& spec, int n_turns) {
  if (n_turns < 1) throw SpecInfeasible("n_turns must be >= 1");
  if (spec.pool_size < 2) throw SpecInfeasible("pool_size must be >= 2");
  if (spec.num_topics < spec.pool_size)
    throw SpecInfeasible("num_topics " + std::to_string(spec.num_topics) + " < pool_size " +
                         std::to_string(spec.pool_size));
  if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
    throw SpecInfeasible("noise_rate must be in [0,1]");
  const std::vector<std::string> vocab = synthetic_vocab(spec);  // also checks vocab_size

  Rng rng(spec.seed);
  Dataset d;
  d.setting = Setting::All;
  d.turns.reserve(n_turns);

  if (spec.facts_per_topic < 1) throw SpecInfeasible("facts_per_topic must be >= 1");

  auto topic_token = [&](int t) { return "topic" + std::to_string(t); };
  // global fact pool; options draw from it fresh each turn, so response
  // content is recoverable only by reading the gold option
  std::vector<std::string> fact_pool;
  for (int t = 0; t < spec.num_topics; ++t)
    for (int f = 0; f < spec.facts_per_topic; ++f)
      fact_pool.push_back("fact" + std::to_string(t) + "_" + std::to_string(f));
  std::vector<int> fact_idx(fact_pool.size());
  for (std::size_t f = 0; f < fact_pool.size(); ++f) fact_idx[f] = static_cast<int>(f);

  for (int i = 0; i < n_turns; ++i) {
    DialogueTurn turn;
    const int gold_topic = rng.uniform_int(0, spec.num_topics - 1);

    // m distinct topics: gold + uniform sample without replacement of the rest.
    std::vector<int> others;
    others.reserve(spec.num_topics - 1);
    for (int t = 0; t < spec.num_topics; ++t)
      if (t != gold_topic) others.push_back(t);
    rng.shuffle(others);
    std::vector<int> topics(others.begin(), others.begin() + (spec.pool_size - 1));
    const int gold_pos = rng.uniform_int(0, spec.pool_size - 1);
    topics.insert(topics.begin() + gold_pos, gold_topic);

    // Each option: its topic token + facts sampled without replacement from
    // the global pool, in sampled order.
    std::vector<std::string> gold_facts;
    for (int p = 0; p < spec.pool_size; ++p) {
      rng.shuffle(fact_idx);
      std::vector<std::string> facts;
      for (int f = 0; f < spec.facts_per_topic; ++f) facts.push_back(fact_pool[fact_idx[f]]);
      std::string option = topic_token(topics[p]);
      for (const auto& f : facts) option += " " + f;
      turn.pool.push_back(std::move(option));
      if (p == gold_pos) gold_facts = std::move(facts);
    }

    turn.context.push_back({Speaker::user, "tell me about " + topic_token(gold_topic)});

    std::string response = "the answer is";
    for (const auto& f : gold_facts) {
      std::string tok = f;
      if (spec.noise_rate > 0.0 && rng.uniform01() < spec.noise_rate)
        tok = vocab[rng.uniform_int(0, spec.vocab_size - 1)];
      response += " " + tok;
    }
    turn.response = std::move(response);
    turn.gold_index = gold_pos;
    turn.uses_knowledge = true;
    d.turns.push_back(std::move(turn));
  }
  return d;
}

std::vector<Dataset> split_dataset(const Dataset& d, const std::vector<double>& fractions) {
  if (fractions.empty()) throw BadFractions("no fractions given");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw BadFractions("negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw BadFractions("fractions sum to " + std::to_string(sum));

  const std::size_t n = d.turns.size();
  std::vector<std::size_t> sizes;
  std::size_t assigned = 0;
  for (double f : fractions) {
    const auto s = static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
    sizes.push_back(s);
    assigned += s;
  }
  sizes[0] += n - assigned;  // remainder to the first split

  std::vector<Dataset> out;
  std::size_t pos = 0;
  for (std::size_t s : sizes) {
    Dataset part;
    part.split = d.split;
    part.setting = d.setting;
    part.turns.assign(d.turns.begin() + pos, d.turns.begin() + pos + s);
    pos += s;
    out.push_back(std::move(part));
  }
  return out;
}

int topic_match_oracle(const DialogueTurn& turn, const SyntheticSpec& spec) {
  const auto& last = turn.context.back().text;
  const auto words = split_ws(last);
  std::string topic;
  for (const auto& w : words)
    if (w.rfind("topic", 0) == 0) topic = w;
  if (topic.empty()) return -1;
  (void)spec;
  int match = -1;
  for (int i = 0; i < turn.m(); ++i) {
    for (const auto& w : split_ws(turn.pool[i])) {
      if (w == topic) {
        if (match >= 0) return -1;  // not unique
        match = i;
        break;
      }
    }
  }
  return match;
}

}  // namespace kmine::corpus
