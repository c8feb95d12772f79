#pragma once

#include <optional>
#include <string>
#include <vector>

namespace kmine::corpus {

// Pool entry meaning "the agent used no knowledge for this turn". Scored
// like any other option under the All setting.
inline const std::string kNoKnowledgeSentinel = "no_passages_used";

enum class Speaker { user, agent };

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;  // trimmed, non-empty
};

struct DialogueTurn {
  std::vector<Utterance> context;     // >= 1, last speaker = user
  std::vector<std::string> pool;      // m >= 1 knowledge options
  std::optional<int> gold_index;      // in [0, m) when present
  std::string response;
  bool uses_knowledge = false;        // gold present and not the sentinel

  int m() const { return static_cast<int>(pool.size()); }
};

enum class Split { train, valid, test_seen, test_unseen };
enum class Setting { All, wKn };

struct Dataset {
  std::vector<DialogueTurn> turns;
  Split split = Split::train;
  Setting setting = Setting::All;

  std::size_t size() const { return turns.size(); }
};

struct SyntheticSpec {
  int vocab_size = 72;
  int num_topics = 12;
  int pool_size = 5;       // m
  int facts_per_topic = 4;
  double noise_rate = 0.0;
  std::uint64_t seed = 0;
};

// One JSON object per line:
//   {"context":[{"speaker":"user|agent","text":"..."}],
//    "knowledge":["..."], "gold_index":<int, optional>, "response":"..."}
// setting = wKn drops turns that do not use knowledge. Line order preserved.
// Throws MalformedLine / GoldOutOfRange.
Dataset load_jsonl(const std::string& path, Setting setting, Split split = Split::train);

// Parse a single JSONL line (line_no used for error reporting only).
DialogueTurn parse_turn(const std::string& line, int line_no);

// Inverse of load_jsonl: one JSON object per line, schema above.
void save_jsonl(const Dataset& d, const std::string& path);
std::string turn_to_json(const DialogueTurn& t);

// Filter to knowledge-using turns (subsequence of the input).
Dataset filter_wkn(const Dataset& d);

// Deterministic key-value retrieval corpus. Each turn asks about one topic;
// exactly one pool option carries that topic token, and every option's fact
// tokens are sampled fresh per turn from a global fact pool. The response
// copies the gold option's facts, so it is only predictable by reading the
// pool; the gold option is identifiable by brute-force topic matching.
Dataset generate_synthetic(const SyntheticSpec& spec, int n_turns);

// Ordinary vocabulary implied by a SyntheticSpec, index = token id.
// Layout: template words, topic tokens, fact tokens, filler up to vocab_size.
std::vector<std::string> synthetic_vocab(const SyntheticSpec& spec);

// Order-preserving partition; sizes are floor allocations with the
// remainder assigned to the first split. Fractions must sum to 1 +- 1e-9.
std::vector<Dataset> split_dataset(const Dataset& d, const std::vector<double>& fractions);

// Brute-force oracle: index of the unique pool option containing the topic
// token mentioned in the last user utterance, -1 if not unique/absent.
int topic_match_oracle(const DialogueTurn& turn, const SyntheticSpec& spec);

}  // namespace kmine::corpus
