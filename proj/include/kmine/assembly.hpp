#pragma once

#include <Eigen/Dense>
#include <vector>

#include "kmine/corpus.hpp"
#include "kmine/tokenizer.hpp"

namespace kmine::encoding {

struct Span {
  int begin = 0;
  int end = 0;  // half-open [begin, end)
  int length() const { return end - begin; }
  bool empty() const { return end <= begin; }
};

// The m aligned token rows for one turn. Row r is
//   [CLS] + pad-truncate(pool[r], k_len) + tagged history,
// so every row has the same length and the knowledge / history division sits
// at the same positions in all rows.
struct AssembledInput {
  Eigen::MatrixXi token_ids;      // m x T
  Eigen::MatrixXd attention_mask; // m x T, 0 exactly on PAD positions
  Span knowledge_span;            // [1, 1 + k_len), shared by all rows
  Span last_utterance_span;       // final user utterance text tokens (no tag)
  int m = 0;
  int T = 0;
  bool truncated_last_utterance = false;  // warning flag, never a hard failure
};

// history = last history_window utterances, each prefixed by its speaker
// tag. If 1 + k_len + |history| exceeds max_len, whole utterances are
// dropped oldest-first; if the last utterance alone still does not fit, its
// text is head-truncated and the warning flag is set.
AssembledInput assemble(const corpus::DialogueTurn& turn, const Tokenizer& tok, int k_len,
                        int history_window, int max_len);

// BOS + response tokens + EOS, truncated to max_resp_len keeping EOS.
std::vector<int> encode_response(const corpus::DialogueTurn& turn, const Tokenizer& tok,
                                 int max_resp_len);

}  // namespace kmine::encoding
