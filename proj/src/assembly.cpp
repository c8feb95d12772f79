#include "kmine/assembly.hpp"

#include <algorithm>

#include "kmine/errors.hpp"

namespace kmine::encoding {

AssembledInput assemble(const corpus::DialogueTurn& turn, const Tokenizer& tok, int k_len,
                        int history_window, int max_len) {
  if (k_len < 1) throw ConfigError("k_len must be >= 1");
  if (history_window < 1) throw ConfigError("history_window must be >= 1");
  if (max_len < 1 + k_len + 2) throw ConfigError("max_len too small for k_len");
  if (turn.pool.empty()) throw EmptyPool("turn has an empty knowledge pool");

  const Specials& sp = tok.specials();
  const int m = turn.m();

  // Tagged history utterances, most recent last.
  struct Utt {
    int tag;
    std::vector<int> text;
  };
  std::vector<Utt> history;
  const int n_ctx = static_cast<int>(turn.context.size());
  const int first = std::max(0, n_ctx - history_window);
  for (int i = first; i < n_ctx; ++i) {
    const auto& u = turn.context[static_cast<std::size_t>(i)];
    history.push_back({u.speaker == corpus::Speaker::user ? sp.user_tag : sp.agent_tag,
                       tok.encode(u.text)});
  }

  const int budget = max_len - 1 - k_len;
  auto history_len = [&history]() {
    int n = 0;
    for (const auto& u : history) n += 1 + static_cast<int>(u.text.size());
    return n;
  };
  bool truncated = false;
  while (history_len() > budget && history.size() > 1) history.erase(history.begin());
  if (history_len() > budget) {
    // Only the final utterance remains; head-truncate its text to fit.
    auto& u = history.front();
    const int keep = std::max(0, budget - 1);
    if (static_cast<int>(u.text.size()) > keep) {
      u.text.resize(static_cast<std::size_t>(keep));
      truncated = true;
    }
  }

  std::vector<int> hist_ids;
  int last_text_offset = 0;  // offset of last utterance's text within history
  for (std::size_t i = 0; i < history.size(); ++i) {
    hist_ids.push_back(history[i].tag);
    if (i + 1 == history.size()) last_text_offset = static_cast<int>(hist_ids.size());
    hist_ids.insert(hist_ids.end(), history[i].text.begin(), history[i].text.end());
  }

  const int T = 1 + k_len + static_cast<int>(hist_ids.size());
  AssembledInput out;
  out.m = m;
  out.T = T;
  out.token_ids.setConstant(m, T, sp.pad);
  out.attention_mask.setOnes(m, T);
  out.knowledge_span = {1, 1 + k_len};
  out.last_utterance_span = {1 + k_len + last_text_offset,
                             1 + k_len + last_text_offset +
                                 static_cast<int>(history.back().text.size())};
  out.truncated_last_utterance = truncated;

  for (int r = 0; r < m; ++r) {
    out.token_ids(r, 0) = sp.cls;
    std::vector<int> kn = tok.encode(turn.pool[static_cast<std::size_t>(r)]);
    if (static_cast<int>(kn.size()) > k_len) kn.resize(static_cast<std::size_t>(k_len));
    for (int j = 0; j < static_cast<int>(kn.size()); ++j)
      out.token_ids(r, 1 + j) = kn[static_cast<std::size_t>(j)];
    for (int j = static_cast<int>(kn.size()); j < k_len; ++j)
      out.attention_mask(r, 1 + j) = 0.0;  // PAD already in token_ids
    for (int j = 0; j < static_cast<int>(hist_ids.size()); ++j)
      out.token_ids(r, 1 + k_len + j) = hist_ids[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<int> encode_response(const corpus::DialogueTurn& turn, const Tokenizer& tok,
                                 int max_resp_len) {
  if (max_resp_len < 2) throw ConfigError("max_resp_len must be >= 2");
  const Specials& sp = tok.specials();
  std::vector<int> ids;
  ids.push_back(sp.bos);
  for (int id : tok.encode(turn.response)) ids.push_back(id);
  if (static_cast<int>(ids.size()) + 1 > max_resp_len)
    ids.resize(static_cast<std::size_t>(max_resp_len - 1));
  ids.push_back(sp.eos);
  return ids;
}

}  // namespace kmine::encoding
