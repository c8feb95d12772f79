#include "kmine/evaluate.hpp"

#include <cmath>

#include "kmine/assembly.hpp"
#include "kmine/checkpoint.hpp"
#include "kmine/errors.hpp"
#include "kmine/fusion.hpp"
#include "kmine/objectives.hpp"

namespace kmine::harness {

EvalOptions EvalOptions::from_config(const TrainConfig& cfg, metrics::Setting setting) {
  EvalOptions o;
  o.setting = setting;
  o.mode = cfg.mode;
  o.k_len = cfg.k_len;
  o.history_window = cfg.history_window;
  o.max_len = cfg.max_len;
  o.max_resp_len = cfg.max_resp_len;
  o.temperature = cfg.temperature;
  return o;
}

metrics::EvalReport evaluate(model::Model& m, const encoding::Tokenizer& tok,
                             const corpus::Dataset& data, const EvalOptions& opt) {
  const corpus::Dataset* d = &data;
  corpus::Dataset filtered;
  if (opt.setting == metrics::Setting::wKn) {
    filtered = corpus::filter_wkn(data);
    d = &filtered;
  }
  if (d->turns.empty()) throw EmptyEvaluation("no turns to evaluate under this setting");

  const int pad_id = tok.specials().pad;
  const metrics::TextNormalizer norm;
  KahanSum nll_sum, f1_sum, kf1_sum, r1_sum, rouge1_sum, rougeL_sum, loc_sum;
  long long token_count = 0;
  int r1_n = 0, kf1_n = 0, loc_n = 0;

  for (const corpus::DialogueTurn& turn : d->turns) {
    encoding::AssembledInput input =
        encoding::assemble(turn, tok, opt.k_len, opt.history_window, opt.max_len);

    ad::Graph g;
    ad::Expr stacked = m.encode_stacked(g, input, nullptr);
    ad::Expr feats = fusion::pool_features_expr(g, stacked, input);
    ad::Expr raw = fusion::score_expr(g, feats, m.scorer_w(), m.scorer_b());
    ad::Expr alpha_e = fusion::normalize_expr(g, raw, opt.temperature);
    ad::Expr fused_e = fusion::aggregate_expr(g, stacked, alpha_e, opt.mode, input.m, input.T);
    const Eigen::VectorXd alpha = g.value(alpha_e).col(0);

    model::FusedState fused;
    fused.states = g.value(fused_e);
    fused.mask = fusion::union_mask(input.attention_mask);

    // teacher-forced NLL
    std::vector<int> target = encoding::encode_response(turn, tok, opt.max_resp_len);
    std::vector<int> dec_in(target.begin(), target.end() - 1);
    std::vector<int> dec_tgt(target.begin() + 1, target.end());
    ad::Expr logits = m.decode_logits_expr(g, fused_e, fused.mask, dec_in, nullptr);
    auto [mean_nll, n_tok] = objectives::nll_response(g.value(logits), dec_tgt, pad_id);
    nll_sum.add(mean_nll * n_tok);
    token_count += n_tok;

    // generation metrics
    std::vector<int> gen = m.generate(fused, opt.max_resp_len, opt.strategy,
                                      tok.specials().bos, tok.specials().eos);
    const std::string pred = tok.decode(gen, /*skip_specials=*/true);
    f1_sum.add(metrics::unigram_f1(pred, turn.response, norm));
    rouge1_sum.add(metrics::rouge(pred, turn.response, metrics::RougeMode::r1, norm));
    rougeL_sum.add(metrics::rouge(pred, turn.response, metrics::RougeMode::rl, norm));
    if (turn.gold_index && turn.pool[*turn.gold_index] != corpus::kNoKnowledgeSentinel) {
      kf1_sum.add(metrics::kf1(pred, turn.pool[*turn.gold_index], norm));
      ++kf1_n;
    }

    // selection metrics
    if (turn.gold_index) {
      r1_sum.add(metrics::recall_at_1(alpha, *turn.gold_index));
      ++r1_n;
    }
    if (turn.m() >= 2) {
      loc_sum.add(metrics::localization(alpha));
      ++loc_n;
    }
  }

  metrics::EvalReport r;
  r.setting = opt.setting;
  r.n_turns = static_cast<int>(d->turns.size());
  r.f1 = f1_sum.value() / r.n_turns;
  r.rouge1 = rouge1_sum.value() / r.n_turns;
  r.rougeL = rougeL_sum.value() / r.n_turns;
  r.kf1 = kf1_n > 0 ? kf1_sum.value() / kf1_n : 0.0;
  r.kf1_count = kf1_n;
  r.r_at_1 = r1_n > 0 ? r1_sum.value() / r1_n : 0.0;
  r.r_at_1_count = r1_n;
  r.mean_loc = loc_n > 0 ? loc_sum.value() / loc_n : 0.0;
  r.loc_count = loc_n;
  r.token_count = token_count;
  r.ppl = metrics::perplexity(nll_sum.value(), token_count);
  return r;
}

metrics::EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                                        const std::string& data_path, metrics::Setting setting,
                                        const std::string& vocab_path) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  if (!vocab_path.empty()) {
    auto external = encoding::load_vocab(vocab_path);
    if (external->fingerprint() != ckpt.vocab_fingerprint)
      throw VocabMismatch("vocabulary does not match the checkpoint's");
  }
  corpus::Dataset data = corpus::load_jsonl(data_path, corpus::Setting::All);
  EvalOptions opt = EvalOptions::from_config(ckpt.cfg, setting);
  return evaluate(*ckpt.model, *ckpt.tokenizer, data, opt);
}

}  // namespace kmine::harness
