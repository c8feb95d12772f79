#pragma once

#include <string>

#include "kmine/corpus.hpp"
#include "kmine/metrics.hpp"
#include "kmine/model.hpp"
#include "kmine/tokenizer.hpp"
#include "kmine/trainer.hpp"

namespace kmine::harness {

struct EvalOptions {
  metrics::Setting setting = metrics::Setting::All;
  fusion::Mode mode = fusion::Mode::fused;
  int k_len = 32;
  int history_window = 3;
  int max_len = 128;
  int max_resp_len = 32;
  double temperature = 1.0;
  model::GenStrategy strategy = model::GenStrategy::greedy();

  static EvalOptions from_config(const TrainConfig& cfg, metrics::Setting setting);
};

// Teacher-forced PPL, greedy-generated responses scored with F1/KF1/ROUGE,
// and the per-turn knowledge distribution scored with R@1 and Loc.
metrics::EvalReport evaluate(model::Model& m, const encoding::Tokenizer& tok,
                             const corpus::Dataset& data, const EvalOptions& opt);

// Loads the checkpoint (self-contained vocab + config) and evaluates the
// JSONL dataset at `data_path`. If `vocab_path` is non-empty its fingerprint
// must match the checkpoint's (VocabMismatch otherwise).
metrics::EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                                        const std::string& data_path, metrics::Setting setting,
                                        const std::string& vocab_path = "");

}  // namespace kmine::harness
