#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kmine/corpus.hpp"
#include "kmine/fusion.hpp"
#include "kmine/model.hpp"
#include "kmine/objectives.hpp"
#include "kmine/optimizer.hpp"
#include "kmine/tokenizer.hpp"

namespace kmine::harness {

struct TrainConfig {
  // optimization
  double lr_pretrained = 2e-5;
  double lr_raw = 5e-4;
  std::string schedule = "linear_decay";
  int effective_batch = 64;
  int micro_batch = 8;
  int max_steps = 2000;
  double lambda = 0.0;
  fusion::Mode mode = fusion::Mode::fused;
  objectives::SelectionLoss selection_loss = objectives::SelectionLoss::bce;
  std::uint64_t seed = 1;
  // data
  std::string train_data;
  std::string vocab;
  // encoding
  int k_len = 32;
  int history_window = 3;
  int max_len = 128;
  int max_resp_len = 32;
  double temperature = 1.0;
  // model
  int d_model = 64;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  double dropout = 0.0;
  int max_pos = 256;
  std::string backbone = "tiny_random";
  // harness
  int checkpoint_every = 0;  // 0 = final checkpoint only
  std::string checkpoint_out = "checkpoint.bin";
  std::string trace_out;     // optional CSV path
  bool deterministic = false;

  int accumulation_steps() const { return effective_batch / micro_batch; }
  void validate() const;
  model::ModelConfig model_config(const encoding::Tokenizer& tok) const;

  // Flat key=value file ('#' comments). Unknown keys are an error.
  static TrainConfig load(const std::string& path);
  void apply_kv(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_kv() const;
};

struct LocTrace {
  std::vector<std::pair<int, double>> entries;  // (step, mean_loc)

  void add(int step, double mean_loc);
  std::string to_csv() const;  // header: step,mean_loc
  static LocTrace from_csv(const std::string& text);
  void save(const std::string& path) const;
  static LocTrace load(const std::string& path);
};

struct TrainResult {
  LocTrace trace;
  long long steps = 0;
  double final_loss = 0.0;
};

// Runs the full loop: per-sample graphs, gradient accumulation to
// effective_batch, AdamW step, Loc logged every step, periodic + final
// checkpoints written to cfg.checkpoint_out. `start_step` > 0 resumes from
// pre-loaded model/optimizer state (used by checkpoint resume).
TrainResult train(const TrainConfig& cfg, const corpus::Dataset& data,
                  const encoding::Tokenizer& tok, model::Model& model, AdamW& opt,
                  long long start_step = 0);

// Convenience wrapper: builds tokenizer, model and optimizer from the
// config, trains, returns the result. Loads data from cfg.train_data.
TrainResult train_from_config(const TrainConfig& cfg);

bool deterministic_env();

}  // namespace kmine::harness
