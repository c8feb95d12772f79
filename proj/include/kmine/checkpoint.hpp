#pragma once

#include <memory>
#include <string>

#include "kmine/model.hpp"
#include "kmine/optimizer.hpp"
#include "kmine/tokenizer.hpp"
#include "kmine/trainer.hpp"

namespace kmine::harness {

// Self-contained binary checkpoint: JSON header (config, vocab, parameter
// manifest, optimizer metadata) followed by raw little-endian doubles for
// every parameter and, when present, the optimizer moments. Bitwise stable:
// saving the same state twice produces identical bytes.
void save_checkpoint(const std::string& path, const model::Model& m, const AdamW* opt,
                     const TrainConfig& cfg, const encoding::Tokenizer& tok, long long step);

struct LoadedCheckpoint {
  long long step = 0;
  TrainConfig cfg;
  std::unique_ptr<encoding::WhitespaceTokenizer> tokenizer;
  std::unique_ptr<model::Model> model;
  bool has_optimizer = false;
  OptimConfig opt_config;
  std::vector<AdamW::Slot> opt_slots;  // aligned with model->store().all()
  long long opt_steps = 0;
  std::uint64_t vocab_fingerprint = 0;

  // Optimizer rebuilt from the stored moments; throws if none were saved.
  std::unique_ptr<AdamW> make_optimizer();
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace kmine::harness
