#pragma once

#include <deque>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kmine/assembly.hpp"
#include "kmine/autodiff.hpp"
#include "kmine/util.hpp"

namespace kmine::model {

using ad::Mat;

enum class BackboneKind { tiny_random, pretrained_adapter };

struct ModelConfig {
  int d_model = 64;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int n_heads = 4;
  int ffn_dim = 256;
  int vocab_size = 0;  // total, incl. specials; set from the tokenizer
  int ordinary_vocab = 0;
  int max_pos = 256;
  double dropout = 0.0;
  BackboneKind backbone = BackboneKind::tiny_random;

  void validate() const;
};

// Per-row contextual encodings of the m knowledge-history pairs.
struct EncoderStates {
  std::vector<Mat> rows;  // m matrices, each T x d_model
  Mat mask;               // m x T

  int m() const { return static_cast<int>(rows.size()); }
  int T() const { return rows.empty() ? 0 : static_cast<int>(rows[0].rows()); }
};

// Single encoder-state sequence handed to the decoder.
struct FusedState {
  Mat states;                // T x d_model
  Eigen::RowVectorXd mask;   // length T, 1 = attendable
};

struct DecoderOutput {
  Mat logits;  // S x vocab (one row per predicted position)
};

struct GenStrategy {
  enum class Kind { greedy, beam } kind = Kind::greedy;
  int beam_width = 1;
  static GenStrategy greedy() { return {Kind::greedy, 1}; }
  static GenStrategy beam(int k) { return {Kind::beam, k}; }
};

class ParamStore {
 public:
  ad::Parameter& create(const std::string& name, ad::Group group, int rows, int cols);
  ad::Parameter& get(const std::string& name);
  const ad::Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.count(name) > 0; }
  std::vector<ad::Parameter*> all();              // creation order
  std::vector<const ad::Parameter*> all() const;
  void zero_grads();
  std::size_t count() const { return params_.size(); }

 private:
  std::deque<ad::Parameter> params_;
  std::unordered_map<std::string, ad::Parameter*> by_name_;
};

// Contract any externally pretrained encoder-decoder must satisfy to slot
// in behind the fusion module. No adapter ships with this library; the
// tiny_random backbone below is the trainable reference implementation.
class BackboneAdapter {
 public:
  virtual ~BackboneAdapter() = default;
  virtual EncoderStates encode(const encoding::AssembledInput& input) = 0;
  virtual Mat decode_logits(const FusedState& fused, const std::vector<int>& input_ids) = 0;
  virtual std::vector<ad::Parameter*> parameter_group(ad::Group group) = 0;
};

// Encoder-decoder transformer with learned positional embeddings, pre-norm
// residual blocks and a decoder output projection tied to the token
// embeddings. Token embeddings are split into the ordinary-vocab block
// (pretrained group) and the special-token block (raw group).
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t init_seed);

  // -- graph builders (training and shared forward path) --
  // Stacked encoder states for all m rows: (m*T x d). dropout_rng nullptr
  // disables dropout (eval / tests).
  ad::Expr encode_stacked(ad::Graph& g, const encoding::AssembledInput& input,
                          Rng* dropout_rng = nullptr);
  // Teacher-forcing logits from an arbitrary fused memory. input_ids are the
  // decoder inputs (target without its last token).
  ad::Expr decode_logits_expr(ad::Graph& g, ad::Expr fused, const Eigen::RowVectorXd& fused_mask,
                              const std::vector<int>& input_ids, Rng* dropout_rng = nullptr);

  // -- value-level contract --
  EncoderStates encode_pairs(const encoding::AssembledInput& input);
  // target_ids must start with BOS; returns logits for target_ids[1..].
  DecoderOutput decode_logprobs(const FusedState& fused, const std::vector<int>& target_ids);
  std::vector<int> generate(const FusedState& fused, int max_len, const GenStrategy& strategy,
                            int bos_id, int eos_id);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  ad::Parameter& scorer_w() { return *scorer_w_; }
  ad::Parameter& scorer_b() { return *scorer_b_; }

 private:
  struct LN {
    ad::Parameter *g, *b;
  };
  struct Attn {
    ad::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  };
  struct Ffn {
    ad::Parameter *w1, *b1, *w2, *b2;
  };
  struct EncLayer {
    LN ln1, ln2;
    Attn attn;
    Ffn ffn;
  };
  struct DecLayer {
    LN ln1, ln2, ln3;
    Attn self_attn, cross_attn;
    Ffn ffn;
  };

  ad::Expr embed(ad::Graph& g, const std::vector<int>& ids, ad::Parameter& pos_table,
                 int pos_offset_period, Rng* dropout_rng);
  ad::Expr attention_block(ad::Graph& g, ad::Expr x_norm, ad::Expr kv_norm, const Attn& p,
                           int blocks, const Mat* key_mask, bool causal);
  ad::Expr ffn_block(ad::Graph& g, ad::Expr x, const Ffn& p);
  ad::Expr dropout(ad::Graph& g, ad::Expr x, Rng* rng);

  ModelConfig cfg_;
  ParamStore store_;
  ad::Parameter *emb_base_, *emb_spec_, *pos_enc_, *pos_dec_;
  std::vector<EncLayer> enc_;
  std::vector<DecLayer> dec_;
  LN enc_final_, dec_final_;
  ad::Parameter *scorer_w_, *scorer_b_;
};

}  // namespace kmine::model
