#include "kmine/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kmine/errors.hpp"

namespace kmine::model {

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers_enc <= 0 || n_layers_dec <= 0 || n_heads <= 0 || ffn_dim <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (vocab_size <= 0 || ordinary_vocab <= 0 || ordinary_vocab >= vocab_size)
    throw ConfigError("vocab_size/ordinary_vocab not set consistently");
  if (max_pos <= 0) throw ConfigError("max_pos must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
}

ad::Parameter& ParamStore::create(const std::string& name, ad::Group group, int rows, int cols) {
  if (by_name_.count(name)) throw Error("duplicate parameter: " + name);
  params_.emplace_back(name, group, Mat::Zero(rows, cols));
  by_name_[name] = &params_.back();
  return params_.back();
}

ad::Parameter& ParamStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter: " + name);
  return *it->second;
}

const ad::Parameter& ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw Error("unknown parameter: " + name);
  return *it->second;
}

std::vector<ad::Parameter*> ParamStore::all() {
  std::vector<ad::Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const ad::Parameter*> ParamStore::all() const {
  std::vector<const ad::Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) p.zero_grad();
}

namespace {

void init_normal(ad::Parameter& p, Rng& rng, double std) {
  for (Eigen::Index i = 0; i < p.value.rows(); ++i)
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) p.value(i, j) = rng.normal() * std;
}

}  // namespace

Model::Model(ModelConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.backbone == BackboneKind::pretrained_adapter)
    throw ConfigError("pretrained_adapter backbone requires an external adapter; none is registered");

  const int d = cfg_.d_model;
  auto ln = [&](const std::string& prefix) {
    LN out{&store_.create(prefix + ".g", ad::Group::pretrained, 1, d),
           &store_.create(prefix + ".b", ad::Group::pretrained, 1, d)};
    out.g->value.setOnes();
    return out;
  };
  auto attn = [&](const std::string& prefix) {
    return Attn{&store_.create(prefix + ".wq", ad::Group::pretrained, d, d),
                &store_.create(prefix + ".bq", ad::Group::pretrained, 1, d),
                &store_.create(prefix + ".wk", ad::Group::pretrained, d, d),
                &store_.create(prefix + ".bk", ad::Group::pretrained, 1, d),
                &store_.create(prefix + ".wv", ad::Group::pretrained, d, d),
                &store_.create(prefix + ".bv", ad::Group::pretrained, 1, d),
                &store_.create(prefix + ".wo", ad::Group::pretrained, d, d),
                &store_.create(prefix + ".bo", ad::Group::pretrained, 1, d)};
  };
  auto ffn = [&](const std::string& prefix) {
    return Ffn{&store_.create(prefix + ".w1", ad::Group::pretrained, d, cfg_.ffn_dim),
               &store_.create(prefix + ".b1", ad::Group::pretrained, 1, cfg_.ffn_dim),
               &store_.create(prefix + ".w2", ad::Group::pretrained, cfg_.ffn_dim, d),
               &store_.create(prefix + ".b2", ad::Group::pretrained, 1, d)};
  };

  emb_base_ = &store_.create("emb.base", ad::Group::pretrained, cfg_.ordinary_vocab, d);
  emb_spec_ = &store_.create("emb.spec", ad::Group::raw, cfg_.vocab_size - cfg_.ordinary_vocab, d);
  pos_enc_ = &store_.create("pos.enc", ad::Group::pretrained, cfg_.max_pos, d);
  pos_dec_ = &store_.create("pos.dec", ad::Group::pretrained, cfg_.max_pos, d);

  for (int l = 0; l < cfg_.n_layers_enc; ++l) {
    std::string p = "enc." + std::to_string(l);
    enc_.push_back({ln(p + ".ln1"), ln(p + ".ln2"), attn(p + ".attn"), ffn(p + ".ffn")});
  }
  enc_final_ = ln("enc.final_ln");
  for (int l = 0; l < cfg_.n_layers_dec; ++l) {
    std::string p = "dec." + std::to_string(l);
    dec_.push_back({ln(p + ".ln1"), ln(p + ".ln2"), ln(p + ".ln3"), attn(p + ".self"),
                    attn(p + ".cross"), ffn(p + ".ffn")});
  }
  dec_final_ = ln("dec.final_ln");

  scorer_w_ = &store_.create("fusion.scorer.w", ad::Group::raw, 2 * d, 1);
  scorer_b_ = &store_.create("fusion.scorer.b", ad::Group::raw, 1, 1);

  Rng rng(init_seed);
  for (ad::Parameter* p : store_.all()) {
    if (p->name == "fusion.scorer.w" || p->name == "fusion.scorer.b") continue;  // stay zero
    if (p->name.ends_with(".g")) continue;                                       // LN gains stay one
    bool is_bias = p->name.ends_with(".b") || p->name.ends_with(".bq") ||
                   p->name.ends_with(".bk") || p->name.ends_with(".bv") ||
                   p->name.ends_with(".bo") || p->name.ends_with(".b1") ||
                   p->name.ends_with(".b2");
    if (is_bias) continue;  // zero
    init_normal(*p, rng, 0.02);
  }
}

ad::Expr Model::dropout(ad::Graph& g, ad::Expr x, Rng* rng) {
  if (rng == nullptr || cfg_.dropout <= 0.0) return x;
  const Mat& v = g.value(x);
  const double keep = 1.0 - cfg_.dropout;
  Mat mask(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j)
      mask(i, j) = rng->uniform01() < keep ? 1.0 / keep : 0.0;
  return g.cmul(x, g.input(std::move(mask)));
}

ad::Expr Model::embed(ad::Graph& g, const std::vector<int>& ids, ad::Parameter& pos_table,
                      int pos_offset_period, Rng* dropout_rng) {
  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    int p = pos_offset_period > 0 ? static_cast<int>(i) % pos_offset_period
                                  : static_cast<int>(i);
    if (p >= cfg_.max_pos) throw ShapeMismatch("sequence exceeds max_pos");
    pos[i] = p;
  }
  ad::Expr tok = g.gather_rows2(g.param(*emb_base_), g.param(*emb_spec_), ids);
  ad::Expr out = g.add(tok, g.gather_rows(g.param(pos_table), std::move(pos)));
  return dropout(g, out, dropout_rng);
}

ad::Expr Model::attention_block(ad::Graph& g, ad::Expr q_src, ad::Expr kv_src, const Attn& p,
                                int blocks, const Mat* key_mask, bool causal) {
  ad::Expr q = g.linear(q_src, *p.wq, *p.bq);
  ad::Expr k = g.linear(kv_src, *p.wk, *p.bk);
  ad::Expr v = g.linear(kv_src, *p.wv, *p.bv);
  ad::Expr a = g.attention(q, k, v, cfg_.n_heads, blocks, key_mask, causal);
  return g.linear(a, *p.wo, *p.bo);
}

ad::Expr Model::ffn_block(ad::Graph& g, ad::Expr x, const Ffn& p) {
  return g.linear(g.gelu(g.linear(x, *p.w1, *p.b1)), *p.w2, *p.b2);
}

ad::Expr Model::encode_stacked(ad::Graph& g, const encoding::AssembledInput& input,
                               Rng* dropout_rng) {
  const int m = input.m;
  const int T = input.T;
  std::vector<int> ids(static_cast<std::size_t>(m) * T);
  for (int i = 0; i < m; ++i)
    for (int t = 0; t < T; ++t) ids[static_cast<std::size_t>(i) * T + t] = input.token_ids(i, t);

  ad::Expr x = embed(g, ids, *pos_enc_, T, dropout_rng);
  for (const EncLayer& layer : enc_) {
    ad::Expr xn = g.layer_norm(x, g.param(*layer.ln1.g), g.param(*layer.ln1.b));
    ad::Expr att = attention_block(g, xn, xn, layer.attn, m, &input.attention_mask, false);
    x = g.add(x, dropout(g, att, dropout_rng));
    ad::Expr xn2 = g.layer_norm(x, g.param(*layer.ln2.g), g.param(*layer.ln2.b));
    x = g.add(x, dropout(g, ffn_block(g, xn2, layer.ffn), dropout_rng));
  }
  return g.layer_norm(x, g.param(*enc_final_.g), g.param(*enc_final_.b));
}

ad::Expr Model::decode_logits_expr(ad::Graph& g, ad::Expr fused,
                                   const Eigen::RowVectorXd& fused_mask,
                                   const std::vector<int>& input_ids, Rng* dropout_rng) {
  if (input_ids.empty()) throw ShapeMismatch("decoder input is empty");
  if (g.value(fused).rows() != fused_mask.cols())
    throw ShapeMismatch("fused mask length does not match fused states");

  Mat key_mask = fused_mask;  // 1 x T
  ad::Expr y = embed(g, input_ids, *pos_dec_, 0, dropout_rng);
  for (const DecLayer& layer : dec_) {
    ad::Expr yn = g.layer_norm(y, g.param(*layer.ln1.g), g.param(*layer.ln1.b));
    ad::Expr self = attention_block(g, yn, yn, layer.self_attn, 1, nullptr, true);
    y = g.add(y, dropout(g, self, dropout_rng));
    ad::Expr yn2 = g.layer_norm(y, g.param(*layer.ln2.g), g.param(*layer.ln2.b));
    ad::Expr cross = attention_block(g, yn2, fused, layer.cross_attn, 1, &key_mask, false);
    y = g.add(y, dropout(g, cross, dropout_rng));
    ad::Expr yn3 = g.layer_norm(y, g.param(*layer.ln3.g), g.param(*layer.ln3.b));
    y = g.add(y, dropout(g, ffn_block(g, yn3, layer.ffn), dropout_rng));
  }
  y = g.layer_norm(y, g.param(*dec_final_.g), g.param(*dec_final_.b));
  ad::Expr emb = g.vstack({g.param(*emb_base_), g.param(*emb_spec_)});
  return g.matmul_nt(y, emb);
}

EncoderStates Model::encode_pairs(const encoding::AssembledInput& input) {
  ad::Graph g;
  ad::Expr stacked = encode_stacked(g, input, nullptr);
  const Mat& v = g.value(stacked);
  EncoderStates out;
  out.mask = input.attention_mask;
  out.rows.reserve(static_cast<std::size_t>(input.m));
  for (int i = 0; i < input.m; ++i) out.rows.push_back(v.middleRows(i * input.T, input.T));
  return out;
}

DecoderOutput Model::decode_logprobs(const FusedState& fused, const std::vector<int>& target_ids) {
  if (target_ids.size() < 2) throw ShapeMismatch("target must contain BOS plus at least one token");
  std::vector<int> input(target_ids.begin(), target_ids.end() - 1);
  ad::Graph g;
  ad::Expr logits = decode_logits_expr(g, g.input(fused.states), fused.mask, input, nullptr);
  return DecoderOutput{g.value(logits)};
}

namespace {

int argmax_row(const Mat& logits, int row) {
  int best = 0;
  double bv = logits(row, 0);
  for (int j = 1; j < logits.cols(); ++j)
    if (logits(row, j) > bv) {
      bv = logits(row, j);
      best = j;
    }
  return best;
}

Eigen::RowVectorXd log_softmax_row(const Mat& logits, int row) {
  Eigen::RowVectorXd r = logits.row(row);
  double mx = r.maxCoeff();
  double lse = std::log((r.array() - mx).exp().sum()) + mx;
  return r.array() - lse;
}

}  // namespace

std::vector<int> Model::generate(const FusedState& fused, int max_len, const GenStrategy& strategy,
                                 int bos_id, int eos_id) {
  if (max_len <= 0) throw ShapeMismatch("max_len must be positive");
  const int width = strategy.kind == GenStrategy::Kind::beam ? strategy.beam_width : 1;
  if (width <= 0) throw ShapeMismatch("beam width must be positive");

  if (width == 1) {
    std::vector<int> seq{bos_id};
    std::vector<int> out;
    for (int step = 0; step < max_len; ++step) {
      ad::Graph g;
      ad::Expr logits = decode_logits_expr(g, g.input(fused.states), fused.mask, seq, nullptr);
      int next = argmax_row(g.value(logits), static_cast<int>(seq.size()) - 1);
      out.push_back(next);
      if (next == eos_id) break;
      seq.push_back(next);
    }
    return out;
  }

  struct Beam {
    std::vector<int> seq;  // includes BOS
    double logp = 0.0;
    bool done = false;
  };
  std::vector<Beam> beams{Beam{{bos_id}, 0.0, false}};
  for (int step = 0; step < max_len; ++step) {
    bool all_done = true;
    std::vector<Beam> candidates;
    for (const Beam& b : beams) {
      if (b.done) {
        candidates.push_back(b);
        continue;
      }
      all_done = false;
      ad::Graph g;
      ad::Expr logits = decode_logits_expr(g, g.input(fused.states), fused.mask, b.seq, nullptr);
      Eigen::RowVectorXd lp = log_softmax_row(g.value(logits), static_cast<int>(b.seq.size()) - 1);
      // Expanding the full vocab per beam is fine at this scale.
      for (int j = 0; j < lp.cols(); ++j) {
        Beam nb = b;
        nb.seq.push_back(j);
        nb.logp += lp(j);
        nb.done = (j == eos_id);
        candidates.push_back(std::move(nb));
      }
    }
    if (all_done) break;
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Beam& a, const Beam& b) { return a.logp > b.logp; });
    if (static_cast<int>(candidates.size()) > width) candidates.resize(width);
    beams = std::move(candidates);
  }
  const Beam* best = &beams.front();
  for (const Beam& b : beams)
    if (b.logp > best->logp) best = &b;
  return {best->seq.begin() + 1, best->seq.end()};
}

}  // namespace kmine::model
