#include "kmine/trainer.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "kmine/assembly.hpp"
#include "kmine/checkpoint.hpp"
#include "kmine/errors.hpp"
#include "kmine/metrics.hpp"

namespace kmine::harness {

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_double(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad numeric value: " + s);
  }
}

long long parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("bad integer value: " + s);
  }
}

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true") return true;
  if (s == "0" || s == "false") return false;
  throw ConfigError("bad boolean value: " + s);
}

}  // namespace

bool deterministic_env() {
  const char* v = std::getenv("KMINE_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

void TrainConfig::validate() const {
  if (schedule != "linear_decay") throw ConfigError("unknown schedule: " + schedule);
  if (micro_batch < 1 || effective_batch < 1) throw ConfigError("batch sizes must be >= 1");
  if (effective_batch % micro_batch != 0)
    throw ConfigError("effective_batch must be a multiple of micro_batch");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  objectives::validate_lambda(lambda);
  if (k_len < 1 || history_window < 1 || max_len < 3 || max_resp_len < 2)
    throw ConfigError("encoding lengths out of range");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (backbone != "tiny_random" && backbone != "pretrained_adapter")
    throw ConfigError("unknown backbone: " + backbone);
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
}

model::ModelConfig TrainConfig::model_config(const encoding::Tokenizer& tok) const {
  model::ModelConfig mc;
  mc.d_model = d_model;
  mc.n_layers_enc = n_layers_enc;
  mc.n_layers_dec = n_layers_dec;
  mc.n_heads = n_heads;
  mc.ffn_dim = ffn_dim;
  mc.vocab_size = tok.vocab_size();
  mc.ordinary_vocab = tok.ordinary_vocab_size();
  mc.max_pos = max_pos;
  mc.dropout = dropout;
  mc.backbone = backbone == "tiny_random" ? model::BackboneKind::tiny_random
                                          : model::BackboneKind::pretrained_adapter;
  return mc;
}

void TrainConfig::apply_kv(const std::string& key, const std::string& value) {
  if (key == "lr_pretrained") lr_pretrained = parse_double(value);
  else if (key == "lr_raw") lr_raw = parse_double(value);
  else if (key == "schedule") schedule = value;
  else if (key == "effective_batch") effective_batch = static_cast<int>(parse_int(value));
  else if (key == "micro_batch") micro_batch = static_cast<int>(parse_int(value));
  else if (key == "max_steps") max_steps = static_cast<int>(parse_int(value));
  else if (key == "lambda") lambda = parse_double(value);
  else if (key == "mode") mode = fusion::mode_from_string(value);
  else if (key == "selection_loss") selection_loss = objectives::selection_loss_from_string(value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(value));
  else if (key == "train_data") train_data = value;
  else if (key == "vocab") vocab = value;
  else if (key == "k_len") k_len = static_cast<int>(parse_int(value));
  else if (key == "history_window") history_window = static_cast<int>(parse_int(value));
  else if (key == "max_len") max_len = static_cast<int>(parse_int(value));
  else if (key == "max_resp_len") max_resp_len = static_cast<int>(parse_int(value));
  else if (key == "temperature") temperature = parse_double(value);
  else if (key == "d_model") d_model = static_cast<int>(parse_int(value));
  else if (key == "n_layers_enc") n_layers_enc = static_cast<int>(parse_int(value));
  else if (key == "n_layers_dec") n_layers_dec = static_cast<int>(parse_int(value));
  else if (key == "n_heads") n_heads = static_cast<int>(parse_int(value));
  else if (key == "ffn_dim") ffn_dim = static_cast<int>(parse_int(value));
  else if (key == "dropout") dropout = parse_double(value);
  else if (key == "max_pos") max_pos = static_cast<int>(parse_int(value));
  else if (key == "backbone") backbone = value;
  else if (key == "checkpoint_every") checkpoint_every = static_cast<int>(parse_int(value));
  else if (key == "checkpoint_out") checkpoint_out = value;
  else if (key == "trace_out") trace_out = value;
  else if (key == "deterministic") deterministic = parse_bool(value);
  else throw ConfigError("unknown config key: " + key);
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["lr_pretrained"] = fmt_double(lr_pretrained);
  kv["lr_raw"] = fmt_double(lr_raw);
  kv["schedule"] = schedule;
  kv["effective_batch"] = std::to_string(effective_batch);
  kv["micro_batch"] = std::to_string(micro_batch);
  kv["max_steps"] = std::to_string(max_steps);
  kv["lambda"] = fmt_double(lambda);
  kv["mode"] = fusion::to_string(mode);
  kv["selection_loss"] = selection_loss == objectives::SelectionLoss::bce ? "bce" : "ce";
  kv["seed"] = std::to_string(seed);
  kv["train_data"] = train_data;
  kv["vocab"] = vocab;
  kv["k_len"] = std::to_string(k_len);
  kv["history_window"] = std::to_string(history_window);
  kv["max_len"] = std::to_string(max_len);
  kv["max_resp_len"] = std::to_string(max_resp_len);
  kv["temperature"] = fmt_double(temperature);
  kv["d_model"] = std::to_string(d_model);
  kv["n_layers_enc"] = std::to_string(n_layers_enc);
  kv["n_layers_dec"] = std::to_string(n_layers_dec);
  kv["n_heads"] = std::to_string(n_heads);
  kv["ffn_dim"] = std::to_string(ffn_dim);
  kv["dropout"] = fmt_double(dropout);
  kv["max_pos"] = std::to_string(max_pos);
  kv["backbone"] = backbone;
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["checkpoint_out"] = checkpoint_out;
  kv["trace_out"] = trace_out;
  kv["deterministic"] = deterministic ? "1" : "0";
  return kv;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config: " + path);
  TrainConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
    cfg.apply_kv(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void LocTrace::add(int step, double mean_loc) {
  if (!entries.empty() && step <= entries.back().first)
    throw Error("trace steps must be strictly increasing");
  if (!(mean_loc >= 0.0 && mean_loc <= 1.0)) throw Error("mean_loc outside [0,1]");
  entries.emplace_back(step, mean_loc);
}

std::string LocTrace::to_csv() const {
  std::ostringstream os;
  os << "step,mean_loc\n";
  for (const auto& [s, v] : entries) os << s << ',' << std::setprecision(17) << v << '\n';
  return os.str();
}

LocTrace LocTrace::from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || trim(line) != "step,mean_loc")
    throw Error("bad trace CSV header");
  LocTrace t;
  while (std::getline(is, line)) {
    std::string s = trim(line);
    if (s.empty()) continue;
    auto comma = s.find(',');
    if (comma == std::string::npos) throw Error("bad trace CSV row: " + s);
    t.add(static_cast<int>(parse_int(s.substr(0, comma))), parse_double(s.substr(comma + 1)));
  }
  return t;
}

void LocTrace::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write trace: " + path);
  os << to_csv();
}

LocTrace LocTrace::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open trace: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_csv(ss.str());
}

namespace {

struct PreparedTurn {
  encoding::AssembledInput input;
  std::vector<int> target;  // BOS ... EOS
  std::optional<int> gold;
  int dataset_index = 0;
};

std::string dump_batch_diag(long long step, const PreparedTurn& pt, double l_rg,
                            std::optional<double> l_ks, const Eigen::VectorXd& alpha) {
  std::ostringstream os;
  os << "non-finite loss at step " << step << ", turn " << pt.dataset_index
     << ": l_rg=" << l_rg;
  if (l_ks) os << " l_ks=" << *l_ks;
  os << " alpha=[";
  for (int i = 0; i < alpha.size(); ++i) os << (i ? "," : "") << alpha(i);
  os << "]";
  return os.str();
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const corpus::Dataset& data,
                  const encoding::Tokenizer& tok, model::Model& model, AdamW& opt,
                  long long start_step) {
  cfg.validate();
  if (data.turns.empty()) throw Error("training dataset is empty");
  if (cfg.lambda > 0.0) {
    bool any_gold = false;
    for (const auto& t : data.turns)
      if (t.gold_index.has_value()) {
        any_gold = true;
        break;
      }
    if (!any_gold) throw LambdaPositiveButNoGold("lambda > 0 but no turn carries a gold label");
  }

  std::vector<PreparedTurn> prepared;
  prepared.reserve(data.turns.size());
  for (std::size_t i = 0; i < data.turns.size(); ++i) {
    PreparedTurn pt;
    pt.input = encoding::assemble(data.turns[i], tok, cfg.k_len, cfg.history_window, cfg.max_len);
    pt.target = encoding::encode_response(data.turns[i], tok, cfg.max_resp_len);
    pt.gold = data.turns[i].gold_index;
    pt.dataset_index = static_cast<int>(i);
    prepared.push_back(std::move(pt));
  }

  const long long n = static_cast<long long>(prepared.size());
  long long cached_epoch = -1;
  std::vector<int> perm(prepared.size());
  auto sample_at = [&](long long k) -> const PreparedTurn& {
    const long long epoch = k / n;
    if (epoch != cached_epoch) {
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
      Rng r(mix_seed(mix_seed(cfg.seed, 0x5485u), static_cast<std::uint64_t>(epoch)));
      r.shuffle(perm);
      cached_epoch = epoch;
    }
    return prepared[static_cast<std::size_t>(perm[static_cast<std::size_t>(k % n)])];
  };

  const int pad_id = tok.specials().pad;
  TrainResult result;
  double last_loss = 0.0;

  for (long long step = start_step; step < cfg.max_steps; ++step) {
    model.store().zero_grads();
    KahanSum loss_sum, loc_sum;
    int loc_n = 0;
    for (int b = 0; b < cfg.effective_batch; ++b) {
      const long long k = step * cfg.effective_batch + b;
      const PreparedTurn& pt = sample_at(k);
      Rng drop_rng(mix_seed(mix_seed(cfg.seed, 0xD120u), static_cast<std::uint64_t>(k)));
      Rng* drop = cfg.dropout > 0.0 ? &drop_rng : nullptr;

      ad::Graph g;
      ad::Expr stacked = model.encode_stacked(g, pt.input, drop);
      ad::Expr feats = fusion::pool_features_expr(g, stacked, pt.input);
      ad::Expr raw = fusion::score_expr(g, feats, model.scorer_w(), model.scorer_b());
      ad::Expr alpha = fusion::normalize_expr(g, raw, cfg.temperature);
      ad::Expr fused =
          fusion::aggregate_expr(g, stacked, alpha, cfg.mode, pt.input.m, pt.input.T);
      Eigen::RowVectorXd fmask = fusion::union_mask(pt.input.attention_mask);

      std::vector<int> dec_in(pt.target.begin(), pt.target.end() - 1);
      std::vector<int> dec_tgt(pt.target.begin() + 1, pt.target.end());
      ad::Expr logits = model.decode_logits_expr(g, fused, fmask, dec_in, drop);
      objectives::SampleLoss sl = objectives::combined_loss(
          g, logits, dec_tgt, pad_id, alpha, pt.gold, cfg.lambda, cfg.selection_loss);

      const double lv = g.value(sl.total)(0, 0);
      const Eigen::VectorXd av = g.value(alpha).col(0);
      if (!std::isfinite(lv))
        throw NonFiniteLoss(dump_batch_diag(step, pt, sl.response, sl.selection, av));
      loss_sum.add(lv);
      g.backward(sl.total, 1.0 / cfg.effective_batch);

      if (pt.input.m >= 2) {
        loc_sum.add(metrics::localization(av));
        ++loc_n;
      }
    }
    opt.step();
    last_loss = loss_sum.value() / cfg.effective_batch;
    if (loc_n > 0) result.trace.add(static_cast<int>(step + 1), loc_sum.value() / loc_n);
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.max_steps)
      save_checkpoint(cfg.checkpoint_out + ".step" + std::to_string(step + 1), model, &opt, cfg,
                      tok, step + 1);
  }

  save_checkpoint(cfg.checkpoint_out, model, &opt, cfg, tok, cfg.max_steps);
  if (!cfg.trace_out.empty()) result.trace.save(cfg.trace_out);
  result.steps = cfg.max_steps - start_step;
  result.final_loss = last_loss;
  return result;
}

TrainResult train_from_config(const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.vocab.empty()) throw ConfigError("config must set vocab");
  if (cfg.train_data.empty()) throw ConfigError("config must set train_data");
  auto tok = encoding::load_vocab(cfg.vocab);
  corpus::Dataset data = corpus::load_jsonl(cfg.train_data, corpus::Setting::All);
  model::Model m(cfg.model_config(*tok), cfg.seed);
  OptimConfig oc;
  oc.lr_pretrained = cfg.lr_pretrained;
  oc.lr_raw = cfg.lr_raw;
  oc.max_steps = cfg.max_steps;
  AdamW opt(m.store().all(), oc);
  return train(cfg, data, *tok, m, opt, 0);
}

}  // namespace kmine::harness
