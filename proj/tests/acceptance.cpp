// End-to-end acceptance suite. Each numbered check prints one [PASS]/[FAIL]
// line; failures do not stop later checks. Exit code 0 iff everything passed.
//
// The selection-emergence checks (5-7) train seven models on the synthetic
// retrieval corpus (fused/max at three seeds, one supervised run) and take
// the bulk of the runtime; progress goes to stderr.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kmine/assembly.hpp"
#include "kmine/autodiff.hpp"
#include "kmine/checkpoint.hpp"
#include "kmine/corpus.hpp"
#include "kmine/errors.hpp"
#include "kmine/evaluate.hpp"
#include "kmine/fusion.hpp"
#include "kmine/metrics.hpp"
#include "kmine/model.hpp"
#include "kmine/objectives.hpp"
#include "kmine/optimizer.hpp"
#include "kmine/plot.hpp"
#include "kmine/tokenizer.hpp"
#include "kmine/trainer.hpp"

using namespace kmine;
using ad::Mat;
using harness::AdamW;
using harness::LocTrace;
using harness::OptimConfig;
using harness::TrainConfig;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << number << ". " << name;
  if (!detail.empty()) std::cout << ": " << detail;
  std::cout << std::endl;
  if (!ok) ++failures;
}

void run_check(int number, const std::string& name,
               const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [ok, detail] = fn();
    report(number, name, ok, detail);
  } catch (const std::exception& e) {
    report(number, name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// shared gradient-check instance: d_model=8, T=6, m=3
// ---------------------------------------------------------------------------

struct GradInstance {
  encoding::WhitespaceTokenizer tok;
  corpus::DialogueTurn turn;
  encoding::AssembledInput input;
  std::vector<int> target;
  model::Model m;
  Eigen::RowVectorXd fmask;
  std::vector<int> dec_in, dec_tgt;

  GradInstance()
      : tok({"w0", "w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8", "w9"}),
        m(make_config(tok), /*init_seed=*/21) {
    turn.context = {{corpus::Speaker::user, "w8 w9"}};
    turn.pool = {"w0 w1", "w2 w3", "w4 w5"};
    turn.gold_index = 1;
    turn.uses_knowledge = true;
    turn.response = "w6 w7";
    input = encoding::assemble(turn, tok, /*k_len=*/2, /*history_window=*/1, /*max_len=*/12);
    target = encoding::encode_response(turn, tok, /*max_resp_len=*/8);
    dec_in.assign(target.begin(), target.end() - 1);
    dec_tgt.assign(target.begin() + 1, target.end());
    fmask = Eigen::RowVectorXd::Ones(input.T);
    // a zero scorer stalls the gradient check at a symmetric point; move it
    for (int j = 0; j < m.scorer_w().value.cols(); ++j)
      m.scorer_w().value(0, j) = 0.05 * std::sin(1.0 + j);
    m.scorer_b().value(0, 0) = 0.1;
  }

  static model::ModelConfig make_config(const encoding::Tokenizer& tok) {
    model::ModelConfig mc;
    mc.d_model = 8;
    mc.n_layers_enc = 1;
    mc.n_layers_dec = 1;
    mc.n_heads = 2;
    mc.ffn_dim = 16;
    mc.vocab_size = tok.vocab_size();
    mc.ordinary_vocab = tok.ordinary_vocab_size();
    mc.max_pos = 16;
    return mc;
  }

  double loss_value(fusion::Mode mode, double lambda) {
    ad::Graph g;
    ad::Expr stacked = m.encode_stacked(g, input);
    ad::Expr feats = fusion::pool_features_expr(g, stacked, input);
    ad::Expr raw = fusion::score_expr(g, feats, m.scorer_w(), m.scorer_b());
    ad::Expr alpha = fusion::normalize_expr(g, raw);
    ad::Expr fused = fusion::aggregate_expr(g, stacked, alpha, mode, input.m, input.T);
    ad::Expr logits = m.decode_logits_expr(g, fused, fmask, dec_in);
    objectives::SampleLoss sl = objectives::combined_loss(g, logits, dec_tgt, tok.specials().pad,
                                                          alpha, turn.gold_index, lambda);
    return g.value(sl.total)(0, 0);
  }

  // analytic scorer gradient; leaves it in m.scorer_w().grad / scorer_b().grad
  void backward(fusion::Mode mode, double lambda) {
    m.store().zero_grads();
    ad::Graph g;
    ad::Expr stacked = m.encode_stacked(g, input);
    ad::Expr feats = fusion::pool_features_expr(g, stacked, input);
    ad::Expr raw = fusion::score_expr(g, feats, m.scorer_w(), m.scorer_b());
    ad::Expr alpha = fusion::normalize_expr(g, raw);
    ad::Expr fused = fusion::aggregate_expr(g, stacked, alpha, mode, input.m, input.T);
    ad::Expr logits = m.decode_logits_expr(g, fused, fmask, dec_in);
    objectives::SampleLoss sl = objectives::combined_loss(g, logits, dec_tgt, tok.specials().pad,
                                                          alpha, turn.gold_index, lambda);
    g.backward(sl.total);
  }
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// ---------------------------------------------------------------------------
// emergence runs (checks 5-7)
// ---------------------------------------------------------------------------

struct RunOutcome {
  metrics::EvalReport report;
  LocTrace trace;
  int crossing = -1;  // first step with mean_loc >= 0.5
  double max_loc = 0.0;
};

struct EmergenceState {
  bool ran = false;
  std::string error;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<RunOutcome> fused, maxed;
  RunOutcome sup;
  std::string art_dir = "acceptance_artifacts";
  std::string csv_path;
  int max_steps = 2000;
};

TrainConfig emergence_config(const std::string& art_dir) {
  TrainConfig cfg;
  cfg.lr_pretrained = 5e-4;
  cfg.lr_raw = 5e-3;
  cfg.effective_batch = 16;
  cfg.micro_batch = 16;
  cfg.max_steps = 2000;
  cfg.lambda = 0.0;
  cfg.mode = fusion::Mode::fused;
  cfg.k_len = 3;
  cfg.history_window = 1;
  cfg.max_len = 12;
  cfg.max_resp_len = 8;
  cfg.temperature = 0.5;
  cfg.d_model = 64;
  cfg.n_layers_enc = 2;
  cfg.n_layers_dec = 2;
  cfg.n_heads = 4;
  cfg.ffn_dim = 256;
  cfg.deterministic = true;
  cfg.checkpoint_out = art_dir + "/run.ckpt";
  return cfg;
}

RunOutcome run_variant(const TrainConfig& base, const corpus::Dataset& train_set,
                       const corpus::Dataset& test_set, const encoding::Tokenizer& tok,
                       fusion::Mode mode, double lambda, std::uint64_t seed,
                       const std::string& name) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig cfg = base;
  cfg.mode = mode;
  cfg.lambda = lambda;
  cfg.seed = seed;
  cfg.checkpoint_out = name + ".ckpt";

  model::Model m(cfg.model_config(tok), seed);
  OptimConfig oc;
  oc.lr_pretrained = cfg.lr_pretrained;
  oc.lr_raw = cfg.lr_raw;
  oc.max_steps = cfg.max_steps;
  AdamW opt(m.store().all(), oc);
  harness::TrainResult tr = harness::train(cfg, train_set, tok, m, opt, 0);

  RunOutcome out;
  out.trace = tr.trace;
  for (const auto& [s, v] : tr.trace.entries) {
    out.max_loc = std::max(out.max_loc, v);
    if (out.crossing < 0 && v >= 0.5) out.crossing = s;
  }
  out.report = harness::evaluate(m, tok, test_set,
                                 harness::EvalOptions::from_config(cfg, metrics::Setting::All));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "  [run] " << name << ": r@1=" << fmt(out.report.r_at_1, 3)
            << " mean_loc=" << fmt(out.report.mean_loc, 3) << " loc>=0.5@"
            << (out.crossing < 0 ? "never" : std::to_string(out.crossing)) << " ("
            << fmt(secs, 3) << "s)" << std::endl;
  return out;
}

EmergenceState run_emergence() {
  EmergenceState st;
  try {
    std::filesystem::create_directories(st.art_dir);
    corpus::SyntheticSpec spec;
    spec.vocab_size = 32;
    spec.num_topics = 8;
    spec.pool_size = 5;
    spec.facts_per_topic = 2;
    spec.noise_rate = 0.0;
    spec.seed = 13;
    corpus::Dataset all = corpus::generate_synthetic(spec, 2500);
    std::vector<corpus::Dataset> splits = corpus::split_dataset(all, {0.8, 0.2});
    const corpus::Dataset& train_set = splits[0];
    const corpus::Dataset& test_set = splits[1];
    encoding::WhitespaceTokenizer tok(corpus::synthetic_vocab(spec));
    std::cerr << "  [emergence] train=" << train_set.size() << " test=" << test_set.size()
              << " m=" << spec.pool_size << " steps=2000 (7 runs)" << std::endl;

    TrainConfig base = emergence_config(st.art_dir);
    st.max_steps = base.max_steps;
    for (std::uint64_t s : st.seeds)
      st.fused.push_back(run_variant(base, train_set, test_set, tok, fusion::Mode::fused, 0.0, s,
                                     st.art_dir + "/fused_s" + std::to_string(s)));
    for (std::uint64_t s : st.seeds)
      st.maxed.push_back(run_variant(base, train_set, test_set, tok, fusion::Mode::max, 0.0, s,
                                     st.art_dir + "/max_s" + std::to_string(s)));
    st.sup = run_variant(base, train_set, test_set, tok, fusion::Mode::fused, 0.5, st.seeds[0],
                         st.art_dir + "/sup_s" + std::to_string(st.seeds[0]));

    std::vector<LocTrace> traces;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < st.seeds.size(); ++i) {
      traces.push_back(st.fused[i].trace);
      labels.push_back("fused_s" + std::to_string(st.seeds[i]));
    }
    for (std::size_t i = 0; i < st.seeds.size(); ++i) {
      traces.push_back(st.maxed[i].trace);
      labels.push_back("max_s" + std::to_string(st.seeds[i]));
    }
    harness::plot_loc(traces, labels, st.art_dir + "/loc_curves.png");
    st.csv_path = st.art_dir + "/loc_curves.csv";
    st.ran = true;
  } catch (const std::exception& e) {
    st.error = e.what();
  }
  return st;
}

// column maxima of a merged trace CSV (blank cells skipped)
std::vector<double> csv_column_maxima(const std::string& path, std::vector<std::string>* header) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) throw Error("empty CSV");
  std::vector<std::string> cols;
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) cols.push_back(cell);
  if (header != nullptr) *header = cols;
  std::vector<double> maxima(cols.size() - 1, 0.0);
  while (std::getline(is, line)) {
    std::stringstream rs(line);
    std::size_t i = 0;
    while (std::getline(rs, cell, ',')) {
      if (i > 0 && i <= maxima.size() && !cell.empty())
        maxima[i - 1] = std::max(maxima[i - 1], std::stod(cell));
      ++i;
    }
  }
  return maxima;
}

}  // namespace

int main() {
  std::cout.setf(std::ios::fixed);

  // ---- 1: metric exactness -------------------------------------------------
  run_check(1, "metric exactness", [] {
    struct Case {
      double got, want;
    };
    Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
    Eigen::VectorXd onehot = Eigen::VectorXd::Zero(4);
    onehot(2) = 1.0;
    Eigen::VectorXd half(4);
    half << 0.5, 0.5, 0.0, 0.0;
    const std::vector<Case> cases = {
        {metrics::unigram_f1("the cat sat", "the cat"), 0.8},
        {metrics::rouge("a b c d", "a c d", metrics::RougeMode::rl), 6.0 / 7.0},
        {metrics::perplexity(2.0, 1), std::exp(2.0)},
        {metrics::localization(uniform), 0.0},
        {metrics::localization(onehot), 1.0},
        {metrics::localization(half), 0.585786437626905},
    };
    double worst = 0.0;
    for (const Case& c : cases) worst = std::max(worst, std::abs(c.got - c.want));
    return std::make_pair(worst < 1e-6, "max abs err " + fmt(worst, 3));
  });

  // ---- 2: analytic gradients vs finite differences --------------------------
  run_check(2, "analytic gradients match finite differences", [] {
    GradInstance gi;
    const double h = 1e-5;
    double worst = 0.0;

    for (double lambda : {0.0, 0.5, 1.0}) {
      // scorer weights, through encoder features / softmax / fusion / decoder
      gi.backward(fusion::Mode::fused, lambda);
      Mat wgrad = gi.m.scorer_w().grad;
      Mat bgrad = gi.m.scorer_b().grad;
      auto fd_entry = [&](ad::Parameter& p, int r, int c) {
        const double keep = p.value(r, c);
        p.value(r, c) = keep + h;
        const double up = gi.loss_value(fusion::Mode::fused, lambda);
        p.value(r, c) = keep - h;
        const double dn = gi.loss_value(fusion::Mode::fused, lambda);
        p.value(r, c) = keep;
        return (up - dn) / (2.0 * h);
      };
      for (int j = 0; j < wgrad.cols(); ++j)
        worst = std::max(worst, rel_err(wgrad(0, j), fd_entry(gi.m.scorer_w(), 0, j)));
      worst = std::max(worst, rel_err(bgrad(0, 0), fd_entry(gi.m.scorer_b(), 0, 0)));

      // fused states entering the decoder, with alpha held as its own leaf
      Mat F0;
      {
        ad::Graph g;
        ad::Expr stacked = gi.m.encode_stacked(g, gi.input);
        ad::Expr feats = fusion::pool_features_expr(g, stacked, gi.input);
        ad::Expr raw = fusion::score_expr(g, feats, gi.m.scorer_w(), gi.m.scorer_b());
        ad::Expr alpha = fusion::normalize_expr(g, raw);
        ad::Expr fused =
            fusion::aggregate_expr(g, stacked, alpha, fusion::Mode::fused, gi.input.m, gi.input.T);
        F0 = g.value(fused);
      }
      Mat a0(3, 1);
      a0 << 0.5, 0.3, 0.2;
      auto leaf_loss = [&](const Mat& fval, Mat* grad_out) {
        ad::Graph g;
        ad::Expr fused_leaf = g.leaf(fval);
        ad::Expr alpha_leaf = g.leaf(a0);
        ad::Expr logits = gi.m.decode_logits_expr(g, fused_leaf, gi.fmask, gi.dec_in);
        objectives::SampleLoss sl =
            objectives::combined_loss(g, logits, gi.dec_tgt, gi.tok.specials().pad, alpha_leaf,
                                      gi.turn.gold_index, lambda);
        if (grad_out != nullptr) {
          g.backward(sl.total);
          *grad_out = g.grad(fused_leaf);
        }
        return g.value(sl.total)(0, 0);
      };
      Mat fgrad;
      leaf_loss(F0, &fgrad);
      for (int r = 0; r < F0.rows(); ++r)
        for (int c = 0; c < F0.cols(); ++c) {
          Mat up = F0, dn = F0;
          up(r, c) += h;
          dn(r, c) -= h;
          const double fd = (leaf_loss(up, nullptr) - leaf_loss(dn, nullptr)) / (2.0 * h);
          worst = std::max(worst, rel_err(fgrad(r, c), fd));
        }
    }
    return std::make_pair(worst < 1e-4,
                          "max rel err " + fmt(worst, 3) + " over lambda in {0, 0.5, 1}");
  });

  // ---- 3: scorer gradient flow by aggregation mode --------------------------
  run_check(3, "scorer gradient flow by aggregation mode", [] {
    GradInstance gi;
    gi.backward(fusion::Mode::fused, 0.0);
    const double fused_norm = gi.m.scorer_w().grad.norm();

    gi.backward(fusion::Mode::max, 0.0);
    const bool max_zero =
        gi.m.scorer_w().grad_is_zero() && gi.m.scorer_b().grad_is_zero();

    // one real optimizer step under mean aggregation
    corpus::SyntheticSpec spec;
    spec.vocab_size = 32;
    spec.num_topics = 8;
    spec.pool_size = 3;
    spec.facts_per_topic = 2;
    spec.seed = 4;
    corpus::Dataset data = corpus::generate_synthetic(spec, 8);
    encoding::WhitespaceTokenizer tok(corpus::synthetic_vocab(spec));
    TrainConfig cfg;
    cfg.mode = fusion::Mode::mean;
    cfg.effective_batch = 4;
    cfg.micro_batch = 4;
    cfg.max_steps = 1;
    cfg.k_len = 3;
    cfg.history_window = 1;
    cfg.max_len = 12;
    cfg.max_resp_len = 8;
    cfg.d_model = 16;
    cfg.n_layers_enc = 1;
    cfg.n_layers_dec = 1;
    cfg.n_heads = 2;
    cfg.ffn_dim = 32;
    cfg.max_pos = 32;
    cfg.checkpoint_out = "acceptance_artifacts/mean_probe.ckpt";
    std::filesystem::create_directories("acceptance_artifacts");
    model::Model m(cfg.model_config(tok), 6);
    Rng rng(31);
    for (int j = 0; j < m.scorer_w().value.cols(); ++j) m.scorer_w().value(0, j) = rng.normal();
    const Mat w0 = m.scorer_w().value;
    const Mat b0 = m.scorer_b().value;
    OptimConfig oc;
    oc.max_steps = 1;
    AdamW opt(m.store().all(), oc);
    harness::train(cfg, data, tok, m, opt, 0);
    const bool mean_untouched = (m.scorer_w().value.array() == w0.array()).all() &&
                                (m.scorer_b().value.array() == b0.array()).all();

    const bool ok = fused_norm > 1e-8 && max_zero && mean_untouched;
    return std::make_pair(ok, "fused |grad|=" + fmt(fused_norm, 3) +
                                  ", max grad zero=" + (max_zero ? "yes" : "no") +
                                  ", mean scorer bitwise unchanged=" +
                                  (mean_untouched ? "yes" : "no"));
  });

  // ---- 4: aggregation equivalences -------------------------------------------
  run_check(4, "aggregation equivalences and convexity", [] {
    Rng rng(77);
    double worst_onehot = 0.0, worst_uniform = 0.0, worst_bound = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
      const int m = 2 + trial % 4, T = 3, d = 4;
      model::EncoderStates states;
      for (int i = 0; i < m; ++i) {
        Mat row(T, d);
        for (int r = 0; r < T; ++r)
          for (int c = 0; c < d; ++c) row(r, c) = rng.normal();
        states.rows.push_back(row);
      }
      states.mask = Mat::Ones(m, T);

      Eigen::VectorXd onehot = Eigen::VectorXd::Zero(m);
      onehot(trial % m) = 1.0;
      worst_onehot = std::max(worst_onehot,
                              (fusion::aggregate(states, onehot, fusion::Mode::fused).states -
                               fusion::aggregate(states, onehot, fusion::Mode::max).states)
                                  .cwiseAbs()
                                  .maxCoeff());

      Eigen::VectorXd uniform = Eigen::VectorXd::Constant(m, 1.0 / m);
      worst_uniform = std::max(worst_uniform,
                               (fusion::aggregate(states, uniform, fusion::Mode::fused).states -
                                fusion::aggregate(states, uniform, fusion::Mode::mean).states)
                                   .cwiseAbs()
                                   .maxCoeff());

      Eigen::VectorXd raw(m);
      for (int i = 0; i < m; ++i) raw(i) = rng.normal();
      Eigen::VectorXd alpha = fusion::normalize(raw);
      Mat fused = fusion::aggregate(states, alpha, fusion::Mode::fused).states;
      Mat lo = states.rows[0], hi = states.rows[0];
      for (int i = 1; i < m; ++i) {
        lo = lo.cwiseMin(states.rows[i]);
        hi = hi.cwiseMax(states.rows[i]);
      }
      worst_bound = std::max(worst_bound, (lo - fused).maxCoeff());
      worst_bound = std::max(worst_bound, (fused - hi).maxCoeff());
    }
    const bool ok = worst_onehot <= 1e-12 && worst_uniform <= 1e-12 && worst_bound <= 1e-12;
    return std::make_pair(ok, "one-hot vs max " + fmt(worst_onehot, 3) + ", uniform vs mean " +
                                  fmt(worst_uniform, 3) + ", bound slack " + fmt(worst_bound, 3) +
                                  " over 1000 instances");
  });

  // ---- 5-7: emergence runs ---------------------------------------------------
  std::cerr << "[acceptance] training emergence runs (several minutes)..." << std::endl;
  EmergenceState em = run_emergence();

  run_check(5, "emergent unsupervised selection (fused vs max)", [&em] {
    if (!em.ran) return std::make_pair(false, "runs failed: " + em.error);
    int passing = 0;
    std::string detail;
    for (std::size_t i = 0; i < em.seeds.size(); ++i) {
      const double f = em.fused[i].report.r_at_1;
      const double x = em.maxed[i].report.r_at_1;
      const bool ok = f >= 0.90 && x >= 0.05 && x <= 0.35;
      passing += ok ? 1 : 0;
      detail += (i ? "; " : "") + std::string("seed ") + std::to_string(em.seeds[i]) +
                " fused=" + fmt(f, 3) + " max=" + fmt(x, 3) + (ok ? "" : " (x)");
    }
    return std::make_pair(passing >= 2, detail + " -> " + std::to_string(passing) + "/3 seeds");
  });

  run_check(6, "localization dynamics artifact", [&em] {
    if (!em.ran) return std::make_pair(false, "runs failed: " + em.error);
    std::vector<std::string> header;
    std::vector<double> maxima = csv_column_maxima(em.csv_path, &header);
    int fused_high = 0;
    double max_peak = 0.0;
    for (std::size_t i = 0; i < maxima.size(); ++i) {
      if (header[i + 1].rfind("fused", 0) == 0 && maxima[i] >= 0.5) ++fused_high;
      if (header[i + 1].rfind("max", 0) == 0) max_peak = std::max(max_peak, maxima[i]);
    }
    const bool ok = fused_high >= 2 && max_peak <= 0.01;
    return std::make_pair(ok, std::to_string(fused_high) + "/3 fused traces reach 0.5; max-mode"
                                  " peak " + fmt(max_peak, 3) + " (csv: " + em.csv_path + ")");
  });

  run_check(7, "supervision consistency", [&em] {
    if (!em.ran) return std::make_pair(false, "runs failed: " + em.error);
    double best_unsup = 0.0;
    for (const RunOutcome& r : em.fused) best_unsup = std::max(best_unsup, r.report.r_at_1);
    const double sup_r1 = em.sup.report.r_at_1;
    const int sup_cross = em.sup.crossing;
    const int unsup_cross = em.fused[0].crossing;
    const bool r1_ok = sup_r1 >= best_unsup - 0.05;
    const bool early_ok = sup_cross >= 0 && sup_cross <= em.max_steps / 10;
    const bool precedes = sup_cross >= 0 && (unsup_cross < 0 || sup_cross < unsup_cross);
    const bool ok = r1_ok && early_ok && precedes;
    return std::make_pair(
        ok, "sup r@1=" + fmt(sup_r1, 3) + " vs unsup best " + fmt(best_unsup, 3) +
                "; sup loc>=0.5@" + (sup_cross < 0 ? "never" : std::to_string(sup_cross)) +
                " (bound " + std::to_string(em.max_steps / 10) + ", unsup seed-1 @" +
                (unsup_cross < 0 ? "never" : std::to_string(unsup_cross)) + ")");
  });

  // ---- 8: harness invariants ---------------------------------------------------
  run_check(8, "harness invariants", [] {
    corpus::SyntheticSpec spec;
    spec.vocab_size = 32;
    spec.num_topics = 8;
    spec.pool_size = 3;
    spec.facts_per_topic = 2;
    spec.seed = 11;
    corpus::Dataset data = corpus::generate_synthetic(spec, 24);
    encoding::WhitespaceTokenizer tok(corpus::synthetic_vocab(spec));
    TrainConfig base;
    base.lr_pretrained = 1e-3;
    base.lr_raw = 5e-3;
    base.max_steps = 3;
    base.k_len = 3;
    base.history_window = 1;
    base.max_len = 12;
    base.max_resp_len = 8;
    base.d_model = 16;
    base.n_layers_enc = 1;
    base.n_layers_dec = 1;
    base.n_heads = 2;
    base.ffn_dim = 32;
    base.max_pos = 32;
    base.deterministic = true;
    std::filesystem::create_directories("acceptance_artifacts");

    auto run_with = [&](TrainConfig cfg, const std::string& name) {
      cfg.checkpoint_out = "acceptance_artifacts/" + name + ".ckpt";
      model::Model m(cfg.model_config(tok), 5);
      OptimConfig oc;
      oc.lr_pretrained = cfg.lr_pretrained;
      oc.lr_raw = cfg.lr_raw;
      oc.max_steps = cfg.max_steps;
      AdamW opt(m.store().all(), oc);
      harness::train(cfg, data, tok, m, opt, 0);
      std::vector<Mat> vals;
      for (const ad::Parameter* p : m.store().all()) vals.push_back(p->value);
      return vals;
    };

    // gradient accumulation: micro split must not change the update
    TrainConfig a = base;
    a.effective_batch = 8;
    a.micro_batch = 1;
    TrainConfig b = base;
    b.effective_batch = 8;
    b.micro_batch = 8;
    std::vector<Mat> va = run_with(a, "acc_a"), vb = run_with(b, "acc_b");
    double acc_diff = 0.0;
    for (std::size_t i = 0; i < va.size(); ++i)
      acc_diff = std::max(acc_diff, (va[i] - vb[i]).cwiseAbs().maxCoeff());

    // checkpoint resume reproduces the uninterrupted run bitwise
    TrainConfig full = base;
    full.effective_batch = 4;
    full.micro_batch = 4;
    full.max_steps = 6;
    full.checkpoint_every = 3;
    full.checkpoint_out = "acceptance_artifacts/resume_full.ckpt";
    model::Model mf(full.model_config(tok), 7);
    OptimConfig oc;
    oc.lr_pretrained = full.lr_pretrained;
    oc.lr_raw = full.lr_raw;
    oc.max_steps = full.max_steps;
    AdamW optf(mf.store().all(), oc);
    harness::train(full, data, tok, mf, optf, 0);
    harness::LoadedCheckpoint mid =
        harness::load_checkpoint("acceptance_artifacts/resume_full.ckpt.step3");
    auto opt_resumed = mid.make_optimizer();
    TrainConfig tail_cfg = full;
    tail_cfg.checkpoint_out = "acceptance_artifacts/resume_tail.ckpt";
    harness::train(tail_cfg, data, tok, *mid.model, *opt_resumed, mid.step);
    double resume_diff = 0.0;
    auto pf = mf.store().all();
    auto pr = mid.model->store().all();
    for (std::size_t i = 0; i < pf.size(); ++i)
      resume_diff = std::max(resume_diff, (pf[i]->value - pr[i]->value).cwiseAbs().maxCoeff());

    // exact linear decay at sampled steps
    OptimConfig lr_cfg;
    lr_cfg.lr_pretrained = 2e-5;
    lr_cfg.lr_raw = 5e-4;
    lr_cfg.max_steps = 2000;
    AdamW lr_probe({}, lr_cfg);
    bool lr_exact = true;
    for (long long s : {0LL, 1LL, 123LL, 1000LL, 1999LL, 2000LL}) {
      lr_exact = lr_exact && lr_probe.lr_at(ad::Group::pretrained, s) ==
                                 2e-5 * (1.0 - static_cast<double>(s) / 2000.0);
      lr_exact = lr_exact && lr_probe.lr_at(ad::Group::raw, s) ==
                                 5e-4 * (1.0 - static_cast<double>(s) / 2000.0);
    }

    const bool ok = acc_diff <= 1e-10 && resume_diff == 0.0 && lr_exact;
    return std::make_pair(ok, "accumulation divergence " + fmt(acc_diff, 3) +
                                  ", resume divergence " + fmt(resume_diff, 3) +
                                  ", lr schedule exact=" + (lr_exact ? "yes" : "no"));
  });

  std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " FAILED")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
