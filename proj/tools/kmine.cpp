#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kmine/checkpoint.hpp"
#include "kmine/corpus.hpp"
#include "kmine/errors.hpp"
#include "kmine/evaluate.hpp"
#include "kmine/plot.hpp"
#include "kmine/tokenizer.hpp"
#include "kmine/trainer.hpp"

namespace {

using namespace kmine;

corpus::SyntheticSpec load_synth_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open spec file: " + path);
  corpus::SyntheticSpec spec;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("spec line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key == "vocab_size") spec.vocab_size = std::stoi(value);
    else if (key == "num_topics") spec.num_topics = std::stoi(value);
    else if (key == "pool_size") spec.pool_size = std::stoi(value);
    else if (key == "facts_per_topic") spec.facts_per_topic = std::stoi(value);
    else if (key == "noise_rate") spec.noise_rate = std::stod(value);
    else if (key == "seed") spec.seed = std::stoull(value);
    else throw ConfigError("unknown spec key: " + key);
  }
  return spec;
}

int cmd_train(const std::string& config_path, const std::string& mode_flag, double lambda_flag,
              bool lambda_set, long long seed_flag, bool seed_set, const std::string& resume) {
  harness::TrainConfig cfg = harness::TrainConfig::load(config_path);
  if (!mode_flag.empty()) cfg.mode = fusion::mode_from_string(mode_flag);
  if (lambda_set) cfg.lambda = lambda_flag;
  if (seed_set) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  if (harness::deterministic_env()) cfg.deterministic = true;

  harness::TrainResult result;
  if (resume.empty()) {
    result = harness::train_from_config(cfg);
  } else {
    harness::LoadedCheckpoint ckpt = harness::load_checkpoint(resume);
    // data / output paths come from the fresh config; everything defining
    // the run (model shape, schedule, seed) comes from the checkpoint.
    harness::TrainConfig run = ckpt.cfg;
    run.train_data = cfg.train_data.empty() ? run.train_data : cfg.train_data;
    run.vocab = cfg.vocab.empty() ? run.vocab : cfg.vocab;
    run.checkpoint_out = cfg.checkpoint_out;
    run.trace_out = cfg.trace_out;
    corpus::Dataset data = corpus::load_jsonl(run.train_data, corpus::Setting::All);
    auto opt = ckpt.make_optimizer();
    result = harness::train(run, data, *ckpt.tokenizer, *ckpt.model, *opt, ckpt.step);
  }
  std::cout << "steps=" << result.steps << " final_loss=" << result.final_loss
            << " checkpoint=" << cfg.checkpoint_out << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& setting,
             const std::string& out, const std::string& vocab) {
  metrics::EvalReport report =
      harness::evaluate_checkpoint(ckpt, data, metrics::setting_from_string(setting), vocab);
  const std::string json = report.to_json();
  std::ofstream os(out, std::ios::trunc);
  if (!os) throw Error("cannot write report: " + out);
  os << json;
  std::cout << json;
  return 0;
}

int cmd_synth(const std::string& spec_path, int n, const std::string& out,
              const std::string& vocab_out) {
  corpus::SyntheticSpec spec = load_synth_spec(spec_path);
  corpus::Dataset data = corpus::generate_synthetic(spec, n);
  corpus::save_jsonl(data, out);
  if (!vocab_out.empty()) {
    encoding::WhitespaceTokenizer tok(corpus::synthetic_vocab(spec));
    encoding::save_vocab(tok, vocab_out);
  }
  std::cout << "wrote " << data.size() << " turns to " << out << "\n";
  return 0;
}

int cmd_plot(const std::vector<std::string>& trace_paths, const std::vector<std::string>& labels,
             const std::string& out) {
  std::vector<harness::LocTrace> traces;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < trace_paths.size(); ++i) {
    traces.push_back(harness::LocTrace::load(trace_paths[i]));
    if (i < labels.size())
      names.push_back(labels[i]);
    else
      names.push_back(std::filesystem::path(trace_paths[i]).stem().string());
  }
  harness::plot_loc(traces, names, out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-and-aggregate knowledge fusion harness"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model from a config file");
  std::string config_path, mode_flag, resume;
  double lambda_flag = 0.0;
  long long seed_flag = 0;
  train->add_option("--config", config_path, "key=value config file")->required();
  train->add_option("--mode", mode_flag, "fused|mean|max");
  auto* lambda_opt = train->add_option("--lambda", lambda_flag, "selection-loss weight in [0,1]");
  auto* seed_opt = train->add_option("--seed", seed_flag, "RNG seed");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a JSONL dataset");
  std::string ckpt, data, setting = "all", report_out = "report.json", vocab;
  eval->add_option("--checkpoint", ckpt)->required();
  eval->add_option("--data", data)->required();
  eval->add_option("--setting", setting, "all|wkn");
  eval->add_option("--out", report_out)->required();
  eval->add_option("--vocab", vocab, "optional vocab file checked against the checkpoint");

  auto* synth = app.add_subcommand("synth", "generate the synthetic retrieval corpus");
  std::string synth_spec, synth_out, vocab_out;
  int synth_n = 0;
  synth->add_option("--spec", synth_spec, "key=value spec file")->required();
  synth->add_option("--n", synth_n, "number of turns")->required();
  synth->add_option("--out", synth_out, "output JSONL path")->required();
  synth->add_option("--vocab-out", vocab_out, "also write the implied vocabulary");

  auto* plot = app.add_subcommand("plot-loc", "merge Loc traces into a plot + CSV");
  std::vector<std::string> trace_paths, labels;
  std::string plot_out;
  plot->add_option("--traces", trace_paths, "trace CSV files")->required()->expected(-1);
  plot->add_option("--labels", labels, "series labels (default: file stems)");
  plot->add_option("--out", plot_out, "output image path (.png or .svg)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train)
      return cmd_train(config_path, mode_flag, lambda_flag, !lambda_opt->empty(), seed_flag,
                       !seed_opt->empty(), resume);
    if (*eval) return cmd_eval(ckpt, data, setting, report_out, vocab);
    if (*synth) return cmd_synth(synth_spec, synth_n, synth_out, vocab_out);
    if (*plot) return cmd_plot(trace_paths, labels, plot_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
