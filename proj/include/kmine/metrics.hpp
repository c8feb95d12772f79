#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "kmine/util.hpp"

namespace kmine::metrics {

// Shared normalization for F1/KF1/ROUGE: ASCII lowercase, punctuation to
// spaces, whitespace collapsed. Versioned so reports state what they used.
struct TextNormalizer {
  static constexpr const char* version = "v1";
  std::string normalize(const std::string& s) const;
  std::vector<std::string> tokens(const std::string& s) const;
};

int recall_at_1(const Eigen::VectorXd& alpha, int gold_index);

double unigram_f1(const std::string& prediction, const std::string& reference,
                  const TextNormalizer& norm = {});

double kf1(const std::string& prediction, const std::string& gold_knowledge,
           const TextNormalizer& norm = {});

enum class RougeMode { r1, rl };
double rouge(const std::string& prediction, const std::string& reference, RougeMode mode,
             const TextNormalizer& norm = {});

double perplexity(double total_nll, long long token_count);

double localization(const Eigen::VectorXd& p);

enum class Setting { All, wKn };
Setting setting_from_string(const std::string& s);
std::string to_string(Setting s);

struct EvalReport {
  Setting setting = Setting::All;
  std::string normalizer = TextNormalizer::version;
  int n_turns = 0;
  double r_at_1 = 0.0;
  int r_at_1_count = 0;  // turns with gold
  double f1 = 0.0;
  double kf1 = 0.0;
  int kf1_count = 0;  // turns with usable gold knowledge
  double rouge1 = 0.0;
  double rougeL = 0.0;
  double ppl = 0.0;
  long long token_count = 0;
  double mean_loc = 0.0;
  int loc_count = 0;  // turns with m >= 2

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

}  // namespace kmine::metrics
