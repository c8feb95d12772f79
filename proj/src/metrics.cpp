#include "kmine/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <unordered_map>

#include <json.hpp>

#include "kmine/errors.hpp"
#include "kmine/fusion.hpp"

namespace kmine::metrics {

std::string TextNormalizer::normalize(const std::string& s) const {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (unsigned char c : s) {
    char mapped;
    if (std::isalnum(c))
      mapped = static_cast<char>(std::tolower(c));
    else
      mapped = ' ';
    if (mapped == ' ') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(mapped);
  }
  return out;
}

std::vector<std::string> TextNormalizer::tokens(const std::string& s) const {
  return split_ws(normalize(s));
}

int recall_at_1(const Eigen::VectorXd& alpha, int gold_index) {
  if (alpha.size() == 0) throw EmptyPool("empty distribution");
  if (gold_index < 0 || gold_index >= alpha.size()) throw GoldMissing("gold index out of range");
  return fusion::argmax_lowest(alpha) == gold_index ? 1 : 0;
}

namespace {

double bag_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() || ref.empty()) return 0.0;
  std::unordered_map<std::string, int> counts;
  for (const auto& t : ref) ++counts[t];
  long long overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

long long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<long long> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      if (a[i - 1] == b[j - 1])
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double unigram_f1(const std::string& prediction, const std::string& reference,
                  const TextNormalizer& norm) {
  return bag_f1(norm.tokens(prediction), norm.tokens(reference));
}

double kf1(const std::string& prediction, const std::string& gold_knowledge,
           const TextNormalizer& norm) {
  return unigram_f1(prediction, gold_knowledge, norm);
}

double rouge(const std::string& prediction, const std::string& reference, RougeMode mode,
             const TextNormalizer& norm) {
  const auto pred = norm.tokens(prediction);
  const auto ref = norm.tokens(reference);
  if (mode == RougeMode::r1) return bag_f1(pred, ref);
  if (pred.empty() || ref.empty()) return 0.0;
  const long long lcs = lcs_length(pred, ref);
  if (lcs == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(pred.size());
  const double r = static_cast<double>(lcs) / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

double perplexity(double total_nll, long long token_count) {
  if (token_count < 1) throw NoTokens("perplexity needs at least one token");
  return std::exp(total_nll / static_cast<double>(token_count));
}

double localization(const Eigen::VectorXd& p) {
  const int m = static_cast<int>(p.size());
  if (m < 2) throw SingleOption("Loc is undefined for a single option");
  const double pn = p.norm();
  if (pn == 0.0) throw ShapeMismatch("zero vector has no direction");
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / m);
  const double cos_pu = p.dot(u) / (pn * u.norm());
  const double cos_ou = 1.0 / std::sqrt(static_cast<double>(m));
  const double loc = (1.0 - cos_pu) / (1.0 - cos_ou);
  return std::clamp(loc, 0.0, 1.0);
}

Setting setting_from_string(const std::string& s) {
  if (s == "all" || s == "All") return Setting::All;
  if (s == "wkn" || s == "wKn") return Setting::wKn;
  throw ConfigError("unknown setting: " + s);
}

std::string to_string(Setting s) { return s == Setting::All ? "All" : "wKn"; }

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["setting"] = to_string(setting);
  j["normalizer"] = normalizer;
  j["n_turns"] = n_turns;
  j["r_at_1"] = r_at_1;
  j["r_at_1_count"] = r_at_1_count;
  j["f1"] = f1;
  j["kf1"] = kf1;
  j["kf1_count"] = kf1_count;
  j["rouge1"] = rouge1;
  j["rougeL"] = rougeL;
  j["ppl"] = ppl;
  j["token_count"] = token_count;
  j["mean_loc"] = mean_loc;
  j["loc_count"] = loc_count;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  EvalReport r;
  r.setting = setting_from_string(j.at("setting").get<std::string>());
  r.normalizer = j.at("normalizer").get<std::string>();
  r.n_turns = j.at("n_turns").get<int>();
  r.r_at_1 = j.at("r_at_1").get<double>();
  r.r_at_1_count = j.at("r_at_1_count").get<int>();
  r.f1 = j.at("f1").get<double>();
  r.kf1 = j.at("kf1").get<double>();
  r.kf1_count = j.at("kf1_count").get<int>();
  r.rouge1 = j.at("rouge1").get<double>();
  r.rougeL = j.at("rougeL").get<double>();
  r.ppl = j.at("ppl").get<double>();
  r.token_count = j.at("token_count").get<long long>();
  r.mean_loc = j.at("mean_loc").get<double>();
  r.loc_count = j.at("loc_count").get<int>();
  return r;
}

}  // namespace kmine::metrics
