#include "kmine/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "kmine/errors.hpp"

namespace kmine::harness {

namespace {

constexpr char kMagic[8] = {'K', 'M', 'C', 'K', '0', '0', '0', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_mat(std::ostream& os, const ad::Mat& m) {
  static_assert(sizeof(double) == 8);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double d = m(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      write_u64(os, bits);
    }
}

void read_mat(std::istream& is, ad::Mat& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::uint64_t bits = read_u64(is);
      double d;
      std::memcpy(&d, &bits, 8);
      m(i, j) = d;
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const model::Model& m, const AdamW* opt,
                     const TrainConfig& cfg, const encoding::Tokenizer& tok, long long step) {
  nlohmann::ordered_json h;
  h["format"] = 1;
  h["step"] = step;

  nlohmann::ordered_json train;
  for (const auto& [k, v] : cfg.to_kv()) train[k] = v;
  h["train"] = train;

  nlohmann::ordered_json vocab;
  std::vector<std::string> ordinary;
  ordinary.reserve(static_cast<std::size_t>(tok.ordinary_vocab_size()));
  for (int i = 0; i < tok.ordinary_vocab_size(); ++i) ordinary.push_back(tok.token(i));
  std::vector<std::string> special_surfaces;
  for (int i = tok.ordinary_vocab_size(); i < tok.vocab_size(); ++i)
    special_surfaces.push_back(tok.token(i));
  vocab["ordinary"] = ordinary;
  vocab["specials"] = special_surfaces;
  h["vocab"] = vocab;
  h["vocab_fingerprint"] = tok.fingerprint();

  nlohmann::ordered_json params = nlohmann::ordered_json::array();
  for (const ad::Parameter* p : m.store().all()) {
    nlohmann::ordered_json e;
    e["name"] = p->name;
    e["group"] = p->group == ad::Group::pretrained ? "pretrained" : "raw";
    e["rows"] = p->value.rows();
    e["cols"] = p->value.cols();
    params.push_back(e);
  }
  h["params"] = params;

  if (opt != nullptr) {
    nlohmann::ordered_json o;
    o["steps_taken"] = opt->steps_taken();
    o["lr_pretrained"] = opt->config().lr_pretrained;
    o["lr_raw"] = opt->config().lr_raw;
    o["beta1"] = opt->config().beta1;
    o["beta2"] = opt->config().beta2;
    o["eps"] = opt->config().eps;
    o["weight_decay"] = opt->config().weight_decay;
    o["max_steps"] = opt->config().max_steps;
    std::vector<long long> slot_t;
    for (const auto& s : opt->slots()) slot_t.push_back(s.t);
    o["slot_t"] = slot_t;
    h["optimizer"] = o;
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 8);
  const std::string header = h.dump();
  write_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const ad::Parameter* p : m.store().all()) write_mat(os, p->value);
  if (opt != nullptr) {
    for (const auto& s : opt->slots()) {
      write_mat(os, s.m);
      write_mat(os, s.v);
    }
  }
  if (!os) throw Error("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw Error("not a checkpoint file: " + path);
  const std::uint64_t hlen = read_u64(is);
  std::string header(hlen, '\0');
  is.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw Error("truncated checkpoint header: " + path);
  nlohmann::json h = nlohmann::json::parse(header);
  if (h.at("format").get<int>() != 1) throw Error("unsupported checkpoint format");

  LoadedCheckpoint out;
  out.step = h.at("step").get<long long>();
  for (const auto& [k, v] : h.at("train").items()) out.cfg.apply_kv(k, v.get<std::string>());
  out.vocab_fingerprint = h.at("vocab_fingerprint").get<std::uint64_t>();

  auto ordinary = h.at("vocab").at("ordinary").get<std::vector<std::string>>();
  auto specials = h.at("vocab").at("specials").get<std::vector<std::string>>();
  out.tokenizer = std::make_unique<encoding::WhitespaceTokenizer>(ordinary, specials);
  if (out.tokenizer->fingerprint() != out.vocab_fingerprint)
    throw VocabMismatch("checkpoint vocabulary fails its own fingerprint");

  out.model = std::make_unique<model::Model>(out.cfg.model_config(*out.tokenizer), 0);
  auto params = out.model->store().all();
  const auto& manifest = h.at("params");
  if (manifest.size() != params.size())
    throw Error("checkpoint parameter manifest does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = manifest[i];
    if (e.at("name").get<std::string>() != params[i]->name ||
        e.at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
        e.at("cols").get<Eigen::Index>() != params[i]->value.cols())
      throw Error("checkpoint parameter mismatch at " + params[i]->name);
  }
  for (ad::Parameter* p : params) read_mat(is, p->value);

  if (h.contains("optimizer")) {
    out.has_optimizer = true;
    const auto& o = h.at("optimizer");
    out.opt_steps = o.at("steps_taken").get<long long>();
    out.opt_config.lr_pretrained = o.at("lr_pretrained").get<double>();
    out.opt_config.lr_raw = o.at("lr_raw").get<double>();
    out.opt_config.beta1 = o.at("beta1").get<double>();
    out.opt_config.beta2 = o.at("beta2").get<double>();
    out.opt_config.eps = o.at("eps").get<double>();
    out.opt_config.weight_decay = o.at("weight_decay").get<double>();
    out.opt_config.max_steps = o.at("max_steps").get<int>();
    auto slot_t = o.at("slot_t").get<std::vector<long long>>();
    if (slot_t.size() != params.size()) throw Error("optimizer slots do not match parameters");
    out.opt_slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.opt_slots[i].m.setZero(params[i]->value.rows(), params[i]->value.cols());
      out.opt_slots[i].v.setZero(params[i]->value.rows(), params[i]->value.cols());
      out.opt_slots[i].t = slot_t[i];
      read_mat(is, out.opt_slots[i].m);
      read_mat(is, out.opt_slots[i].v);
    }
  }
  if (!is) throw Error("truncated checkpoint payload: " + path);
  return out;
}

std::unique_ptr<AdamW> LoadedCheckpoint::make_optimizer() {
  if (!has_optimizer) throw Error("checkpoint carries no optimizer state");
  auto opt = std::make_unique<AdamW>(model->store().all(), opt_config);
  opt->set_steps_taken(opt_steps);
  for (std::size_t i = 0; i < opt_slots.size(); ++i) {
    opt->slots()[i].m = opt_slots[i].m;
    opt->slots()[i].v = opt_slots[i].v;
    opt->slots()[i].t = opt_slots[i].t;
  }
  return opt;
}

}  // namespace kmine::harness
