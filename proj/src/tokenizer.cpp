#include "kmine/tokenizer.hpp"

#include <fstream>

#include "kmine/errors.hpp"
#include "kmine/util.hpp"

namespace kmine::encoding {

namespace {
const std::vector<std::string> kDefaultSpecialSurfaces = {"<cls>", "<pad>", "<bos>",
                                                          "<eos>", "<user>", "<agent>"};
}

std::uint64_t Tokenizer::fingerprint() const {
  // FNV-1a over all token surfaces.
  std::uint64_t h = 1469598103934665603ULL;
  for (int i = 0; i < vocab_size(); ++i) {
    for (char c : token(i)) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= 0xff;
    h *= 1099511628211ULL;
  }
  return h;
}

WhitespaceTokenizer::WhitespaceTokenizer(std::vector<std::string> tokens,
                                         std::vector<std::string> special_surfaces)
    : all_tokens_(std::move(tokens)) {
  ordinary_ = static_cast<int>(all_tokens_.size());
  if (special_surfaces.empty()) special_surfaces = kDefaultSpecialSurfaces;
  if (special_surfaces.size() != Specials::count)
    throw Error("expected 6 special surface forms");
  for (const auto& s : special_surfaces) all_tokens_.push_back(s);
  specials_.cls = ordinary_ + 0;
  specials_.pad = ordinary_ + 1;
  specials_.bos = ordinary_ + 2;
  specials_.eos = ordinary_ + 3;
  specials_.user_tag = ordinary_ + 4;
  specials_.agent_tag = ordinary_ + 5;
  for (int i = 0; i < static_cast<int>(all_tokens_.size()); ++i) {
    if (!ids_.emplace(all_tokens_[i], i).second)
      throw Error("duplicate token in vocabulary: " + all_tokens_[i]);
  }
}

std::vector<int> WhitespaceTokenizer::encode(const std::string& text) const {
  std::vector<int> out;
  for (const auto& w : split_ws(text)) {
    auto it = ids_.find(w);
    if (it == ids_.end()) throw Error("token not in vocabulary: '" + w + "'");
    out.push_back(it->second);
  }
  return out;
}

std::string WhitespaceTokenizer::decode(const std::vector<int>& ids, bool skip_specials) const {
  std::string out;
  for (int id : ids) {
    if (skip_specials && specials_.contains(id)) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

const std::string& WhitespaceTokenizer::token(int id) const {
  if (id < 0 || id >= static_cast<int>(all_tokens_.size()))
    throw Error("token id out of range: " + std::to_string(id));
  return all_tokens_[static_cast<std::size_t>(id)];
}

std::unique_ptr<WhitespaceTokenizer> load_vocab(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open vocab file " + path);
  std::vector<std::string> tokens;
  std::vector<std::string> specials = kDefaultSpecialSurfaces;
  std::string line;
  bool in_header = true;
  while (std::getline(in, line)) {
    if (in_header && !line.empty() && line[0] == '#') {
      auto parts = split_ws(line);
      if (!parts.empty() && parts[0] == "#specials") {
        if (parts.size() != 1 + Specials::count)
          throw Error("vocab header: #specials expects 6 surface forms");
        specials.assign(parts.begin() + 1, parts.end());
      }
      continue;
    }
    in_header = false;
    const std::string tok = trim(line);
    if (!tok.empty()) tokens.push_back(tok);
  }
  // The body lists ordinary tokens only; specials come from the header.
  return std::make_unique<WhitespaceTokenizer>(std::move(tokens), std::move(specials));
}

void save_vocab(const Tokenizer& tok, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path + " for writing");
  const auto& sp = tok.specials();
  out << "#specials " << tok.token(sp.cls) << ' ' << tok.token(sp.pad) << ' '
      << tok.token(sp.bos) << ' ' << tok.token(sp.eos) << ' ' << tok.token(sp.user_tag) << ' '
      << tok.token(sp.agent_tag) << "\n";
  for (int i = 0; i < tok.ordinary_vocab_size(); ++i) out << tok.token(i) << "\n";
}

}  // namespace kmine::encoding
