#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace kmine::encoding {

// Special token ids sit after the ordinary vocab range, in this order.
struct Specials {
  int cls = -1;
  int pad = -1;
  int bos = -1;
  int eos = -1;
  int user_tag = -1;
  int agent_tag = -1;

  static constexpr int count = 6;
  bool contains(int id) const {
    return id == cls || id == pad || id == bos || id == eos || id == user_tag || id == agent_tag;
  }
};

// Tokenizer contract shared by the exact whitespace backend (synthetic mode)
// and any subword adapter plugged in for real data.
class Tokenizer {
 public:
  virtual ~Tokenizer() = default;

  virtual std::vector<int> encode(const std::string& text) const = 0;
  // Inverse for in-vocab text; renders special ids by their surface strings.
  virtual std::string decode(const std::vector<int>& ids, bool skip_specials = false) const = 0;
  virtual int vocab_size() const = 0;           // ordinary + specials
  virtual int ordinary_vocab_size() const = 0;  // ids [0, ordinary) are regular tokens
  virtual const Specials& specials() const = 0;
  virtual const std::string& token(int id) const = 0;

  // Stable digest over the full vocab, stored in checkpoints to detect
  // tokenizer/checkpoint mismatches at evaluation time.
  std::uint64_t fingerprint() const;
};

// Splits on whitespace; every token must be in the vocabulary.
class WhitespaceTokenizer : public Tokenizer {
 public:
  // tokens: ordinary vocabulary, id = position. Specials appended after,
  // with the given surface forms (order: cls pad bos eos user agent).
  explicit WhitespaceTokenizer(std::vector<std::string> tokens,
                               std::vector<std::string> special_surfaces = {});

  std::vector<int> encode(const std::string& text) const override;
  std::string decode(const std::vector<int>& ids, bool skip_specials) const override;
  int vocab_size() const override { return static_cast<int>(all_tokens_.size()); }
  int ordinary_vocab_size() const override { return ordinary_; }
  const Specials& specials() const override { return specials_; }
  const std::string& token(int id) const override;

 private:
  std::vector<std::string> all_tokens_;
  std::unordered_map<std::string, int> ids_;
  Specials specials_;
  int ordinary_ = 0;
};

// Vocabulary file: optional header block of '#' lines, then one token per
// line (line number within the body = id). The header declares the surface
// forms of the six specials:
//   #specials <cls> <pad> <bos> <eos> <user> <agent>
// Missing header falls back to those default surface forms.
std::unique_ptr<WhitespaceTokenizer> load_vocab(const std::string& path);
void save_vocab(const Tokenizer& tok, const std::string& path);

}  // namespace kmine::encoding
