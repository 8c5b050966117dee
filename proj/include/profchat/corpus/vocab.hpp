#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace profchat::corpus {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<std::string>;
using IdSeq = std::vector<TokenId>;

struct TextPair;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  static const std::string& reserved_token(TokenId id);

  Vocab();
  // Tokens in id order; the first four must be the reserved tokens.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(const std::string& token) const;
  // UNK for unknown tokens.
  TokenId id(const std::string& token) const;
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_reserved(TokenId id) { return id < kReserved; }

  IdSeq encode(std::span<const std::string> tokens,
               std::size_t* unk_count = nullptr) const;
  TokenSeq decode(std::span<const TokenId> ids) const;

  // FNV-1a over the newline-joined token list.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Keeps the `cap - 4` most frequent tokens of all posts and responses;
// frequency ties go to the lexicographically smaller token. Ids 0..3 are
// PAD, BOS, EOS, UNK.
Vocab build_vocab(std::span<const TextPair> pairs, std::size_t cap);

}  // namespace profchat::corpus
