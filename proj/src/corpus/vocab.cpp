#include "profchat/corpus/vocab.hpp"

#include <algorithm>
#include <array>
#include <map>

#include "profchat/corpus/corpus.hpp"
#include "profchat/errors.hpp"

namespace profchat::corpus {

namespace {
const std::array<std::string, Vocab::kReserved> kReservedTokens = {
    "<pad>", "<bos>", "<eos>", "<unk>"};
}

const std::string& Vocab::reserved_token(TokenId id) {
  return kReservedTokens.at(id);
}

Vocab::Vocab() : Vocab(std::vector<std::string>(kReservedTokens.begin(),
                                                kReservedTokens.end())) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < kReserved ||
      !std::equal(kReservedTokens.begin(), kReservedTokens.end(),
                  tokens_.begin())) {
    throw ConfigError("vocab must start with <pad> <bos> <eos> <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    auto [it, inserted] = index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!inserted) throw ConfigError("duplicate vocab token: " + tokens_[i]);
  }
}

bool Vocab::contains(const std::string& token) const {
  return index_.contains(token);
}

TokenId Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocab of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[id];
}

IdSeq Vocab::encode(std::span<const std::string> tokens,
                    std::size_t* unk_count) const {
  IdSeq ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) {
    auto it = index_.find(t);
    if (it == index_.end()) {
      ids.push_back(kUnk);
      if (unk_count) ++*unk_count;
    } else {
      ids.push_back(it->second);
    }
  }
  return ids;
}

TokenSeq Vocab::decode(std::span<const TokenId> ids) const {
  TokenSeq out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(token(id));
  return out;
}

std::uint64_t Vocab::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const std::string& t : tokens_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  return h;
}

Vocab build_vocab(std::span<const TextPair> pairs, std::size_t cap) {
  if (cap < Vocab::kReserved) {
    throw ConfigError("vocab cap must be at least 4, got " +
                      std::to_string(cap));
  }
  std::map<std::string, std::size_t> counts;
  for (const TextPair& p : pairs) {
    for (const auto& t : p.post) ++counts[t];
    for (const auto& t : p.response) ++counts[t];
  }
  for (std::size_t i = 0; i < Vocab::kReserved; ++i)
    counts.erase(kReservedTokens[i]);

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  // counts is already lexicographic, so a stable sort on frequency keeps
  // the tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), cap - Vocab::kReserved);

  std::vector<std::string> tokens(kReservedTokens.begin(),
                                  kReservedTokens.end());
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocab(std::move(tokens));
}

}  // namespace profchat::corpus
