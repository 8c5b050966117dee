#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "profchat/corpus/profile.hpp"
#include "profchat/corpus/vocab.hpp"

namespace profchat::corpus {

// One post/response pair as stored on disk. `pos` is 1-based.
struct TextPair {
  TokenSeq post;
  TokenSeq response;
  std::optional<int> z;
  std::optional<std::string> key;
  std::optional<std::size_t> pos;

  bool operator==(const TextPair&) const = default;
};

// Token-id form used by the model. key_label indexes the profile keys and
// position_label is 1-based into the response.
struct TrainingPair {
  IdSeq post;
  IdSeq response;
  std::optional<int> z_label;
  std::optional<std::size_t> key_label;
  std::optional<std::size_t> position_label;
};

// Throws ContractError when a pair breaks its invariants.
void validate_pair(const TrainingPair& pair, std::size_t max_len);

// Keys, their trigger words and value lexicons, in key order.
struct KeySpec {
  std::string name;
  std::vector<std::string> triggers;
  std::vector<std::string> lexicon;

  bool operator==(const KeySpec&) const = default;
};

using SynonymTable = std::map<std::string, std::vector<std::string>>;

struct CorpusBundle {
  std::vector<KeySpec> keys;
  std::vector<TextPair> general;          // D_c, every general pair
  std::vector<TextPair> binary;           // D_pb, z-labelled
  std::vector<TextPair> profile_related;  // D_pr, positives with key + pos
  std::vector<TextPair> manual;           // MD, held-out styled posts
  std::vector<TextPair> validation;       // early-stopping split
  std::vector<TextPair> binary_test;      // held-out D_pb-style test set
  // Filler phrases the generator adds around posts ("hey", "by the way").
  std::vector<TokenSeq> fillers;

  SynonymTable synonyms() const;
  std::vector<std::string> key_names() const;
  std::vector<TextPair> all_pairs() const;

  bool operator==(const CorpusBundle&) const = default;
};

// Picks the key whose trigger set meets the post. The earliest matching
// position wins, then the lowest key index. A key's own name always counts
// as one of its triggers.
std::optional<std::size_t> noisy_key_label(std::span<const std::string> post,
                                           const Profile& profile,
                                           const SynonymTable& synonyms);
std::optional<std::size_t> noisy_key_label(std::span<const std::string> post,
                                           std::span<const std::string> keys,
                                           const SynonymTable& synonyms);

// JSON Lines: {"post": [...], "response": [...], "z": 0|1|null,
// "key": "age"|null, "pos": int|null}
std::string pair_to_json_line(const TextPair& pair);
TextPair pair_from_json_line(const std::string& line, std::size_t line_number);
std::vector<TextPair> read_pairs(const std::filesystem::path& path);
void write_pairs(const std::filesystem::path& path,
                 std::span<const TextPair> pairs);

// A corpus directory holds one .jsonl file per split, keys.json and
// fillers.json (an array of phrases; optional on load).
void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& dir);
CorpusBundle load_corpus(const std::filesystem::path& dir);

// Converts text pairs to ids. Unknown tokens become UNK and are counted in
// `unk_count`; unknown key names are a ContractError.
std::vector<TrainingPair> encode_pairs(std::span<const TextPair> pairs,
                                       const Vocab& vocab,
                                       std::span<const std::string> key_names,
                                       std::size_t* unk_count = nullptr);

// Removes filler phrases from both ends of `post`, longest first, until none
// match. Two posts asking the same question reduce to the same core.
TokenSeq strip_fillers(std::span<const std::string> post,
                       std::span<const TokenSeq> fillers);

TokenSeq tokenize(const std::string& text);
std::string join_tokens(std::span<const std::string> tokens);

}  // namespace profchat::corpus
