#include "profchat/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "profchat/errors.hpp"

namespace profchat::corpus {

using ordered_json = nlohmann::ordered_json;

namespace {

const char* const kSplitFiles[] = {"general.jsonl",    "binary.jsonl",
                                   "profile_related.jsonl", "manual.jsonl",
                                   "validation.jsonl", "binary_test.jsonl"};

template <typename Bundle>
auto* split_ref(Bundle& b, std::size_t i) {
  decltype(&b.general) splits[] = {&b.general,    &b.binary,
                                   &b.profile_related, &b.manual,
                                   &b.validation, &b.binary_test};
  return splits[i];
}

TokenSeq token_list(const ordered_json& node, const char* field,
                    std::size_t line_number) {
  if (!node.is_array()) {
    throw ParseError("line " + std::to_string(line_number) + ": field \"" +
                     field + "\" must be an array of tokens");
  }
  TokenSeq out;
  for (const auto& t : node) {
    if (!t.is_string()) {
      throw ParseError("line " + std::to_string(line_number) + ": field \"" +
                       field + "\" holds a non-string token");
    }
    out.push_back(t.get<std::string>());
  }
  return out;
}

}  // namespace

void validate_pair(const TrainingPair& pair, std::size_t max_len) {
  if (pair.post.empty() || pair.post.size() > max_len) {
    throw ContractError("post length " + std::to_string(pair.post.size()) +
                        " outside [1, " + std::to_string(max_len) + "]");
  }
  if (pair.response.empty() || pair.response.size() > max_len) {
    throw ContractError("response length " +
                        std::to_string(pair.response.size()) +
                        " outside [1, " + std::to_string(max_len) + "]");
  }
  if (pair.position_label &&
      (*pair.position_label < 1 || *pair.position_label > pair.response.size())) {
    throw ContractError("position label " +
                        std::to_string(*pair.position_label) +
                        " outside response of length " +
                        std::to_string(pair.response.size()));
  }
  if (pair.z_label && *pair.z_label == 0 && pair.key_label) {
    throw ContractError("negative pair must not carry a key label");
  }
}

SynonymTable CorpusBundle::synonyms() const {
  SynonymTable table;
  for (const KeySpec& k : keys) table[k.name] = k.triggers;
  return table;
}

std::vector<std::string> CorpusBundle::key_names() const {
  std::vector<std::string> out;
  for (const KeySpec& k : keys) out.push_back(k.name);
  return out;
}

std::vector<TextPair> CorpusBundle::all_pairs() const {
  std::vector<TextPair> out;
  for (const auto* split : {&general, &binary, &profile_related, &manual,
                            &validation, &binary_test}) {
    out.insert(out.end(), split->begin(), split->end());
  }
  return out;
}

std::optional<std::size_t> noisy_key_label(std::span<const std::string> post,
                                           std::span<const std::string> keys,
                                           const SynonymTable& synonyms) {
  for (const std::string& token : post) {
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (token == keys[k]) return k;
      auto it = synonyms.find(keys[k]);
      if (it == synonyms.end()) continue;
      if (std::find(it->second.begin(), it->second.end(), token) !=
          it->second.end()) {
        return k;
      }
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> noisy_key_label(std::span<const std::string> post,
                                           const Profile& profile,
                                           const SynonymTable& synonyms) {
  const std::vector<std::string> keys = profile.keys();
  return noisy_key_label(post, keys, synonyms);
}

std::string pair_to_json_line(const TextPair& pair) {
  ordered_json doc;
  doc["post"] = pair.post;
  doc["response"] = pair.response;
  doc["z"] = pair.z ? ordered_json(*pair.z) : ordered_json(nullptr);
  doc["key"] = pair.key ? ordered_json(*pair.key) : ordered_json(nullptr);
  doc["pos"] = pair.pos ? ordered_json(*pair.pos) : ordered_json(nullptr);
  return doc.dump();
}

TextPair pair_from_json_line(const std::string& line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  ordered_json doc;
  try {
    doc = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(where + "malformed JSON (" + e.what() + ")");
  }
  if (!doc.is_object()) throw ParseError(where + "expected a JSON object");
  for (const char* field : {"post", "response"}) {
    if (!doc.contains(field)) {
      throw ParseError(where + "missing field \"" + field + "\"");
    }
  }
  TextPair pair;
  pair.post = token_list(doc["post"], "post", line_number);
  pair.response = token_list(doc["response"], "response", line_number);
  if (doc.contains("z") && !doc["z"].is_null()) {
    if (!doc["z"].is_number_integer() ||
        (doc["z"].get<int>() != 0 && doc["z"].get<int>() != 1)) {
      throw ParseError(where + "field \"z\" must be 0, 1 or null");
    }
    pair.z = doc["z"].get<int>();
  }
  if (doc.contains("key") && !doc["key"].is_null()) {
    if (!doc["key"].is_string()) {
      throw ParseError(where + "field \"key\" must be a string or null");
    }
    pair.key = doc["key"].get<std::string>();
  }
  if (doc.contains("pos") && !doc["pos"].is_null()) {
    if (!doc["pos"].is_number_unsigned() || doc["pos"].get<std::size_t>() < 1) {
      throw ParseError(where + "field \"pos\" must be a positive integer");
    }
    pair.pos = doc["pos"].get<std::size_t>();
  }
  return pair;
}

std::vector<TextPair> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TextPair> pairs;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      pairs.push_back(pair_from_json_line(line, line_number));
    } catch (const ParseError& e) {
      throw ParseError(path.filename().string() + " " + e.what());
    }
  }
  return pairs;
}

void write_pairs(const std::filesystem::path& path,
                 std::span<const TextPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const TextPair& p : pairs) out << pair_to_json_line(p) << '\n';
}

void save_corpus(const CorpusBundle& bundle, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < std::size(kSplitFiles); ++i) {
    write_pairs(dir / kSplitFiles[i], *split_ref(bundle, i));
  }
  ordered_json keys = ordered_json::array();
  for (const KeySpec& k : bundle.keys) {
    ordered_json entry;
    entry["name"] = k.name;
    entry["triggers"] = k.triggers;
    entry["lexicon"] = k.lexicon;
    keys.push_back(entry);
  }
  std::ofstream out(dir / "keys.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "keys.json").string());
  out << keys.dump(2) << '\n';

  ordered_json fillers = ordered_json::array();
  for (const TokenSeq& f : bundle.fillers) fillers.push_back(join_tokens(f));
  std::ofstream fout(dir / "fillers.json", std::ios::binary);
  if (!fout) throw IoError("cannot write " + (dir / "fillers.json").string());
  fout << fillers.dump(2) << '\n';
}

CorpusBundle load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("corpus directory not found: " + dir.string());
  }
  CorpusBundle bundle;
  for (std::size_t i = 0; i < std::size(kSplitFiles); ++i) {
    *split_ref(bundle, i) = read_pairs(dir / kSplitFiles[i]);
  }
  std::ifstream in(dir / "keys.json");
  if (!in) throw IoError("cannot open " + (dir / "keys.json").string());
  ordered_json keys;
  try {
    keys = ordered_json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("keys.json: ") + e.what());
  }
  if (!keys.is_array()) throw ParseError("keys.json: expected an array");
  for (const auto& entry : keys) {
    try {
      bundle.keys.push_back({entry.at("name").get<std::string>(),
                             entry.at("triggers").get<std::vector<std::string>>(),
                             entry.at("lexicon").get<std::vector<std::string>>()});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("keys.json: ") + e.what());
    }
  }
  if (std::ifstream fin(dir / "fillers.json"); fin) {
    try {
      for (const auto& f : ordered_json::parse(fin))
        bundle.fillers.push_back(tokenize(f.get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("fillers.json: ") + e.what());
    }
  }
  return bundle;
}

TokenSeq strip_fillers(std::span<const std::string> post,
                       std::span<const TokenSeq> fillers) {
  std::vector<const TokenSeq*> order;
  for (const TokenSeq& f : fillers)
    if (!f.empty()) order.push_back(&f);
  std::stable_sort(order.begin(), order.end(),
                   [](const TokenSeq* a, const TokenSeq* b) { return a->size() > b->size(); });
  std::size_t lo = 0, hi = post.size();
  for (bool changed = true; changed;) {
    changed = false;
    for (const TokenSeq* f : order) {
      const std::size_t n = f->size();
      if (hi - lo <= n) continue;
      if (std::equal(f->begin(), f->end(), post.begin() + lo)) {
        lo += n;
        changed = true;
      } else if (std::equal(f->begin(), f->end(), post.begin() + (hi - n))) {
        hi -= n;
        changed = true;
      }
    }
  }
  return TokenSeq(post.begin() + lo, post.begin() + hi);
}

std::vector<TrainingPair> encode_pairs(std::span<const TextPair> pairs,
                                       const Vocab& vocab,
                                       std::span<const std::string> key_names,
                                       std::size_t* unk_count) {
  std::vector<TrainingPair> out;
  out.reserve(pairs.size());
  for (const TextPair& p : pairs) {
    TrainingPair t;
    t.post = vocab.encode(p.post, unk_count);
    t.response = vocab.encode(p.response, unk_count);
    t.z_label = p.z;
    t.position_label = p.pos;
    if (p.key) {
      auto it = std::find(key_names.begin(), key_names.end(), *p.key);
      if (it == key_names.end()) {
        throw ContractError("pair names unknown key '" + *p.key + "'");
      }
      t.key_label = static_cast<std::size_t>(it - key_names.begin());
    }
    out.push_back(std::move(t));
  }
  return out;
}

TokenSeq tokenize(const std::string& text) {
  TokenSeq out;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) {
      return static_cast<char>(std::tolower(c));
    });
    out.push_back(word);
  }
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

}  // namespace profchat::corpus
