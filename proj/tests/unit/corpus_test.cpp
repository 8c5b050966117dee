#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "profchat/corpus/generator.hpp"
#include "profchat/errors.hpp"

using namespace profchat;
using namespace profchat::corpus;

namespace {

TextPair text(const std::string& post, const std::string& response) {
  return {tokenize(post), tokenize(response), std::nullopt, std::nullopt, std::nullopt};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const GeneratorConfig& desk_config() {
  static const GeneratorConfig config =
      GeneratorConfig::load(testing::data_dir() / "desk_config.json");
  return config;
}

const CorpusBundle& desk_bundle() {
  static const CorpusBundle bundle = generate_synthetic(desk_config(), 42);
  return bundle;
}

}  // namespace

TEST_CASE("vocab reserves the first four ids") {
  const Vocab v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.token(Vocab::kBos) == "<bos>");
  CHECK(v.token(Vocab::kEos) == "<eos>");
  CHECK(v.token(Vocab::kUnk) == "<unk>");
  CHECK(v.id("anything") == Vocab::kUnk);
  CHECK_THROWS_AS(v.token(4), IndexError);
  CHECK_THROWS_AS(Vocab(std::vector<std::string>{"a", "b"}), ConfigError);
}

TEST_CASE("build_vocab keeps everything under a large cap") {
  const std::vector<TextPair> pairs = {text("a b c", "d e")};
  const Vocab v = build_vocab(pairs, 100);
  CHECK(v.size() == 9);
  for (const char* t : {"a", "b", "c", "d", "e"}) CHECK(v.contains(t));
  CHECK_THROWS_AS(build_vocab(pairs, 3), ConfigError);
}

TEST_CASE("build_vocab breaks frequency ties lexicographically") {
  const std::vector<TextPair> pairs = {text("pear pear pear apple apple", "apple apple apple pear pear")};
  const Vocab v = build_vocab(pairs, 100);
  CHECK(v.id("apple") < v.id("pear"));
}

TEST_CASE("build_vocab with cap 10 keeps the six most frequent tokens") {
  // Counts by hand: t1..t6 appear 8,7,6,5,4,3 times; t7, t8 appear twice.
  std::vector<TextPair> pairs;
  const int counts[] = {8, 7, 6, 5, 4, 3, 2, 2};
  for (int i = 0; i < 8; ++i)
    for (int n = 0; n < counts[i]; ++n) pairs.push_back(text("t" + std::to_string(i + 1), "x"));
  // "x" is the most frequent of all and takes one of the six places.
  const Vocab v = build_vocab(pairs, 10);
  CHECK(v.size() == 10);
  std::set<std::string> kept(v.tokens().begin() + 4, v.tokens().end());
  CHECK(kept == std::set<std::string>{"x", "t1", "t2", "t3", "t4", "t5"});
  CHECK(v.token(4) == "x");
}

TEST_CASE("vocab encodes, decodes and hashes") {
  const Vocab v({"<pad>", "<bos>", "<eos>", "<unk>", "hello", "world"});
  std::size_t unk = 0;
  const IdSeq ids = v.encode(tokenize("hello there world"), &unk);
  CHECK(ids == IdSeq{4, Vocab::kUnk, 5});
  CHECK(unk == 1);
  CHECK(v.decode(ids) == TokenSeq{"hello", "<unk>", "world"});
  CHECK(v.hash() == Vocab(v.tokens()).hash());
  CHECK(v.hash() != Vocab({"<pad>", "<bos>", "<eos>", "<unk>", "world", "hello"}).hash());
}

TEST_CASE("tokenize lowercases and splits on whitespace") {
  CHECK(tokenize("  How OLD\tare you ") == TokenSeq{"how", "old", "are", "you"});
  CHECK(tokenize("   ").empty());
  CHECK(join_tokens(TokenSeq{"a", "b"}) == "a b");
}

TEST_CASE("profile keeps order and rejects bad entries") {
  const Profile p = Profile::from_json(R"({"name": "wangzai", "age": "three"})");
  CHECK(p.keys() == std::vector<std::string>{"name", "age"});
  CHECK(p.value(1) == "three");
  CHECK(p.index_of("age") == 1u);
  CHECK_FALSE(p.index_of("city"));
  CHECK(Profile::from_json(p.to_json()) == p);
  CHECK_THROWS_AS(Profile::from_json(R"({"age": "three years"})"), ConfigError);
  CHECK_THROWS_AS(Profile::from_json(R"({"age": 3})"), ParseError);
  CHECK_THROWS_AS(Profile::from_json("[1]"), ParseError);
  CHECK_THROWS_AS(Profile::from_json("{"), ParseError);
  CHECK_THROWS_AS(Profile({{"a", "x"}, {"a", "y"}}), ConfigError);
  const Profile shipped = Profile::load(testing::data_dir() / "profile.json");
  CHECK(shipped.keys() ==
        std::vector<std::string>{"name", "gender", "age", "city", "weight", "constellation"});
}

TEST_CASE("noisy_key_label") {
  const Profile p({{"name", "wangzai"}, {"age", "three"}, {"city", "beijing"}});
  const SynonymTable syn = {{"age", {"old"}}, {"city", {"live", "from"}}};
  SUBCASE("literal key token") { CHECK(noisy_key_label(tokenize("what is your age"), p, syn) == 1u); }
  SUBCASE("no trigger") { CHECK_FALSE(noisy_key_label(tokenize("nice weather today"), p, syn)); }
  SUBCASE("earliest trigger wins") {
    // "live" (city) sits at position 1 and "old" (age) at position 3.
    CHECK(noisy_key_label(tokenize("live here old man"), p, syn) == 2u);
  }
  SUBCASE("same position resolves to the lower key") {
    const SynonymTable both = {{"name", {"call"}}, {"age", {"call"}}};
    CHECK(noisy_key_label(tokenize("call me"), p, both) == 0u);
  }
}

TEST_CASE("json lines round trip and errors") {
  TextPair pair = text("how old are you", "i am three");
  pair.z = 1;
  pair.key = "age";
  pair.pos = 3;
  const std::string line = pair_to_json_line(pair);
  CHECK(pair_from_json_line(line, 1) == pair);

  const TextPair bare = pair_from_json_line(R"({"post": ["hi"], "response": ["yo"]})", 2);
  CHECK_FALSE(bare.z);
  CHECK_FALSE(bare.key);
  CHECK_FALSE(bare.pos);

  try {
    pair_from_json_line(R"({"post": ["hi"]})", 7);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
    CHECK(std::string(e.what()).find("response") != std::string::npos);
  }
  CHECK_THROWS_AS(pair_from_json_line("not json", 1), ParseError);
  CHECK_THROWS_AS(pair_from_json_line(R"({"post": ["a"], "response": ["b"], "z": 2})", 1),
                  ParseError);
  CHECK_THROWS_AS(pair_from_json_line(R"({"post": ["a"], "response": ["b"], "pos": 0})", 1),
                  ParseError);
}

TEST_CASE("read_pairs names the broken line") {
  const auto dir = testing::scratch_dir("read-pairs");
  {
    std::ofstream out(dir / "x.jsonl");
    out << R"({"post": ["a"], "response": ["b"]})" << "\n"
        << R"({"post": ["a"]})" << "\n";
  }
  try {
    read_pairs(dir / "x.jsonl");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("encode_pairs counts injected out-of-vocab tokens") {
  const Vocab v({"<pad>", "<bos>", "<eos>", "<unk>", "how", "old", "are", "you", "i", "am", "three"});
  std::vector<TextPair> pairs = {text("how old are you", "i am three"),
                                 text("how zz1 are zz2", "i am zz3"),
                                 text("zz4 old", "zz5")};
  pairs[0].z = 1;
  pairs[0].key = "age";
  pairs[0].pos = 3;
  std::size_t unk = 0;
  const std::vector<std::string> keys = {"name", "age"};
  const auto out = encode_pairs(pairs, v, keys, &unk);
  CHECK(unk == 5);
  CHECK(out[0].key_label == 1u);
  CHECK(out[0].position_label == 3u);
  CHECK(out[1].post[1] == Vocab::kUnk);
  pairs[0].key = "weight";
  CHECK_THROWS_AS(encode_pairs(pairs, v, keys), ContractError);
}

TEST_CASE("validate_pair enforces the pair invariants") {
  TrainingPair p{{4, 5}, {6, 7}, 1, 0, 2};
  CHECK_NOTHROW(validate_pair(p, 16));
  CHECK_THROWS_AS(validate_pair(p, 1), ContractError);
  p.position_label = 3;
  CHECK_THROWS_AS(validate_pair(p, 16), ContractError);
  p.position_label = 2;
  p.z_label = 0;
  CHECK_THROWS_AS(validate_pair(p, 16), ContractError);
  TrainingPair empty{{}, {6}, std::nullopt, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(validate_pair(empty, 16), ContractError);
}

TEST_CASE("strip_fillers removes phrases from both ends") {
  const std::vector<TokenSeq> fillers = {{"hey"}, {"hi", "there"}, {"please"}, {"by", "the", "way"}};
  CHECK(strip_fillers(tokenize("hey how old are you please"), fillers) == tokenize("how old are you"));
  CHECK(strip_fillers(tokenize("hi there hey how old are you by the way"), fillers) ==
        tokenize("how old are you"));
  CHECK(strip_fillers(tokenize("how old are you"), fillers) == tokenize("how old are you"));
  // A post made only of a filler keeps its last phrase.
  CHECK(strip_fillers(tokenize("hey"), fillers) == tokenize("hey"));
}

TEST_CASE("generator is deterministic to the byte") {
  const CorpusBundle again = generate_synthetic(desk_config(), 42);
  CHECK(again == desk_bundle());
  const auto a = testing::scratch_dir("gen-a");
  const auto b = testing::scratch_dir("gen-b");
  save_corpus(desk_bundle(), a);
  save_corpus(again, b);
  for (const auto& entry : std::filesystem::directory_iterator(a)) {
    INFO(entry.path().filename().string());
    CHECK(slurp(entry.path()) == slurp(b / entry.path().filename()));
  }
  CHECK_FALSE(generate_synthetic(desk_config(), 43) == desk_bundle());
}

TEST_CASE("save then load is the identity") {
  const auto dir = testing::scratch_dir("roundtrip");
  save_corpus(desk_bundle(), dir);
  CHECK(load_corpus(dir) == desk_bundle());
  CHECK_THROWS(load_corpus(dir / "missing"));
}

TEST_CASE("per-key counts follow the profile binary dataset statistics") {
  // Positive/negative counts per key of the mined profile dataset.
  const std::pair<std::size_t, std::size_t> table[] = {
      {6966, 3442}, {7665, 8259}, {6038, 3309}, {6264, 8350}, {6856, 3800}, {8404, 7577}};
  const auto& config = desk_config();
  const auto counts = scaled_counts(config);
  REQUIRE(counts.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(config.keys[k].positive == table[k].first);
    CHECK(config.keys[k].negative == table[k].second);
    const double pos = static_cast<double>(counts[k].first);
    const double neg = static_cast<double>(counts[k].second);
    CHECK(std::abs(pos - table[k].first * config.scale) <= 0.5);
    CHECK(std::abs(neg - table[k].second * config.scale) <= 0.5);
  }
  std::size_t total = 0;
  for (const auto& c : counts) total += c.first + c.second;
  CHECK(desk_bundle().binary.size() == total);
}

TEST_CASE("generated bundle invariants") {
  const CorpusBundle& b = desk_bundle();
  CHECK_NOTHROW(audit_bundle(b));
  std::set<TokenSeq> positives;
  for (const TextPair& p : b.binary) {
    REQUIRE(p.z);
    if (*p.z == 1) positives.insert(p.post);
    else CHECK_FALSE(p.key);
  }
  const auto synonyms = b.synonyms();
  for (const TextPair& p : b.profile_related) {
    CHECK(p.z == 1);
    REQUIRE(p.key);
    REQUIRE(p.pos);
    CHECK(positives.contains(p.post));
    const auto spec = std::find_if(b.keys.begin(), b.keys.end(),
                                   [&](const KeySpec& k) { return k.name == *p.key; });
    REQUIRE(spec != b.keys.end());
    std::size_t hits = 0;
    for (const std::string& tok : p.response)
      hits += std::count(spec->lexicon.begin(), spec->lexicon.end(), tok);
    CHECK(hits == 1);
    CHECK(std::count(spec->lexicon.begin(), spec->lexicon.end(), p.response[*p.pos - 1]) == 1);
  }
  std::set<TokenSeq> training;
  for (const auto* split : {&b.general, &b.binary, &b.profile_related})
    for (const TextPair& p : *split) training.insert(p.post);
  for (const TextPair& p : b.manual) {
    REQUIRE(p.z);
    if (*p.z == 1) CHECK(p.key);
    CHECK_FALSE(training.contains(p.post));
  }
  CHECK(b.binary_test.size() == desk_config().binary_test_count);
  CHECK_FALSE(b.fillers.empty());
}

TEST_CASE("audit rejects a broken profile-related pair") {
  CorpusBundle b = desk_bundle();
  REQUIRE_FALSE(b.profile_related.empty());
  b.profile_related[0].pos = 1 + (*b.profile_related[0].pos % b.profile_related[0].response.size());
  CHECK_THROWS_AS(audit_bundle(b), ConfigError);
}

TEST_CASE("generator config validation") {
  GeneratorConfig c = desk_config();
  c.styled_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = desk_config();
  c.keys.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(GeneratorConfig::from_json("{"), ConfigError);
  CHECK_THROWS(GeneratorConfig::load(testing::data_dir() / "nope.json"));
}

TEST_CASE("extended keys need only a config change") {
  const auto ext = GeneratorConfig::load(testing::data_dir() / "extended_config.json");
  const CorpusBundle b = generate_synthetic(ext, 42);
  CHECK_NOTHROW(audit_bundle(b));
  const auto names = b.key_names();
  for (const char* k : {"hobby", "idol", "speciality", "employer"})
    CHECK(std::find(names.begin(), names.end(), k) != names.end());
  const Profile p = Profile::load(testing::data_dir() / "profile_extended.json");
  CHECK(p.keys() == names);
}
