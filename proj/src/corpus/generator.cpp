#include "profchat/corpus/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "profchat/errors.hpp"
#include "profchat/rng.hpp"

namespace profchat::corpus {

using json = nlohmann::json;

namespace {

constexpr const char* kValueSlot = "{v}";

bool is_slot(const std::string& token) {
  return token.size() > 2 && token.front() == '{' && token.back() == '}';
}

std::vector<TemplateSpec> parse_templates(const json& node,
                                          const std::string& where) {
  std::vector<TemplateSpec> out;
  if (!node.is_array()) throw ConfigError(where + " must be an array");
  for (const auto& entry : node) {
    TemplateSpec t;
    t.post = entry.at("post").get<std::string>();
    t.responses = entry.at("responses").get<std::vector<std::string>>();
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<std::vector<std::string>> parse_phrases(const json& doc,
                                                    const char* field) {
  std::vector<std::vector<std::string>> out;
  if (!doc.contains(field)) return out;
  for (const auto& s : doc.at(field)) out.push_back(tokenize(s.get<std::string>()));
  return out;
}

class PairMaker {
 public:
  PairMaker(const GeneratorConfig& config, Rng& rng)
      : config_(config), rng_(rng) {}

  // Fills a template; `value` replaces {v}. Returns the 1-based position
  // of the value in the response, if any.
  TextPair fill(const TemplateSpec& spec, const std::string& value) {
    std::map<std::string, std::string> chosen;
    TextPair pair;
    pair.post = substitute(tokenize(spec.post), value, chosen);
    const std::string& response_template = pick_response(spec);
    pair.response = substitute(tokenize(response_template), value, chosen);
    const TokenSeq raw = tokenize(response_template);
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == kValueSlot) {
        pair.pos = i + 1;
        break;
      }
    }
    return pair;
  }

  TextPair positive(const KeyConfig& key) {
    const TemplateSpec& spec = rng_.pick(key.posts);
    TextPair pair = fill(spec, rng_.pick(key.spec.lexicon));
    pair.z = 1;
    pair.key = key.spec.name;
    maybe_style(pair.post);
    return pair;
  }

  TextPair negative(const KeyConfig& key) {
    TextPair pair = fill(rng_.pick(key.negative_posts), "");
    pair.z = 0;
    pair.pos.reset();
    maybe_style(pair.post);
    return pair;
  }

  TextPair general() {
    TextPair pair = fill(rng_.pick(config_.general), "");
    pair.pos.reset();
    maybe_style(pair.post);
    return pair;
  }

  // Off while building manual posts, which get exactly one styling pass.
  void set_styling(bool on) { styling_ = on; }

  // Adds a filler prefix, suffix or both.
  void style(TokenSeq& post) {
    TokenSeq styled;
    const bool prefix = !config_.manual_prefixes.empty() &&
                        (config_.manual_suffixes.empty() || rng_.uniform() < 0.6);
    if (prefix) styled = rng_.pick(config_.manual_prefixes);
    styled.insert(styled.end(), post.begin(), post.end());
    if (!config_.manual_suffixes.empty() && (!prefix || rng_.uniform() < 0.3)) {
      const auto& suffix = rng_.pick(config_.manual_suffixes);
      styled.insert(styled.end(), suffix.begin(), suffix.end());
    }
    post = std::move(styled);
  }

 private:
  void maybe_style(TokenSeq& post) {
    if (styling_ && config_.styled_fraction > 0.0 && rng_.uniform() < config_.styled_fraction)
      style(post);
  }

  const std::string& pick_response(const TemplateSpec& spec) {
    if (spec.responses.size() == 1 || rng_.uniform() < config_.dominant_response)
      return spec.responses.front();
    return spec.responses[1 + rng_.index(spec.responses.size() - 1)];
  }

  TokenSeq substitute(const TokenSeq& tokens, const std::string& value,
                      std::map<std::string, std::string>& chosen) {
    TokenSeq out;
    for (const std::string& t : tokens) {
      if (t == kValueSlot) {
        out.push_back(value);
      } else if (is_slot(t)) {
        auto it = chosen.find(t);
        if (it == chosen.end()) {
          const auto& fillers = config_.slots.at(t.substr(1, t.size() - 2));
          it = chosen.emplace(t, rng_.pick(fillers)).first;
        }
        out.push_back(it->second);
      } else {
        out.push_back(t);
      }
    }
    return out;
  }

  const GeneratorConfig& config_;
  Rng& rng_;
  bool styling_ = true;
};

// Largest-remainder split of `total` over `weights`.
std::vector<std::size_t> apportion(std::size_t total,
                                   const std::vector<double>& weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = total * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    remainders.emplace_back(exact - out[i], i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned)
    ++out[remainders[i % remainders.size()].second];
  return out;
}

}  // namespace

GeneratorConfig GeneratorConfig::from_json(const std::string& text) {
  GeneratorConfig config;
  try {
    const json doc = json::parse(text);
    config.scale = doc.value("scale", config.scale);
    config.general_count = doc.value("general_count", config.general_count);
    config.validation_count =
        doc.value("validation_count", config.validation_count);
    config.binary_test_count =
        doc.value("binary_test_count", config.binary_test_count);
    config.manual_count = doc.value("manual_count", config.manual_count);
    config.styled_fraction = doc.value("styled_fraction", config.styled_fraction);
    config.max_len = doc.value("max_len", config.max_len);
    config.dominant_response =
        doc.value("dominant_response", config.dominant_response);
    if (doc.contains("slots")) {
      config.slots =
          doc.at("slots").get<std::map<std::string, std::vector<std::string>>>();
    }
    config.general = parse_templates(doc.at("general"), "general");
    config.manual_prefixes = parse_phrases(doc, "manual_prefixes");
    config.manual_suffixes = parse_phrases(doc, "manual_suffixes");
    for (const auto& k : doc.at("keys")) {
      KeyConfig key;
      key.spec.name = k.at("name").get<std::string>();
      key.spec.triggers = k.value("triggers", std::vector<std::string>{});
      key.spec.lexicon = k.value("lexicon", std::vector<std::string>{});
      key.positive = k.value("positive", std::size_t{0});
      key.negative = k.value("negative", std::size_t{0});
      key.posts = parse_templates(k.value("posts", json::array()),
                                  "posts of key " + key.spec.name);
      key.negative_posts =
          parse_templates(k.value("negative_posts", json::array()),
                          "negative_posts of key " + key.spec.name);
      config.keys.push_back(std::move(key));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator config: ") + e.what());
  }
  config.validate();
  return config;
}

GeneratorConfig GeneratorConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open generator config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

void GeneratorConfig::validate() const {
  if (!(styled_fraction >= 0.0 && styled_fraction <= 1.0)) {
    throw ConfigError("styled_fraction must be in [0, 1]");
  }
  if (keys.empty()) throw ConfigError("generator config lists no keys");
  if (!(scale > 0.0)) throw ConfigError("scale must be positive");
  if (general.empty()) throw ConfigError("general template set is empty");
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  std::set<std::string> names;
  auto check_slots = [this](const TemplateSpec& t, const std::string& where,
                            bool value_allowed) {
    std::vector<std::string> texts = t.responses;
    texts.push_back(t.post);
    if (t.responses.empty()) {
      throw ConfigError(where + ": template '" + t.post + "' has no responses");
    }
    for (const std::string& text : texts) {
      for (const std::string& tok : tokenize(text)) {
        if (tok == kValueSlot) {
          if (!value_allowed) {
            throw ConfigError(where + ": {v} not allowed in '" + text + "'");
          }
        } else if (is_slot(tok) && !slots.contains(tok.substr(1, tok.size() - 2))) {
          throw ConfigError(where + ": unknown slot " + tok + " in '" + text + "'");
        }
      }
    }
  };
  for (const KeyConfig& k : keys) {
    const std::string where = "key '" + k.spec.name + "'";
    if (!names.insert(k.spec.name).second) throw ConfigError("duplicate " + where);
    if (k.posts.empty()) throw ConfigError(where + " has an empty positive template set");
    if (k.negative_posts.empty())
      throw ConfigError(where + " has an empty negative template set");
    if (k.spec.lexicon.empty()) throw ConfigError(where + " has an empty lexicon");
    for (const TemplateSpec& t : k.posts) {
      check_slots(t, where, true);
      for (const std::string& r : t.responses) {
        const TokenSeq toks = tokenize(r);
        if (std::count(toks.begin(), toks.end(), kValueSlot) != 1) {
          throw ConfigError(where + ": positive response '" + r +
                            "' must hold {v} exactly once");
        }
      }
      const TokenSeq post_tokens = tokenize(t.post);
      if (std::count(post_tokens.begin(), post_tokens.end(), kValueSlot)) {
        throw ConfigError(where + ": post '" + t.post + "' must not hold {v}");
      }
    }
    for (const TemplateSpec& t : k.negative_posts) check_slots(t, where, false);
  }
  for (const TemplateSpec& t : general) check_slots(t, "general", false);
}

std::vector<std::pair<std::size_t, std::size_t>> scaled_counts(
    const GeneratorConfig& config) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const KeyConfig& k : config.keys) {
    auto scaled = [&](std::size_t n) {
      return std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(n * config.scale)));
    };
    out.emplace_back(scaled(k.positive), scaled(k.negative));
  }
  return out;
}

CorpusBundle generate_synthetic(const GeneratorConfig& config,
                                std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  PairMaker maker(config, rng);
  CorpusBundle bundle;
  for (const KeyConfig& k : config.keys) bundle.keys.push_back(k.spec);
  bundle.fillers = config.manual_prefixes;
  bundle.fillers.insert(bundle.fillers.end(), config.manual_suffixes.begin(),
                        config.manual_suffixes.end());
  const std::vector<std::string> key_names = bundle.key_names();
  const SynonymTable synonyms = bundle.synonyms();

  const auto counts = scaled_counts(config);
  for (std::size_t k = 0; k < config.keys.size(); ++k) {
    for (std::size_t i = 0; i < counts[k].first; ++i)
      bundle.binary.push_back(maker.positive(config.keys[k]));
    for (std::size_t i = 0; i < counts[k].second; ++i)
      bundle.binary.push_back(maker.negative(config.keys[k]));
  }
  rng.shuffle(bundle.binary);

  for (const TextPair& p : bundle.binary) {
    if (p.z != 1) continue;
    auto label = noisy_key_label(p.post, key_names, synonyms);
    if (!label) continue;
    TextPair related = p;
    related.key = key_names[*label];
    bundle.profile_related.push_back(std::move(related));
  }

  for (std::size_t i = 0; i < config.general_count; ++i)
    bundle.general.push_back(maker.general());
  bundle.general.insert(bundle.general.end(), bundle.binary.begin(),
                        bundle.binary.end());
  rng.shuffle(bundle.general);

  std::vector<double> cell_weights;
  for (const KeyConfig& k : config.keys) {
    cell_weights.push_back(static_cast<double>(k.positive));
    cell_weights.push_back(static_cast<double>(k.negative));
  }

  for (std::size_t i = 0; i < config.validation_count; ++i) {
    if (i % 2 == 0) {
      bundle.validation.push_back(maker.general());
    } else {
      const KeyConfig& k = rng.pick(config.keys);
      bundle.validation.push_back(rng.uniform() < 0.5 ? maker.positive(k)
                                                      : maker.negative(k));
    }
  }

  const auto test_cells = apportion(config.binary_test_count, cell_weights);
  for (std::size_t k = 0; k < config.keys.size(); ++k) {
    for (std::size_t i = 0; i < test_cells[2 * k]; ++i)
      bundle.binary_test.push_back(maker.positive(config.keys[k]));
    for (std::size_t i = 0; i < test_cells[2 * k + 1]; ++i)
      bundle.binary_test.push_back(maker.negative(config.keys[k]));
  }
  rng.shuffle(bundle.binary_test);

  // Styled held-out posts; negatives come uniformly from every distractor
  // template (general chit-chat and per-key negatives).
  std::set<TokenSeq> training_posts;
  for (const auto* split : {&bundle.general, &bundle.binary, &bundle.validation})
    for (const TextPair& p : *split) training_posts.insert(p.post);
  std::vector<std::pair<const TemplateSpec*, const KeyConfig*>> distractors;
  for (const TemplateSpec& t : config.general) distractors.emplace_back(&t, nullptr);
  for (const KeyConfig& k : config.keys)
    for (const TemplateSpec& t : k.negative_posts) distractors.emplace_back(&t, &k);

  maker.set_styling(false);
  for (std::size_t i = 0; i < config.manual_count; ++i) {
    TextPair pair;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 100) {
        throw ConfigError("cannot build a manual post distinct from training posts");
      }
      if (i % 2 == 0) {
        pair = maker.positive(rng.pick(config.keys));
      } else {
        pair = maker.fill(*rng.pick(distractors).first, "");
        pair.z = 0;
        pair.pos.reset();
      }
      maker.style(pair.post);
      if (pair.post.size() <= config.max_len && !training_posts.contains(pair.post))
        break;
    }
    bundle.manual.push_back(std::move(pair));
  }

  for (const auto* split : {&bundle.general, &bundle.validation, &bundle.binary_test,
                            &bundle.manual}) {
    for (const TextPair& p : *split) {
      if (p.post.size() > config.max_len || p.response.size() > config.max_len) {
        throw ConfigError("template produces a sequence longer than max_len: " +
                          join_tokens(p.post) + " / " + join_tokens(p.response));
      }
    }
  }
  audit_bundle(bundle);
  return bundle;
}

void audit_bundle(const CorpusBundle& bundle) {
  std::set<std::pair<TokenSeq, TokenSeq>> positives;
  for (const TextPair& p : bundle.binary) {
    if (!p.z) throw ConfigError("binary pair without z label: " + join_tokens(p.post));
    if (*p.z == 1) positives.emplace(p.post, p.response);
  }
  for (const TextPair& p : bundle.profile_related) {
    const std::string text = join_tokens(p.post) + " / " + join_tokens(p.response);
    if (p.z != 1 || !p.key || !p.pos)
      throw ConfigError("profile-related pair missing labels: " + text);
    if (!positives.contains({p.post, p.response}))
      throw ConfigError("profile-related pair not a binary positive: " + text);
    auto key = std::find_if(bundle.keys.begin(), bundle.keys.end(),
                            [&](const KeySpec& k) { return k.name == *p.key; });
    if (key == bundle.keys.end())
      throw ConfigError("profile-related pair names unknown key: " + text);
    std::size_t hits = 0;
    for (const std::string& t : p.response)
      hits += std::count(key->lexicon.begin(), key->lexicon.end(), t);
    if (hits != 1)
      throw ConfigError("profile-related response must hold exactly one value of key '" +
                        *p.key + "': " + text);
    const std::string& anchor = p.response.at(*p.pos - 1);
    if (std::find(key->lexicon.begin(), key->lexicon.end(), anchor) == key->lexicon.end())
      throw ConfigError("profile-related pos does not point at the value: " + text);
  }
  std::set<TokenSeq> training_posts;
  for (const auto* split : {&bundle.general, &bundle.binary, &bundle.validation})
    for (const TextPair& p : *split) training_posts.insert(p.post);
  for (const TextPair& p : bundle.manual) {
    if (!p.z || (*p.z == 1 && !p.key))
      throw ConfigError("manual pair missing gold labels: " + join_tokens(p.post));
    if (training_posts.contains(p.post))
      throw ConfigError("manual post repeats a training post: " + join_tokens(p.post));
  }
}

}  // namespace profchat::corpus
