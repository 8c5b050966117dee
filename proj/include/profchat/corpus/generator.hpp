#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "profchat/corpus/corpus.hpp"

namespace profchat::corpus {

// A post template and the response templates that answer it. Templates are
// whitespace-separated; `{v}` marks the profile value slot and other `{name}`
// tokens are filled from the config's slot lexicons, consistently within a
// pair.
struct TemplateSpec {
  std::string post;
  std::vector<std::string> responses;
};

struct KeyConfig {
  KeySpec spec;
  // Unscaled positive/negative counts (the shipped config uses the profile
  // binary dataset statistics).
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::vector<TemplateSpec> posts;
  std::vector<TemplateSpec> negative_posts;
};

struct GeneratorConfig {
  std::vector<KeyConfig> keys;
  std::vector<TemplateSpec> general;
  std::map<std::string, std::vector<std::string>> slots;
  std::vector<std::vector<std::string>> manual_prefixes;
  std::vector<std::vector<std::string>> manual_suffixes;

  double scale = 0.02;
  std::size_t general_count = 600;
  std::size_t validation_count = 200;
  std::size_t binary_test_count = 2000;
  std::size_t manual_count = 600;
  std::size_t max_len = 16;
  // Probability of the first listed response of a template.
  double dominant_response = 0.7;
  // Share of generated training and test posts that carry a filler prefix or
  // suffix. Manual posts always do.
  double styled_fraction = 0.0;

  static GeneratorConfig from_json(const std::string& text);
  static GeneratorConfig load(const std::filesystem::path& path);
  void validate() const;
};

// Deterministic for a fixed (config, seed). Positive responses carry a value
// drawn from the key's lexicon, not from any particular agent profile.
CorpusBundle generate_synthetic(const GeneratorConfig& config,
                                std::uint64_t seed);

// Scaled per-key (positive, negative) counts, at least one each.
std::vector<std::pair<std::size_t, std::size_t>> scaled_counts(
    const GeneratorConfig& config);

// Throws ConfigError naming the first broken invariant: profile-related
// pairs must be labelled positives of the binary split, hold exactly one
// token of their key's lexicon at `pos`, and manual pairs must carry gold
// labels and not repeat a training post.
void audit_bundle(const CorpusBundle& bundle);

}  // namespace profchat::corpus
