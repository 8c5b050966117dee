#include "profchat/corpus/profile.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "profchat/errors.hpp"

namespace profchat::corpus {

Profile::Profile(std::vector<std::pair<std::string, std::string>> entries)
    : entries_(std::move(entries)) {
  std::set<std::string> seen;
  for (const auto& [key, value] : entries_) {
    if (key.empty()) throw ConfigError("profile key must not be empty");
    if (!seen.insert(key).second) {
      throw ConfigError("duplicate profile key: " + key);
    }
    if (value.empty() || value.find_first_of(" \t\r\n") != std::string::npos) {
      throw ConfigError("profile value for '" + key +
                        "' must be a single token, got '" + value + "'");
    }
  }
}

std::optional<std::size_t> Profile::index_of(const std::string& key) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == key) return i;
  }
  return std::nullopt;
}

std::vector<std::string> Profile::keys() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

Profile Profile::from_json(const std::string& text) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("profile: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("profile: expected a JSON object");
  std::vector<std::pair<std::string, std::string>> entries;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!it.value().is_string()) {
      throw ParseError("profile: value of '" + it.key() + "' is not a string");
    }
    entries.emplace_back(it.key(), it.value().get<std::string>());
  }
  return Profile(std::move(entries));
}

Profile Profile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open profile " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

std::string Profile::to_json() const {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [key, value] : entries_) doc[key] = value;
  return doc.dump();
}

}  // namespace profchat::corpus
