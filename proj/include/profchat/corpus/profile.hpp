#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace profchat::corpus {

// Ordered key -> value identity of the agent. Keys are unique and every
// value is a single token.
class Profile {
 public:
  Profile() = default;
  explicit Profile(std::vector<std::pair<std::string, std::string>> entries);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::string& key(std::size_t i) const { return entries_.at(i).first; }
  const std::string& value(std::size_t i) const { return entries_.at(i).second; }
  std::optional<std::size_t> index_of(const std::string& key) const;
  std::vector<std::string> keys() const;
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

  // {"name": "wangzai", ...}; order preserved as written.
  static Profile from_json(const std::string& text);
  static Profile load(const std::filesystem::path& path);
  std::string to_json() const;

  bool operator==(const Profile&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace profchat::corpus
