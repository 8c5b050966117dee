#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "profchat/corpus/profile.hpp"
#include "profchat/inference/generate.hpp"
#include "profchat/model/params.hpp"

namespace httplib {
class Server;
}

namespace profchat::service {

struct Reply {
  int status = 200;
  nlohmann::ordered_json body;
};

struct LoadedCheckpoint {
  std::string path;
  std::shared_ptr<const model::Checkpoint> checkpoint;
};

// Chat backend. Checkpoints are read-only; the profile and the current
// variant are swapped under a mutex, so every request sees one consistent
// snapshot of both.
class ChatService {
 public:
  // `checkpoints` is keyed by training regime ("iccm", "iccm-pos").
  ChatService(std::map<std::string, LoadedCheckpoint> checkpoints, corpus::Profile profile,
              inference::SystemVariant variant);

  // Picks the first variant whose regime is loaded, preferring ICCM.
  static inference::SystemVariant default_variant(
      const std::map<std::string, LoadedCheckpoint>& checkpoints);

  Reply health() const;
  Reply chat(const std::string& body) const;
  Reply get_profile() const;
  Reply put_profile(const std::string& body);
  Reply variants() const;
  Reply set_variant(const std::string& body);

  // Posts are lowercased and split on whitespace.
  static corpus::TokenSeq tokenize_post(const std::string& text);

 private:
  struct Snapshot {
    std::shared_ptr<const corpus::Profile> profile;
    inference::SystemVariant variant;
  };
  Snapshot snapshot() const;
  bool available(inference::SystemVariant v) const;

  std::map<std::string, LoadedCheckpoint> checkpoints_;
  mutable std::mutex mutex_;
  std::shared_ptr<const corpus::Profile> profile_;
  inference::SystemVariant variant_;
};

// Registers the /api routes on `server`.
void mount(httplib::Server& server, ChatService& service);

}  // namespace profchat::service
