#include "service.hpp"

#include <httplib.h>

#include "profchat/errors.hpp"

namespace profchat::service {

using inference::SystemVariant;
using Json = nlohmann::ordered_json;

namespace {

Reply error(int status, const std::string& kind, const std::string& message) {
  return {status, Json{{"error", kind}, {"message", message}}};
}

// Parses a JSON object body or explains why not.
std::optional<nlohmann::json> parse_object(const std::string& body, Reply& failure) {
  nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) {
    failure = error(400, "parse", "malformed JSON");
    return std::nullopt;
  }
  if (!doc.is_object()) {
    failure = error(400, "parse", "expected a JSON object");
    return std::nullopt;
  }
  return doc;
}

}  // namespace

ChatService::ChatService(std::map<std::string, LoadedCheckpoint> checkpoints,
                         corpus::Profile profile, SystemVariant variant)
    : checkpoints_(std::move(checkpoints)),
      profile_(std::make_shared<const corpus::Profile>(std::move(profile))),
      variant_(variant) {
  if (checkpoints_.empty()) throw ConfigError("service needs at least one checkpoint");
  if (profile_->empty()) throw ConfigError("service needs a non-empty profile");
  if (!available(variant_)) {
    throw ConfigError("variant " + inference::variant_name(variant_) +
                      " needs a checkpoint trained as '" + inference::required_regime(variant_) +
                      "'");
  }
}

SystemVariant ChatService::default_variant(
    const std::map<std::string, LoadedCheckpoint>& checkpoints) {
  if (checkpoints.contains("iccm")) return SystemVariant::kICCM;
  if (checkpoints.contains("iccm-pos")) return SystemVariant::kICCMPos;
  throw ConfigError("no checkpoint with a known training regime");
}

bool ChatService::available(SystemVariant v) const {
  return checkpoints_.contains(inference::required_regime(v));
}

ChatService::Snapshot ChatService::snapshot() const {
  std::lock_guard lock(mutex_);
  return {profile_, variant_};
}

corpus::TokenSeq ChatService::tokenize_post(const std::string& text) {
  return corpus::tokenize(text);
}

Reply ChatService::health() const { return {200, Json{{"status", "ok"}}}; }

Reply ChatService::chat(const std::string& body) const {
  Reply failure;
  const auto doc = parse_object(body, failure);
  if (!doc) return failure;
  if (!doc->contains("post") || !(*doc)["post"].is_string()) {
    return error(400, "parse", "field 'post' must be a string");
  }
  const corpus::TokenSeq post = tokenize_post((*doc)["post"].get<std::string>());
  if (post.empty()) return error(422, "contract", "empty post");

  const Snapshot snap = snapshot();
  const auto& ck = checkpoints_.at(inference::required_regime(snap.variant));
  try {
    const inference::DecodeTrace trace =
        inference::generate(post, *snap.profile, *ck.checkpoint, snap.variant);
    Json out;
    if (doc->contains("session_id")) out["session_id"] = (*doc)["session_id"];
    const Json fields = trace.to_json();
    for (const auto& [k, v] : fields.items()) out[k] = v;
    return {200, out};
  } catch (const Error& e) {
    return error(422, e.kind(), e.what());
  }
}

Reply ChatService::get_profile() const {
  const Snapshot snap = snapshot();
  Json out = Json::object();
  for (const auto& [k, v] : snap.profile->entries()) out[k] = v;
  return {200, out};
}

Reply ChatService::put_profile(const std::string& body) {
  Reply failure;
  if (!parse_object(body, failure)) return failure;
  std::shared_ptr<const corpus::Profile> next;
  try {
    next = std::make_shared<const corpus::Profile>(corpus::Profile::from_json(body));
  } catch (const ParseError& e) {
    return error(400, e.kind(), e.what());
  } catch (const Error& e) {
    return error(422, e.kind(), e.what());
  }
  if (next->empty()) return error(422, "config", "profile must hold at least one key");
  {
    std::lock_guard lock(mutex_);
    profile_ = next;
  }
  return get_profile();
}

Reply ChatService::variants() const {
  const Snapshot snap = snapshot();
  Json list = Json::array();
  for (SystemVariant v : inference::kAllVariants) {
    const std::string regime = inference::required_regime(v);
    auto it = checkpoints_.find(regime);
    list.push_back({{"name", inference::variant_name(v)},
                    {"regime", regime},
                    {"available", it != checkpoints_.end()},
                    {"checkpoint", it != checkpoints_.end() ? Json(it->second.path) : Json()}});
  }
  return {200, Json{{"current", inference::variant_name(snap.variant)}, {"variants", list}}};
}

Reply ChatService::set_variant(const std::string& body) {
  Reply failure;
  const auto doc = parse_object(body, failure);
  if (!doc) return failure;
  if (!doc->contains("name") || !(*doc)["name"].is_string()) {
    return error(400, "parse", "field 'name' must be a string");
  }
  const std::string name = (*doc)["name"].get<std::string>();
  const auto v = inference::variant_from_name(name);
  if (!v) return error(404, "not-found", "unknown variant '" + name + "'");
  if (!available(*v)) {
    return error(404, "not-found", "variant '" + name + "' needs a checkpoint trained as '" +
                                       inference::required_regime(*v) + "'");
  }
  {
    std::lock_guard lock(mutex_);
    variant_ = *v;
  }
  return {200, Json{{"current", name}}};
}

void mount(httplib::Server& server, ChatService& service) {
  auto send = [](httplib::Response& res, const Reply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json; charset=utf-8");
  };
  server.Get("/api/health", [&, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.health());
  });
  server.Post("/api/chat", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.chat(req.body));
  });
  server.Get("/api/profile", [&, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.get_profile());
  });
  server.Put("/api/profile", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.put_profile(req.body));
  });
  server.Get("/api/variants", [&, send](const httplib::Request&, httplib::Response& res) {
    send(res, service.variants());
  });
  server.Post("/api/variant", [&, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.set_variant(req.body));
  });
}

}  // namespace profchat::service
