#include <doctest.h>

#include <thread>

#include <httplib.h>

#include "helpers.hpp"
#include "profchat/errors.hpp"
#include "service.hpp"

using namespace profchat;
using service::ChatService;
using service::LoadedCheckpoint;
using Json = nlohmann::json;

namespace {

const corpus::Profile kProfile({{"name", "wangzai"}, {"age", "three"}});

std::map<std::string, LoadedCheckpoint> checkpoints(double z, bool with_pos = false) {
  std::map<std::string, LoadedCheckpoint> out;
  out["iccm"] = {"a.bin", std::make_shared<const model::Checkpoint>(
                              testing::fixed_gate_checkpoint(z, 5))};
  if (with_pos) {
    out["iccm-pos"] = {"b.bin", std::make_shared<const model::Checkpoint>(
                                    testing::fixed_gate_checkpoint(z, 5, "iccm-pos"))};
  }
  return out;
}

Json body(const service::Reply& r) { return Json::parse(r.body.dump()); }

}  // namespace

TEST_CASE("construction and default variant") {
  CHECK(ChatService::default_variant(checkpoints(0.7)) == inference::SystemVariant::kICCM);
  std::map<std::string, LoadedCheckpoint> only_pos;
  only_pos["iccm-pos"] = checkpoints(0.7, true).at("iccm-pos");
  CHECK(ChatService::default_variant(only_pos) == inference::SystemVariant::kICCMPos);
  CHECK_THROWS_AS(ChatService::default_variant({}), ConfigError);
  CHECK_THROWS_AS(ChatService(checkpoints(0.7), kProfile, inference::SystemVariant::kICCMPos),
                  ConfigError);
  CHECK_THROWS_AS(ChatService(checkpoints(0.7), corpus::Profile{}, inference::SystemVariant::kICCM),
                  ConfigError);
}

TEST_CASE("chat handler") {
  ChatService svc(checkpoints(0.7), kProfile, inference::SystemVariant::kICCM);
  CHECK(body(svc.health()) == Json{{"status", "ok"}});

  const service::Reply ok = svc.chat(R"({"post": "What is your AGE ?", "session_id": "s1"})");
  REQUIRE(ok.status == 200);
  const Json j = body(ok);
  CHECK(j["session_id"] == "s1");
  CHECK(j["post"] == Json::array({"what", "is", "your", "age", "?"}));
  CHECK(j["variant"] == "iccm");
  CHECK(j["used_profile"] == true);
  CHECK(j["z_prob"].get<double>() == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(j["key_dist"].size() == 2);
  CHECK(j["value"].is_string());
  for (const char* field : {"response", "key", "y_b", "y_f"}) CHECK(j.contains(field));
  // Identical requests give identical replies.
  CHECK(svc.chat(R"({"post": "What is your AGE ?", "session_id": "s1"})").body == ok.body);
  CHECK_FALSE(body(svc.chat(R"({"post": "hi"})")).contains("session_id"));

  CHECK(svc.chat("{not json").status == 400);
  CHECK(svc.chat("[1, 2]").status == 400);
  CHECK(svc.chat(R"({"text": "hi"})").status == 400);
  CHECK(svc.chat(R"({"post": 3})").status == 400);
  const service::Reply empty = svc.chat(R"({"post": "   "})");
  CHECK(empty.status == 422);
  CHECK(body(empty)["error"] == "contract");
}

TEST_CASE("a negative gate answers without the profile") {
  ChatService svc(checkpoints(0.3), kProfile, inference::SystemVariant::kICCM);
  const Json j = body(svc.chat(R"({"post": "how is the weather today"})"));
  CHECK(j["used_profile"] == false);
  CHECK(j["value"].is_null());
  CHECK(j["key"].is_null());
}

TEST_CASE("profile endpoints") {
  ChatService svc(checkpoints(0.9), kProfile, inference::SystemVariant::kSeq2SeqPV);
  CHECK(body(svc.get_profile()) == Json{{"name", "wangzai"}, {"age", "three"}});

  const service::Reply put = svc.put_profile(R"({"name": "xiaoqiang", "age": "four"})");
  REQUIRE(put.status == 200);
  CHECK(body(put) == Json{{"name", "xiaoqiang"}, {"age", "four"}});
  CHECK(svc.get_profile().body.dump() == R"({"name":"xiaoqiang","age":"four"})");
  // The next reply uses the new profile.
  const Json j = body(svc.chat(R"({"post": "what is your age"})"));
  REQUIRE(j["value"].is_string());
  CHECK((j["value"] == "xiaoqiang" || j["value"] == "four"));
  CHECK(j["response"] == j["value"]);

  CHECK(svc.put_profile("nope").status == 400);
  CHECK(svc.put_profile(R"(["a"])").status == 400);
  CHECK(svc.put_profile("{}").status == 422);
  CHECK(svc.put_profile(R"({"age": "four years"})").status >= 400);
  CHECK(svc.put_profile(R"({"age": 4})").status >= 400);
  // Failed updates leave the profile alone.
  CHECK(body(svc.get_profile()) == Json{{"name", "xiaoqiang"}, {"age", "four"}});
}

TEST_CASE("variant endpoints") {
  ChatService svc(checkpoints(0.7), kProfile, inference::SystemVariant::kICCM);
  const Json v = body(svc.variants());
  CHECK(v["current"] == "iccm");
  REQUIRE(v["variants"].size() == 5);
  for (const Json& e : v["variants"]) {
    const bool pos = e["name"] == "iccm-pos";
    CHECK(e["available"] == !pos);
    CHECK(e["regime"] == (pos ? "iccm-pos" : "iccm"));
    if (pos) CHECK(e["checkpoint"].is_null());
    else CHECK(e["checkpoint"] == "a.bin");
  }
  CHECK(svc.set_variant(R"({"name": "iccm-pos"})").status == 404);
  CHECK(svc.set_variant(R"({"name": "gpt"})").status == 404);
  CHECK(svc.set_variant(R"({"variant": "iccm"})").status == 400);
  CHECK(svc.set_variant("{").status == 400);
  const service::Reply set = svc.set_variant(R"({"name": "seq2seq-pv"})");
  CHECK(set.status == 200);
  CHECK(body(svc.variants())["current"] == "seq2seq-pv");
  CHECK(body(svc.chat(R"({"post": "what is your name"})"))["variant"] == "seq2seq-pv");

  ChatService both(checkpoints(0.7, true), kProfile, inference::SystemVariant::kICCM);
  CHECK(both.set_variant(R"({"name": "iccm-pos"})").status == 200);
  CHECK(body(both.chat(R"({"post": "what is your name"})"))["variant"] == "iccm-pos");
}

TEST_CASE("HTTP routes") {
  ChatService svc(checkpoints(0.7), kProfile, inference::SystemVariant::kICCM);
  httplib::Server server;
  service::mount(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto health = client.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(Json::parse(health->body) == Json{{"status", "ok"}});
  CHECK(health->get_header_value("Content-Type").find("application/json") != std::string::npos);

  const std::string req = R"({"post": "what is your name", "session_id": 7})";
  auto a = client.Post("/api/chat", req, "application/json");
  auto b = client.Post("/api/chat", req, "application/json");
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->status == 200);
  CHECK(a->body == b->body);
  CHECK(Json::parse(a->body)["session_id"] == 7);

  auto bad = client.Post("/api/chat", "oops", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  auto put = client.Put("/api/profile", R"({"age": "ten"})", "application/json");
  REQUIRE(put);
  CHECK(put->status == 200);
  auto get = client.Get("/api/profile");
  REQUIRE(get);
  CHECK(Json::parse(get->body) == Json{{"age", "ten"}});

  auto vars = client.Get("/api/variants");
  REQUIRE(vars);
  CHECK(Json::parse(vars->body)["variants"].size() == 5);
  auto set = client.Post("/api/variant", R"({"name": "seq2seq"})", "application/json");
  REQUIRE(set);
  CHECK(set->status == 200);
  auto missing = client.Get("/api/nothing");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  server.stop();
  thread.join();
}
