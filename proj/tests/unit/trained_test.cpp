// Runs against the checkpoint the ctest fixture chain trains on the desk
// corpus (gen-corpus -> train).

#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "profchat/errors.hpp"
#include "service.hpp"

using namespace profchat;
using Json = nlohmann::json;

namespace {

const std::filesystem::path kCheckpoint = PROFCHAT_FIXTURE_DIR "/iccm.bin";

service::ChatService make_service(inference::SystemVariant variant) {
  std::map<std::string, service::LoadedCheckpoint> cks;
  cks["iccm"] = {kCheckpoint.string(),
                 std::make_shared<const model::Checkpoint>(model::load_checkpoint(kCheckpoint))};
  return service::ChatService(std::move(cks),
                              corpus::Profile::load(testing::data_dir() / "profile.json"), variant);
}

bool has(const Json& tokens, const std::string& word) {
  const auto v = tokens.get<std::vector<std::string>>();
  return std::find(v.begin(), v.end(), word) != v.end();
}

Json response_tokens(const Json& reply) {
  return Json(corpus::tokenize(reply["response"].get<std::string>()));
}

}  // namespace

TEST_CASE("trained model answers from the profile and follows edits") {
  REQUIRE(std::filesystem::exists(kCheckpoint));
  service::ChatService svc = make_service(inference::SystemVariant::kICCM);

  Json r = Json::parse(svc.chat(R"({"post": "how old are you ?"})").body.dump());
  INFO(r.dump());
  CHECK(r["used_profile"] == true);
  CHECK(r["key"] == "age");
  CHECK(r["value"] == "three");
  CHECK(has(response_tokens(r), "three"));

  REQUIRE(svc.put_profile(R"({"name": "wangzai", "gender": "boy", "age": "four", "city": "beijing",
                              "weight": "fortykg", "constellation": "aries"})")
              .status == 200);
  r = Json::parse(svc.chat(R"({"post": "how old are you ?"})").body.dump());
  INFO(r.dump());
  CHECK(r["value"] == "four");
  CHECK(has(response_tokens(r), "four"));
  CHECK_FALSE(has(response_tokens(r), "three"));
}

TEST_CASE("trained model routes by question") {
  service::ChatService svc = make_service(inference::SystemVariant::kICCM);
  const Json g = Json::parse(svc.chat(R"({"post": "are you a boy or a girl"})").body.dump());
  INFO(g.dump());
  CHECK(g["key"] == "gender");
  double gender = 0.0, others = 0.0;
  for (const Json& e : g["key_dist"]) (e["key"] == "gender" ? gender : others) += e["prob"].get<double>();
  CHECK(gender > others);
  CHECK(has(response_tokens(g), "boy"));

  const Json w = Json::parse(svc.chat(R"({"post": "how is the weather today"})").body.dump());
  INFO(w.dump());
  CHECK(w["used_profile"] == false);
  CHECK(w["value"].is_null());
}

TEST_CASE("bare-value and generated answers differ in form") {
  service::ChatService pv = make_service(inference::SystemVariant::kSeq2SeqPV);
  service::ChatService iccm = make_service(inference::SystemVariant::kICCM);
  const std::string post = R"({"post": "what is your name"})";
  const Json a = Json::parse(pv.chat(post).body.dump());
  const Json b = Json::parse(iccm.chat(post).body.dump());
  CHECK(a["response"] == "wangzai");
  CHECK(has(response_tokens(b), "wangzai"));
  CHECK(response_tokens(b).size() > 1);
}
