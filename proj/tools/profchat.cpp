#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>

#include "profchat/corpus/generator.hpp"
#include "profchat/errors.hpp"
#include "profchat/eval/report.hpp"
#include "profchat/training/grad_probe.hpp"
#include "profchat/training/trainer.hpp"
#include "service.hpp"

using namespace profchat;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

inference::SystemVariant parse_variant(const std::string& name) {
  auto v = inference::variant_from_name(name);
  if (!v) throw ConfigError("unknown variant '" + name + "'");
  return *v;
}

std::map<std::string, service::LoadedCheckpoint> load_checkpoints(
    const std::vector<std::string>& paths) {
  std::map<std::string, service::LoadedCheckpoint> out;
  for (const std::string& p : paths) {
    auto ck = std::make_shared<const model::Checkpoint>(model::load_checkpoint(p));
    if (out.contains(ck->regime)) {
      throw ConfigError("two checkpoints trained as '" + ck->regime + "'");
    }
    out[ck->regime] = {p, ck};
  }
  return out;
}

struct GenArgs {
  std::string config, out;
  std::uint64_t seed = 0;
};

int gen_corpus(const GenArgs& a) {
  const auto config = corpus::GeneratorConfig::load(a.config);
  const corpus::CorpusBundle bundle = corpus::generate_synthetic(config, a.seed);
  corpus::audit_bundle(bundle);
  corpus::save_corpus(bundle, a.out);
  std::printf("general %zu binary %zu profile_related %zu manual %zu validation %zu test %zu\n",
              bundle.general.size(), bundle.binary.size(), bundle.profile_related.size(),
              bundle.manual.size(), bundle.validation.size(), bundle.binary_test.size());
  return 0;
}

struct TrainArgs {
  std::string corpus, profile, config, out, variant, report;
};

int train(const TrainArgs& a) {
  training::TrainConfig config = training::TrainConfig::load(a.config);
  if (!a.variant.empty()) config.regime = training::regime_from_name(a.variant);
  const corpus::CorpusBundle bundle = corpus::load_corpus(a.corpus);
  const corpus::Profile profile = corpus::Profile::load(a.profile);
  const training::TrainResult result =
      training::train_two_stage(bundle, profile, config, [](const training::EpochStats& e) {
        std::fprintf(stderr,
                     "stage %d epoch %zu lr %.4f l1 %.4f l2 %.4f per-token %.4f val-l1 %.4f\n",
                     e.stage, e.epoch, e.lr, e.l1, e.l2, e.l1_per_token, e.validation_l1);
      });
  model::save_checkpoint(result.checkpoint, a.out);
  if (!a.report.empty()) write_text(a.report, result.report.to_json().dump(2) + "\n");
  std::printf("saved %s (%s, vocab %zu, %.1f s)\n", a.out.c_str(),
              result.checkpoint.regime.c_str(), result.checkpoint.vocab.size(),
              result.report.wall_seconds);
  return 0;
}

struct ChatArgs {
  std::vector<std::string> ckpts;
  std::string profile, variant;
};

int chat(const ChatArgs& a) {
  const auto checkpoints = load_checkpoints(a.ckpts);
  const corpus::Profile profile = corpus::Profile::load(a.profile);
  const inference::SystemVariant variant = a.variant.empty()
                                               ? service::ChatService::default_variant(checkpoints)
                                               : parse_variant(a.variant);
  auto it = checkpoints.find(inference::required_regime(variant));
  if (it == checkpoints.end()) {
    throw ContractError("variant " + a.variant + " needs a checkpoint trained as '" +
                        inference::required_regime(variant) + "'");
  }
  std::string line;
  while (std::getline(std::cin, line)) {
    const corpus::TokenSeq post = service::ChatService::tokenize_post(line);
    if (post.empty()) continue;
    const inference::DecodeTrace trace =
        inference::generate(post, profile, *it->second.checkpoint, variant);
    std::printf("%s\n%s\n", trace.response_text().c_str(), trace.summary().c_str());
    std::fflush(stdout);
  }
  return 0;
}

struct ServeArgs {
  std::vector<std::string> ckpts;
  std::string profile, addr = "127.0.0.1:8080", variant;
};

int serve(const ServeArgs& a) {
  auto checkpoints = load_checkpoints(a.ckpts);
  corpus::Profile profile = corpus::Profile::load(a.profile);
  const inference::SystemVariant variant = a.variant.empty()
                                               ? service::ChatService::default_variant(checkpoints)
                                               : parse_variant(a.variant);
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--addr must be HOST:PORT");
  const std::string host = a.addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.addr.substr(colon + 1));
    if (const char* env = std::getenv("PORT")) port = std::stoi(env);
  } catch (const std::exception&) {
    throw ConfigError("port must be an integer");
  }
  service::ChatService svc(std::move(checkpoints), std::move(profile), variant);
  httplib::Server server;
  service::mount(server, svc);
  std::fprintf(stderr, "listening on %s:%d\n", host.c_str(), port);
  if (!server.listen(host, port)) throw IoError("cannot listen on " + host + ":" +
                                                std::to_string(port));
  return 0;
}

struct EvalArgs {
  std::string ckpt, corpus, profile, report, csv;
  std::vector<std::string> variants;
};

int eval_command(const EvalArgs& a) {
  const model::Checkpoint ck = model::load_checkpoint(a.ckpt);
  const corpus::CorpusBundle bundle = corpus::load_corpus(a.corpus);
  const corpus::Profile profile = corpus::Profile::load(a.profile);
  std::vector<inference::SystemVariant> variants;
  for (const std::string& v : a.variants) variants.push_back(parse_variant(v));
  if (variants.empty()) variants.assign(std::begin(inference::kAllVariants),
                                        std::end(inference::kAllVariants));
  const eval::EvalReport report = eval::evaluate(bundle, profile, ck, variants);
  write_text(a.report, report.to_json().dump(2) + "\n");
  if (!a.csv.empty()) write_text(a.csv, eval::decisions_csv(report.decisions));
  std::printf("binary_test %.3f/%.3f manual %.3f/%.3f position %.3f\n",
              report.binary_test.binary_acc, report.binary_test.key_acc_cascaded,
              report.manual.binary_acc, report.manual.key_acc_cascaded, report.position.overall);
  for (const auto& s : report.sessions)
    std::printf("%-12s consistency %.3f variety %.3f\n",
                inference::variant_name(s.variant).c_str(), s.proxies.consistency_rate,
                s.proxies.variety_rate);
  return 0;
}

int gradcheck(const std::string& dims, std::uint64_t seed) {
  if (dims != "toy") throw ConfigError("only --dims toy is supported");
  const auto t0 = std::chrono::steady_clock::now();
  const numgrad::GradCheckResult r = training::full_loss_grad_check(seed);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("max_rel_err %.3e at %s[%zu] (analytic %.6e numeric %.6e) entries %zu %.2fs\n",
              r.max_relative_error, r.worst_name.c_str(), r.worst_index, r.worst_analytic,
              r.worst_numeric, r.entries_checked, secs);
  std::printf("max_abs_err %.3e max_rel_err(|g| >= %.0e) %.3e\n", r.max_absolute_error,
              numgrad::kSignificantGradient, r.max_relative_error_significant);
  return r.max_relative_error < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"profile-consistent chatbot: corpus, training, chat and evaluation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-corpus", "generate a synthetic corpus");
  gen_cmd->add_option("--config", gen.config, "generator config JSON")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->required();
  gen_cmd->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "two-stage training");
  train_cmd->add_option("--corpus", tr.corpus, "corpus directory")->required();
  train_cmd->add_option("--profile", tr.profile, "agent profile JSON")->required();
  train_cmd->add_option("--config", tr.config, "training config JSON")->required();
  train_cmd->add_option("--out", tr.out, "checkpoint path")->required();
  train_cmd->add_option("--variant", tr.variant, "anchor regime")
      ->check(CLI::IsMember({"iccm", "iccm-pos"}));
  train_cmd->add_option("--report", tr.report, "write the training report JSON here");

  ChatArgs ch;
  auto* chat_cmd = app.add_subcommand("chat", "line-oriented chat REPL on stdin");
  chat_cmd->add_option("--ckpt", ch.ckpts, "checkpoint(s); one per regime")->required();
  chat_cmd->add_option("--profile", ch.profile, "agent profile JSON")->required();
  chat_cmd->add_option("--variant", ch.variant, "system variant");

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP API (PORT overrides the port)");
  serve_cmd->add_option("--ckpt", sv.ckpts, "checkpoint(s); one per regime")->required();
  serve_cmd->add_option("--profile", sv.profile, "agent profile JSON")->required();
  serve_cmd->add_option("--addr", sv.addr, "HOST:PORT");
  serve_cmd->add_option("--variant", sv.variant, "initial system variant");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "detector, position and session metrics");
  eval_cmd->add_option("--ckpt", ev.ckpt, "checkpoint")->required();
  eval_cmd->add_option("--corpus", ev.corpus, "corpus directory")->required();
  eval_cmd->add_option("--profile", ev.profile, "agent profile JSON")->required();
  eval_cmd->add_option("--report", ev.report, "report JSON path")->required();
  eval_cmd->add_option("--variant", ev.variants, "restrict session variants");
  eval_cmd->add_option("--csv", ev.csv, "per-item detector decisions CSV");

  std::string dims;
  std::uint64_t gc_seed = 1;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference check of the full loss");
  gc_cmd->add_option("--dims", dims, "parameter dims")->required();
  gc_cmd->add_option("--seed", gc_seed, "parameter init seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) return gen_corpus(gen);
    if (*train_cmd) return train(tr);
    if (*chat_cmd) return chat(ch);
    if (*serve_cmd) return serve(sv);
    if (*eval_cmd) return eval_command(ev);
    if (*gc_cmd) return gradcheck(dims, gc_seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.kind().c_str(), e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
