// Command-line front end. Links only the C API of the shared library.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mgrid.h"

namespace {

int exit_code_of(mg_status rc) {
  switch (rc) {
    case MG_OK:
      return 0;
    case MG_ERR_DIVERGED:
      return 3;
    case MG_ERR_CONFIG:
    case MG_ERR_INVALID_ARG:
    case MG_ERR_IO:
      return 2;
    default:
      return 1;
  }
}

int fail(mg_status rc) {
  std::fprintf(stderr, "error: %s\n", mg_last_error());
  return exit_code_of(rc);
}

std::string overrides_json(const std::optional<std::uint64_t>& seed,
                           const std::string& defender, const std::string& checkpoint,
                           const std::optional<double>& duration) {
  nlohmann::json j = nlohmann::json::object();
  if (seed) j["seed"] = *seed;
  if (!defender.empty()) j["defender"]["mode"] = defender;
  if (!checkpoint.empty()) j["defender"]["checkpoint"] = checkpoint;
  if (duration) j["duration"] = *duration;
  return j.empty() ? std::string() : j.dump();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::fprintf(stderr, "error: cannot open %s\n", path.c_str());
    std::exit(2);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void print_and_free(char* text) {
  if (!text) return;
  std::fputs(text, stdout);
  std::fputc('\n', stdout);
  mg_string_free(text);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AC microgrid security-game simulator"};
  app.require_subcommand(1);

  std::string scenario, out_dir, defender, checkpoint, summary_a, summary_b;
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  int n_dgs = 4;
  int episodes = 200;
  std::uint64_t oracle_seed = 7;

  CLI::App* run = app.add_subcommand("run", "run a scenario and write artifacts");
  run->add_option("--scenario", scenario, "scenario file")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--out", out_dir, "output directory for artifacts");
  run->add_option("--defender", defender, "defender: static | dqn")
      ->check(CLI::IsMember({"static", "dqn"}));
  run->add_option("--checkpoint", checkpoint, "Q-network checkpoint for the dqn defender");
  run->add_option("--duration", duration, "override the scenario duration (s)");

  CLI::App* pre = app.add_subcommand("pretrain", "train the defender offline");
  pre->add_option("--scenario", scenario, "scenario file")->required();
  pre->add_option("--seed", seed, "override the scenario seed");
  std::string checkpoint_out = "checkpoint.json";
  pre->add_option("--out", checkpoint_out, "checkpoint path to write");

  CLI::App* cmp = app.add_subcommand("compare", "compare two run summaries");
  cmp->add_option("summary_a", summary_a, "first summary.json")->required();
  cmp->add_option("summary_b", summary_b, "second summary.json")->required();

  CLI::App* topos = app.add_subcommand("enumerate-topologies",
                                       "list the spanning-tree communication topologies");
  topos->add_option("--dgs", n_dgs, "number of DGs (2..8)");

  CLI::App* oracle = app.add_subcommand("oracle",
                                        "value-iteration cross-check of the learner");
  oracle->add_option("--seed", oracle_seed, "training seed");
  oracle->add_option("--episodes", episodes, "training episodes");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    char* summary = nullptr;
    const std::string ov = overrides_json(seed, defender, checkpoint, duration);
    const mg_status rc = mg_run_scenario(scenario.c_str(), ov.empty() ? nullptr : ov.c_str(),
                                         out_dir.empty() ? nullptr : out_dir.c_str(), &summary);
    if (rc != MG_OK) return fail(rc);
    print_and_free(summary);
    return 0;
  }

  if (pre->parsed()) {
    char* report = nullptr;
    const std::string ov = overrides_json(seed, "dqn", "", std::nullopt);
    const mg_status rc =
        mg_pretrain(scenario.c_str(), ov.c_str(), checkpoint_out.c_str(), &report);
    if (rc != MG_OK) return fail(rc);
    print_and_free(report);
    return 0;
  }

  if (cmp->parsed()) {
    const std::string a = read_file(summary_a);
    const std::string b = read_file(summary_b);
    char* report = nullptr;
    const mg_status rc = mg_compare_summaries(a.c_str(), b.c_str(), &report);
    if (rc != MG_OK) return fail(rc);
    if (report) {
      const nlohmann::json j = nlohmann::json::parse(report);
      std::fputs(j.at("table").get<std::string>().c_str(), stdout);
      std::fputs(j.dump(2).c_str(), stdout);
      std::fputc('\n', stdout);
      mg_string_free(report);
    }
    return 0;
  }

  if (topos->parsed()) {
    char* text = nullptr;
    const mg_status rc = mg_topologies_json(n_dgs, &text);
    if (rc != MG_OK) return fail(rc);
    print_and_free(text);
    return 0;
  }

  if (oracle->parsed()) {
    char* text = nullptr;
    const mg_status rc = mg_oracle_json(oracle_seed, episodes, &text);
    if (rc != MG_OK) return fail(rc);
    print_and_free(text);
    return 0;
  }

  return 0;
}
