#include "mgrid.h"

#include <cstring>
#include <string>

#include "json.hpp"
#include "mgrid/consensus.hpp"
#include "mgrid/game.hpp"
#include "mgrid/oracle.hpp"
#include "mgrid/scenario.hpp"

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) return nullptr;
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

mg_status status_of(const mgrid::Error& e) {
  switch (e.code()) {
    case mgrid::ErrorCode::invalid_argument:
      return MG_ERR_INVALID_ARG;
    case mgrid::ErrorCode::config:
      return MG_ERR_CONFIG;
    case mgrid::ErrorCode::divergence:
      return MG_ERR_DIVERGED;
    case mgrid::ErrorCode::numeric:
      return MG_ERR_NUMERIC;
    case mgrid::ErrorCode::io:
      return MG_ERR_IO;
    case mgrid::ErrorCode::internal:
      return MG_ERR_INTERNAL;
  }
  return MG_ERR_INTERNAL;
}

template <typename Fn>
mg_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MG_OK;
  } catch (const mgrid::Error& e) {
    g_last_error = e.what();
    return status_of(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return MG_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return MG_ERR_INTERNAL;
  }
}

mg_status set_string(char** out, const std::string& value) {
  if (!out) return MG_OK;
  *out = dup_string(value);
  if (!*out) {
    g_last_error = "out of memory";
    return MG_ERR_INTERNAL;
  }
  return MG_OK;
}

}  // namespace

struct mg_env {
  mgrid::Environment env;
  explicit mg_env(mgrid::EnvironmentConfig cfg) : env(std::move(cfg)) {}
};

extern "C" {

const char* mg_version(void) { return "1.0.0"; }

const char* mg_last_error(void) { return g_last_error.c_str(); }

void mg_string_free(char* s) { std::free(s); }

mg_status mg_topologies_json(int n_dgs, char** out_json) {
  if (!out_json) {
    g_last_error = "out_json must not be NULL";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_dgs > 0 ? n_dgs : 1);
    if (n_dgs > 0) g(0) = 1.0;
    const auto topos = mgrid::enumerate_topologies(n_dgs, g);
    const mg_status rc = set_string(out_json, mgrid::topology_set_json(topos));
    if (rc != MG_OK) throw mgrid::Error(mgrid::ErrorCode::internal, g_last_error);
  });
}

mg_status mg_oracle_json(uint64_t seed, int episodes, char** out_json) {
  if (!out_json) {
    g_last_error = "out_json must not be NULL";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    if (episodes < 1)
      throw mgrid::Error(mgrid::ErrorCode::invalid_argument, "episodes must be >= 1");
    const mgrid::OracleReport report = mgrid::run_oracle_check(seed, episodes);
    set_string(out_json, mgrid::oracle_report_json(report));
  });
}

mg_status mg_env_create(const char* scenario_path, const char* overrides_json, mg_env** out) {
  if (!scenario_path || !out) {
    g_last_error = "scenario_path and out must not be NULL";
    return MG_ERR_INVALID_ARG;
  }
  *out = nullptr;
  return guarded([&] {
    const mgrid::ScenarioConfig cfg =
        mgrid::load_scenario(scenario_path, overrides_json ? overrides_json : "");
    *out = new mg_env(cfg.environment());
  });
}

void mg_env_free(mg_env* env) { delete env; }

mg_status mg_env_num_actions(const mg_env* env, int* out) {
  if (!env || !out) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  *out = env->env.num_actions();
  return MG_OK;
}

mg_status mg_env_time(const mg_env* env, double* out) {
  if (!env || !out) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  *out = env->env.time();
  return MG_OK;
}

mg_status mg_env_terminal(const mg_env* env, int* out) {
  if (!env || !out) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  *out = env->env.terminal() ? 1 : 0;
  return MG_OK;
}

mg_status mg_env_state_json(const mg_env* env, char** out_json) {
  if (!env || !out_json) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    const mgrid::GameState& s = env->env.state();
    nlohmann::json j;
    j["theta"] = s.theta;
    j["burned"] = s.burned;
    j["anomaly"] = s.anomaly;
    j["topology_id"] = s.topology_id;
    j["epoch"] = s.epoch;
    j["t"] = env->env.time();
    set_string(out_json, j.dump());
  });
}

mg_status mg_env_step(mg_env* env, int action, double* u_d, char** breakdown_json) {
  if (!env || !u_d) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    const mgrid::Environment::StepResult res = env->env.step(action);
    *u_d = res.u_d;
    if (breakdown_json) {
      nlohmann::json j;
      j["u_d"] = res.breakdown.u_d;
      j["u_r"] = res.breakdown.u_r;
      j["sigma"] = res.breakdown.sigma;
      j["n_l"] = res.breakdown.n_l;
      j["n_c"] = res.breakdown.n_c;
      j["c_c"] = res.breakdown.c_c;
      j["sum_delta"] = res.breakdown.sum_delta;
      j["p_n"] = res.breakdown.p_n;
      j["terminal"] = res.terminal;
      set_string(breakdown_json, j.dump());
    }
  });
}

mg_status mg_env_snapshot_json(const mg_env* env, char** out_json) {
  if (!env || !out_json) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] { set_string(out_json, env->env.snapshot_json()); });
}

mg_status mg_env_restore_json(mg_env* env, const char* snapshot_json) {
  if (!env || !snapshot_json) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] { env->env.restore_json(snapshot_json); });
}

mg_status mg_run_scenario(const char* scenario_path, const char* overrides_json,
                          const char* out_dir, char** summary_json) {
  if (!scenario_path) {
    g_last_error = "scenario_path must not be NULL";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    const mgrid::ScenarioConfig cfg =
        mgrid::load_scenario(scenario_path, overrides_json ? overrides_json : "");
    const mgrid::RunSummary summary = mgrid::run_scenario(cfg, out_dir ? out_dir : "");
    if (summary_json) set_string(summary_json, summary.to_json());
  });
}

mg_status mg_pretrain(const char* scenario_path, const char* overrides_json,
                      const char* checkpoint_path, char** report_json) {
  if (!scenario_path || !checkpoint_path) {
    g_last_error = "scenario_path and checkpoint_path must not be NULL";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    const mgrid::ScenarioConfig cfg =
        mgrid::load_scenario(scenario_path, overrides_json ? overrides_json : "");
    const mgrid::PretrainReport report = mgrid::pretrain(cfg, checkpoint_path);
    if (report_json) set_string(report_json, report.to_json());
  });
}

mg_status mg_compare_summaries(const char* summary_json_a, const char* summary_json_b,
                               char** report_json) {
  if (!summary_json_a || !summary_json_b || !report_json) {
    g_last_error = "NULL argument";
    return MG_ERR_INVALID_ARG;
  }
  return guarded([&] {
    const mgrid::RunSummary a = mgrid::RunSummary::from_json(summary_json_a);
    const mgrid::RunSummary b = mgrid::RunSummary::from_json(summary_json_b);
    set_string(report_json, mgrid::compare_summaries(a, b));
  });
}

}  // extern "C"
