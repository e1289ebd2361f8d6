/* C interface to the microgrid security-game simulator.
 *
 * All entry points return mg_status; MG_OK means success. On failure,
 * mg_last_error() returns a thread-local message describing what went
 * wrong. Strings returned through char** are heap-allocated and must be
 * released with mg_string_free().
 */
#ifndef MGRID_H
#define MGRID_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mg_status {
  MG_OK = 0,
  MG_ERR_INVALID_ARG = 1,
  MG_ERR_CONFIG = 2,
  MG_ERR_DIVERGED = 3,
  MG_ERR_NUMERIC = 4,
  MG_ERR_IO = 5,
  MG_ERR_INTERNAL = 6
} mg_status;

/* Opaque co-simulation environment handle. */
typedef struct mg_env mg_env;

const char* mg_version(void);
const char* mg_last_error(void);
void mg_string_free(char* s);

/* Spanning-tree communication topology set for n DGs as JSON
 * (edge lists, lambda2 and K_min per topology). */
mg_status mg_topologies_json(int n_dgs, char** out_json);

/* Tabular value-iteration cross-check of the learner on the reduced
 * abstraction; JSON report with the match fraction. */
mg_status mg_oracle_json(uint64_t seed, int episodes, char** out_json);

/* Build an environment from a scenario file plus an optional JSON merge
 * patch (may be NULL or empty). */
mg_status mg_env_create(const char* scenario_path, const char* overrides_json, mg_env** out);
void mg_env_free(mg_env* env);

mg_status mg_env_num_actions(const mg_env* env, int* out);
mg_status mg_env_time(const mg_env* env, double* out);
mg_status mg_env_terminal(const mg_env* env, int* out);
mg_status mg_env_state_json(const mg_env* env, char** out_json);

/* Advance one decision epoch under the given defender topology. Writes the
 * defender utility to *u_d; when breakdown_json is non-NULL, also returns
 * the full per-epoch utility accounting. */
mg_status mg_env_step(mg_env* env, int action, double* u_d, char** breakdown_json);

/* Bit-exact snapshot/restore of the environment between epochs. */
mg_status mg_env_snapshot_json(const mg_env* env, char** out_json);
mg_status mg_env_restore_json(mg_env* env, const char* snapshot_json);

/* Full closed-loop scenario run (defender included), artifacts written to
 * out_dir (pass NULL or "" to skip artifacts). Returns the run summary. */
mg_status mg_run_scenario(const char* scenario_path, const char* overrides_json,
                          const char* out_dir, char** summary_json);

/* Offline training: benign plus randomized injection episodes, checkpoint
 * written to checkpoint_path. */
mg_status mg_pretrain(const char* scenario_path, const char* overrides_json,
                      const char* checkpoint_path, char** report_json);

/* Side-by-side comparison of two run summaries (JSON in, JSON out with a
 * rendered text table under "table"). */
mg_status mg_compare_summaries(const char* summary_json_a, const char* summary_json_b,
                               char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* MGRID_H */
