#ifndef CIAO_H
#define CIAO_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CiaoEnvKind {
  CIAO_ENV_KIND_WOLFPACK = 0,
  CIAO_ENV_KIND_LBF = 1,
} CiaoEnvKind;

typedef enum CiaoStatus {
  CIAO_STATUS_OK = 0,
  CIAO_STATUS_NULL_POINTER = 1,
  CIAO_STATUS_INVALID_UTF8 = 2,
  CIAO_STATUS_DOMAIN = 3,
  CIAO_STATUS_CAPACITY = 4,
  CIAO_STATUS_SHAPE = 5,
  CIAO_STATUS_NUMERIC = 6,
  CIAO_STATUS_STATE = 7,
  CIAO_STATUS_PARSE = 8,
  CIAO_STATUS_IO = 9,
  CIAO_STATUS_BUFFER_TOO_SMALL = 10,
  CIAO_STATUS_PANIC = 11,
} CiaoStatus;

/**
 * Opaque open-team environment.
 */
typedef struct CiaoEnv CiaoEnv;

/**
 * Opaque coalitional affinity game.
 */
typedef struct CiaoGame CiaoGame;

/**
 * Opaque trained learner with its experiment config.
 */
typedef struct CiaoLearner CiaoLearner;

/**
 * Outcome of one environment step.
 */
typedef struct CiaoStep {
  double reward;
  double team_reward;
  bool done;
  size_t active_count;
} CiaoStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 */
size_t ciao_last_error(char *buf, size_t len);

/**
 * Parses a game file (TOML with `n_agents`, `singleton_values`, `edges`).
 */
enum CiaoStatus ciao_game_from_toml(const char *text, struct CiaoGame **game);

void ciao_game_free(struct CiaoGame *game);

enum CiaoStatus ciao_game_n_agents(const struct CiaoGame *game, size_t *n);

/**
 * Writes a welfare-maximizing partition as one coalition label per agent
 * (`labels` must hold `n_agents` entries) and its welfare.
 */
enum CiaoStatus ciao_game_max_welfare(const struct CiaoGame *game,
                                      uint32_t *labels,
                                      size_t n,
                                      double *welfare);

/**
 * Stability of the partition given as coalition labels (restricted-growth
 * or any labelling with one label per agent).
 */
enum CiaoStatus ciao_game_is_strict_core_stable(const struct CiaoGame *game,
                                                const uint32_t *labels,
                                                size_t n,
                                                bool *stable);

enum CiaoStatus ciao_game_is_inner_stable(const struct CiaoGame *game,
                                          const uint32_t *labels,
                                          size_t n,
                                          bool *stable);

/**
 * Creates an environment with the default settings of `kind`.
 */
enum CiaoStatus ciao_env_new(enum CiaoEnvKind kind,
                             size_t max_agents,
                             uint64_t seed,
                             struct CiaoEnv **env);

void ciao_env_free(struct CiaoEnv *env);

enum CiaoStatus ciao_env_n_actions(const struct CiaoEnv *env, size_t *n);

/**
 * Writes the active agent ids (learner first) into `ids` and their count
 * into `len`. Fails with `BufferTooSmall` (and still sets `len`) when
 * `cap` is too small.
 */
enum CiaoStatus ciao_env_active(const struct CiaoEnv *env, uint32_t *ids, size_t cap, size_t *len);

enum CiaoStatus ciao_env_step(struct CiaoEnv *env, size_t action, struct CiaoStep *step);

/**
 * Loads a learner from an experiment config (TOML text, may be empty for
 * defaults) and a checkpoint file written by the trainer.
 */
enum CiaoStatus ciao_learner_load(const char *config_toml,
                                  const char *checkpoint_path,
                                  struct CiaoLearner **learner);

void ciao_learner_free(struct CiaoLearner *learner);

/**
 * Mean shifted return of the greedy learner over `episodes` episodes with at
 * most `max_agents` agents. A null `learner` evaluates a uniform-random
 * learner under the default config.
 */
enum CiaoStatus ciao_evaluate(const struct CiaoLearner *learner,
                              size_t max_agents,
                              size_t episodes,
                              uint64_t seed,
                              double *mean_return);

/**
 * Runs the exhaustive verification suite; `failed` receives the number of
 * property families with at least one violation.
 */
enum CiaoStatus ciao_verify(uint64_t seed, size_t instances, size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CIAO_H */
