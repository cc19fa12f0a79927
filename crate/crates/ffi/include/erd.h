#ifndef ERD_H
#define ERD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum ErdStatus {
  ERD_STATUS_OK = 0,
  ERD_STATUS_NULL_POINTER = 1,
  ERD_STATUS_INVALID_ARGUMENT = 2,
  ERD_STATUS_CONFIG = 3,
  ERD_STATUS_PARSE = 4,
  ERD_STATUS_VERSION = 5,
  ERD_STATUS_VALIDATION = 6,
  ERD_STATUS_GENERATION = 7,
  ERD_STATUS_PLANNING = 8,
  /**
   * Misuse such as stepping a finished episode or an out-of-range action.
   */
  ERD_STATUS_USAGE = 9,
  ERD_STATUS_IO = 10,
  ERD_STATUS_PANIC = 11,
} ErdStatus;

/**
 * Why an episode ended.
 */
typedef enum ErdTermination {
  ERD_TERMINATION_NONE = 0,
  ERD_TERMINATION_EXIT = 1,
  ERD_TERMINATION_STEP_CAP = 2,
} ErdTermination;

/**
 * Opaque environment handle.
 */
typedef struct ErdEnv ErdEnv;

/**
 * Opaque instance handle.
 */
typedef struct ErdInstance ErdInstance;

/**
 * Flat view of the environment state. Bit `i` of `puzzle_mask` is button `i`.
 */
typedef struct ErdObservation {
  double x;
  double y;
  double z;
  double heading;
  double pitch;
  double roll;
  uint64_t puzzle_mask;
  uint32_t num_buttons;
  uint32_t num_joints;
  uint32_t steps_taken;
  bool exited;
  bool done;
} ErdObservation;

typedef struct ErdStepResult {
  struct ErdObservation observation;
  double reward;
  bool done;
  uint32_t primitive_steps;
  enum ErdTermination termination;
} ErdStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *erd_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *erd_last_error_message(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, freed once.
 */
void erd_string_free(char *s);

/**
 * Named instance: `one-button` or `two-button`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ErdStatus erd_instance_canonical(const char *name, struct ErdInstance **out);

/**
 * Generate from the default schematic with `num_buttons` buttons.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum ErdStatus erd_instance_generate(uint32_t num_buttons, uint64_t seed, struct ErdInstance **out);

/**
 * Generate from schematic parameters given as JSON.
 *
 * # Safety
 * `params_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ErdStatus erd_instance_generate_json(const char *params_json,
                                          uint64_t seed,
                                          struct ErdInstance **out);

/**
 * Parse an instance document. Structural problems are reported as
 * `ERD_STATUS_CONFIG`.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ErdStatus erd_instance_from_json(const char *json, struct ErdInstance **out);

/**
 * Serialize to the instance document format.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_instance_to_json(const struct ErdInstance *inst, char **out);

/**
 * Full validation. Writes the number of violations; details go to the last
 * error message when there are any.
 *
 * # Safety
 * `inst` must be a live handle and `num_violations` a valid pointer.
 */
enum ErdStatus erd_instance_validate(const struct ErdInstance *inst, uint32_t *num_violations);

/**
 * Stable 16-hex-digit instance id.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_instance_id(const struct ErdInstance *inst, char **out);

/**
 * # Safety
 * `inst` must be NULL or a handle from this library, freed once.
 */
void erd_instance_free(struct ErdInstance *inst);

/**
 * New environment on a copy of the instance, reset with episode seed 0.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_new(const struct ErdInstance *inst, bool meta_actions, struct ErdEnv **out);

/**
 * Size of the flat action index space.
 *
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_num_actions(const struct ErdEnv *env, uint32_t *out);

/**
 * Name of action `index` (e.g. `move_forward`, `meta-exit`).
 *
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_action_name(const struct ErdEnv *env, uint32_t index, char **out);

/**
 * Start a new episode. `out` may be NULL.
 *
 * # Safety
 * `env` must be a live handle; `out` NULL or valid.
 */
enum ErdStatus erd_env_reset(struct ErdEnv *env, uint64_t episode_seed, struct ErdObservation *out);

/**
 * Apply action `index`. Stepping a finished episode is `ERD_STATUS_USAGE`.
 *
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_step(struct ErdEnv *env, uint32_t index, struct ErdStepResult *out);

/**
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_observe(const struct ErdEnv *env, struct ErdObservation *out);

/**
 * Full state (including joint angles) as JSON.
 *
 * # Safety
 * `env` must be a live handle and `out` a valid pointer.
 */
enum ErdStatus erd_env_state_json(const struct ErdEnv *env, char **out);

/**
 * # Safety
 * `env` must be NULL or a handle from this library, freed once.
 */
void erd_env_free(struct ErdEnv *env);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERD_H */
