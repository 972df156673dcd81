#ifndef MADROID_H
#define MADROID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MadroidStatus {
  MADROID_STATUS_OK = 0,
  MADROID_STATUS_NULL_ARGUMENT = 1,
  MADROID_STATUS_INVALID_UTF8 = 2,
  MADROID_STATUS_PARSE_ERROR = 3,
  MADROID_STATUS_SCENARIO_INVALID = 4,
  MADROID_STATUS_SIM_ERROR = 5,
  MADROID_STATUS_CONFIG_ERROR = 6,
  MADROID_STATUS_RUN_ERROR = 7,
  MADROID_STATUS_PANIC = 8,
} MadroidStatus;

/**
 * A set of simulated devices for one scenario. Opaque.
 */
typedef struct MadroidFarm MadroidFarm;

/**
 * A loaded scenario. Opaque.
 */
typedef struct MadroidScenario MadroidScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *madroid_last_error(void);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed already.
 */
void madroid_string_free(char *s);

/**
 * Extracts the first action from `reply` and writes its canonical form.
 *
 * # Safety
 * `reply` must be a valid C string; `out` a valid pointer.
 */
enum MadroidStatus madroid_parse_action(const char *reply, char **out);

/**
 * Parses a raw hierarchy document, simplifies it and writes the prompt form.
 *
 * # Safety
 * `raw` must be a valid C string; `out` a valid pointer.
 */
enum MadroidStatus madroid_simplify_screen(const char *raw, char **out);

/**
 * Action similarity of two traces given as arrays of action strings; each
 * entry is compared in canonical form.
 *
 * # Safety
 * Each array must hold `len` valid C strings (it may be NULL when `len` is 0).
 */
enum MadroidStatus madroid_similarity(const char *const *pred,
                                      size_t pred_len,
                                      const char *const *truth,
                                      size_t truth_len,
                                      double *out);

/**
 * Loads and validates a scenario file.
 *
 * # Safety
 * `path` must be a valid C string; `out` a valid pointer.
 */
enum MadroidStatus madroid_scenario_load(const char *path, struct MadroidScenario **out);

/**
 * # Safety
 * `scenario` must come from [`madroid_scenario_load`] or be NULL.
 */
void madroid_scenario_free(struct MadroidScenario *scenario);

/**
 * Starts one simulated device per user of `scenario`. The farm keeps its
 * own reference; the scenario may be freed afterwards.
 *
 * # Safety
 * `scenario` must be a live handle; `out` a valid pointer.
 */
enum MadroidStatus madroid_farm_spawn(const struct MadroidScenario *scenario,
                                      uint64_t seed,
                                      struct MadroidFarm **out);

/**
 * # Safety
 * `farm` must come from [`madroid_farm_spawn`] or be NULL.
 */
void madroid_farm_free(struct MadroidFarm *farm);

/**
 * Performs a device action (`[tap]`, `[input]`, `[back]`) for `user`.
 * `changed` (optional) receives 1 when the screen changed.
 *
 * # Safety
 * `farm` must be a live handle; strings valid; `changed` NULL or valid.
 */
enum MadroidStatus madroid_farm_execute(struct MadroidFarm *farm,
                                        const char *user,
                                        const char *action,
                                        int *changed);

/**
 * Writes the simplified prompt form of `user`'s current screen.
 *
 * # Safety
 * `farm` must be a live handle; `user` valid; `out` a valid pointer.
 */
enum MadroidStatus madroid_farm_screen(struct MadroidFarm *farm, const char *user, char **out);

/**
 * Puts every device back in its initial state.
 *
 * # Safety
 * `farm` must be a live handle.
 */
enum MadroidStatus madroid_farm_reset(struct MadroidFarm *farm);

/**
 * `out` receives 1 when the scenario's success condition holds.
 *
 * # Safety
 * `farm` must be a live handle; `out` a valid pointer.
 */
enum MadroidStatus madroid_farm_success(struct MadroidFarm *farm, int *out);

/**
 * Runs one task end to end and writes the result as JSON.
 *
 * `task` may be NULL to use the scenario's own description. `config_json`
 * may be NULL or an object with optional `backend` and `run` members using
 * the same keys as the configuration file; the default is the oracle backend.
 *
 * # Safety
 * `scenario` must be a live handle; strings NULL or valid; `out` valid.
 */
enum MadroidStatus madroid_run(const struct MadroidScenario *scenario,
                               const char *task,
                               const char *config_json,
                               char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MADROID_H */
