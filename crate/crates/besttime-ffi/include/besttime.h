#ifndef BESTTIME_H
#define BESTTIME_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every FFI call.
 */
typedef enum {
  BESTTIME_STATUS_OK = 0,
  BESTTIME_STATUS_NULL_POINTER = 1,
  BESTTIME_STATUS_INVALID_UTF8 = 2,
  BESTTIME_STATUS_INVALID_ARGUMENT = 3,
  BESTTIME_STATUS_EMPTY_CANDIDATES = 4,
  BESTTIME_STATUS_DEGENERATE_ASSEMBLY = 5,
  BESTTIME_STATUS_NOT_FOUND = 6,
  BESTTIME_STATUS_CONFIGURATION = 7,
  BESTTIME_STATUS_UNDEFINED_RATIO = 8,
  BESTTIME_STATUS_PUBLISH_REJECTED = 9,
  BESTTIME_STATUS_IO = 10,
  BESTTIME_STATUS_PARSE = 11,
  BESTTIME_STATUS_INTERNAL = 12,
} BesttimeStatus;

/**
 * Opaque engine handle (deployment config + open store).
 */
typedef struct BesttimeEngine BesttimeEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Open an engine from a deployment config (TOML path) and a store
 * directory. `store_dir` may be null to fall back to the `BESTTIME_STORE`
 * environment variable or the config's `store.path`.
 *
 * On success writes the new handle to `out_engine`; release it with
 * [`besttime_engine_free`].
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string; `store_dir` may be
 * null or a valid NUL-terminated string; `out_engine` must be a valid
 * pointer to writable memory.
 */
BesttimeStatus besttime_engine_new(const char *config_path,
                                   const char *store_dir,
                                   BesttimeEngine **out_engine);

/**
 * Release an engine handle. Null is a no-op.
 *
 * # Safety
 * `engine` must be null or a pointer returned by [`besttime_engine_new`]
 * that has not been freed yet.
 */
void besttime_engine_free(BesttimeEngine *engine);

/**
 * Schedule a batch of JSON-line requests (one request object per line).
 *
 * The result written to `out_plans` is JSON lines too: an execution plan or
 * a per-request error record per input line, in order. Free it with
 * [`besttime_string_free`].
 *
 * # Safety
 * `engine` must be a live handle from [`besttime_engine_new`];
 * `requests_jsonl` must be a valid NUL-terminated string; `out_plans` must
 * be a valid pointer to writable memory.
 */
BesttimeStatus besttime_engine_schedule_json(const BesttimeEngine *engine,
                                             const char *requests_jsonl,
                                             uint64_t seed,
                                             char **out_plans);

/**
 * Publish a CSV of activity maps (`user,metric,slot_index,score`) into one
 * day partition (0 = Sunday .. 6 = Saturday) of the engine's store. Writes
 * the new store version to `out_version` when non-null.
 *
 * # Safety
 * `engine` must be a live handle; `maps_csv` must be a valid NUL-terminated
 * string; `out_version` may be null or point to writable memory.
 */
BesttimeStatus besttime_engine_publish_csv(const BesttimeEngine *engine,
                                           uint32_t day,
                                           const char *maps_csv,
                                           uint64_t *out_version);

/**
 * Free a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a pointer obtained from a `besttime_*` out-parameter
 * that has not been freed yet.
 */
void besttime_string_free(char *s);

/**
 * The last error message recorded on this thread, or null if none. The
 * caller owns the returned string (free with [`besttime_string_free`]).
 */
char *besttime_last_error_message(void);

/**
 * Library version as a static string; do not free.
 */
const char *besttime_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BESTTIME_H */
