#ifndef TICKET_DISPATCH_H
#define TICKET_DISPATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum TdStatus {
  TD_STATUS_OK = 0,
  TD_STATUS_NULL_ARGUMENT = 1,
  TD_STATUS_INVALID_UTF8 = 2,
  TD_STATUS_IO = 3,
  TD_STATUS_BAD_BUNDLE = 4,
  TD_STATUS_BAD_RULES = 5,
  TD_STATUS_BAD_REQUEST = 6,
  TD_STATUS_INTERNAL = 7,
} TdStatus;

/**
 * Loaded model bundle plus the active rule set. Opaque to C.
 */
typedef struct TdEngine TdEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a model bundle. `rules_json` may be NULL for no rules.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be writable.
 * The handle written to `out` must be released with [`td_engine_free`].
 */
enum TdStatus td_engine_load(const char *bundle_path,
                             const char *rules_json,
                             struct TdEngine **out);

/**
 * Releases an engine. NULL is ignored.
 *
 * # Safety
 * `engine` must come from [`td_engine_load`] and not have been freed.
 */
void td_engine_free(struct TdEngine *engine);

/**
 * Replaces the engine's rules with a JSON rule document.
 *
 * # Safety
 * `engine` must be a live handle not used concurrently; `rules_json` must be
 * NUL-terminated.
 */
enum TdStatus td_engine_set_rules(struct TdEngine *engine, const char *rules_json);

/**
 * Routes one ticket given as JSON `{id, subject, body, metadata}` and writes
 * the decision JSON to `out`. Free it with [`td_string_free`].
 *
 * # Safety
 * `engine` must be a live handle; `ticket_json` NUL-terminated; `out`
 * writable.
 */
enum TdStatus td_dispatch(const struct TdEngine *engine, const char *ticket_json, char **out);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from [`td_dispatch`] and not have been freed.
 */
void td_string_free(char *s);

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *td_last_error(void);

/**
 * Library version as a static string.
 */
const char *td_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TICKET_DISPATCH_H */
