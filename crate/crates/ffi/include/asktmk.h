#ifndef ASKTMK_H
#define ASKTMK_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AsktmkStatus {
  ASKTMK_STATUS_OK = 0,
  ASKTMK_STATUS_NULL_ARGUMENT = 1,
  ASKTMK_STATUS_INVALID_UTF8 = 2,
  ASKTMK_STATUS_PARSE_ERROR = 3,
  ASKTMK_STATUS_INVALID_MODEL = 4,
  ASKTMK_STATUS_INVALID_CONFIG = 5,
  ASKTMK_STATUS_PIPELINE_ERROR = 6,
  ASKTMK_STATUS_TRACE_ERROR = 7,
  ASKTMK_STATUS_PANIC = 8,
} AsktmkStatus;

/**
 * Opaque engine handle.
 */
typedef struct AsktmkEngine AsktmkEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *asktmk_last_error(void);

/**
 * Library version, statically allocated.
 */
const char *asktmk_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer returned by this library and not yet freed.
 */
void asktmk_string_free(char *s);

/**
 * Validates a model given as JSON. `*out_report` receives `ok` or one line
 * per issue (`CODE path: message`). Returns `ASKTMK_STATUS_INVALID_MODEL`
 * when issues were found; the report is still written.
 *
 * # Safety
 * `model_json` must be a valid C string; `out_report` must be writable.
 */
enum AsktmkStatus asktmk_validate(const char *model_json, char **out_report);

/**
 * Builds an engine from a JSON model and an optional TOML configuration
 * (null for defaults: mock provider, hashing embedder, k = 4).
 *
 * # Safety
 * `model_json` must be a valid C string; `config_toml` null or a valid C
 * string; `out_engine` writable.
 */
enum AsktmkStatus asktmk_engine_new(const char *model_json,
                                    const char *config_toml,
                                    struct AsktmkEngine **out_engine);

/**
 * Releases an engine. Null is ignored.
 *
 * # Safety
 * `engine` must be null or a handle from [`asktmk_engine_new`] not yet freed.
 */
void asktmk_engine_free(struct AsktmkEngine *engine);

/**
 * Answers one question in a fresh session. `k` of 0 means the configured
 * default. `*out_json` receives the full result as JSON.
 *
 * # Safety
 * `engine` must be a live handle; `question` a valid C string; `out_json`
 * writable.
 */
enum AsktmkStatus asktmk_ask(const struct AsktmkEngine *engine,
                             const char *question,
                             uint32_t k,
                             char **out_json);

/**
 * Derives a trace with default selectors and writes its text outline.
 * `step_bound` of 0 means the default bound.
 *
 * # Safety
 * `engine` must be a live handle; `task_id` a valid C string; `out_outline`
 * writable.
 */
enum AsktmkStatus asktmk_trace(const struct AsktmkEngine *engine,
                               const char *task_id,
                               uint32_t step_bound,
                               char **out_outline);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ASKTMK_H */
