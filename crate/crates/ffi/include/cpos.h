#ifndef CPOS_H
#define CPOS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CposStatus {
  CPOS_STATUS_OK = 0,
  CPOS_STATUS_NULL_POINTER = 1,
  CPOS_STATUS_INVALID_UTF8 = 2,
  CPOS_STATUS_INVALID_SCENARIO = 3,
  CPOS_STATUS_PARSE_ERROR = 4,
  CPOS_STATUS_IO = 5,
  CPOS_STATUS_PANIC = 6,
} CposStatus;

/**
 * The outcome of one run.
 */
typedef struct CposRun CposRun;

/**
 * A parsed, validated scenario.
 */
typedef struct CposScenario CposScenario;

/**
 * Outcome of verifying an exported log.
 */
typedef struct CposLogReport {
  bool ok;
  /**
   * Index of the first bad entry, or -1 when `ok`.
   */
  int64_t first_bad_index;
} CposLogReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t cpos_last_error(char *buf, size_t len);

/**
 * Parses and validates a scenario document.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CposStatus cpos_scenario_from_json(const char *json, struct CposScenario **out);

/**
 * A default scenario: `nodes` nodes, `super_peers` of them super peers,
 * running for `duration_ms` of virtual time.
 */
struct CposScenario *cpos_scenario_basic(uint64_t seed,
                                         uint32_t nodes,
                                         uint32_t super_peers,
                                         int64_t duration_ms);

/**
 * # Safety
 * `sc` must be a live scenario handle.
 */
enum CposStatus cpos_scenario_set_seed(struct CposScenario *sc, uint64_t seed);

/**
 * # Safety
 * `sc` must be null or a handle from this library, not yet freed.
 */
void cpos_scenario_free(struct CposScenario *sc);

/**
 * Runs a scenario to completion. With `keep_trace` the full trace is kept
 * so that [`cpos_run_write_outputs`] can write `trace.jsonl`.
 *
 * # Safety
 * `sc` must be a live scenario handle; `out` must be writable.
 */
enum CposStatus cpos_run(const struct CposScenario *sc, bool keep_trace, struct CposRun **out);

/**
 * Height of the longest honest chain at the end of the run.
 *
 * # Safety
 * `run` must be a live run handle.
 */
uint64_t cpos_run_final_height(const struct CposRun *run);

/**
 * Number of invariant violations the run detected.
 *
 * # Safety
 * `run` must be a live run handle.
 */
size_t cpos_run_violation_count(const struct CposRun *run);

/**
 * Copies the 32-byte trace digest into `out`.
 *
 * # Safety
 * `run` must be a live run handle; `out` must point to 32 writable bytes.
 */
enum CposStatus cpos_run_trace_digest(const struct CposRun *run, uint8_t *out);

/**
 * Writes the run's output directory.
 *
 * # Safety
 * `run` must be a live run handle; `dir` a NUL-terminated path.
 */
enum CposStatus cpos_run_write_outputs(const struct CposRun *run, const char *dir);

/**
 * # Safety
 * `run` must be null or a handle from this library, not yet freed.
 */
void cpos_run_free(struct CposRun *run);

/**
 * Verifies an exported log given as JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum CposStatus cpos_verify_log_json(const char *json, struct CposLogReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPOS_H */
