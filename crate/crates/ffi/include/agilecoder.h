#ifndef AGILECODER_H
#define AGILECODER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_ARGUMENT = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_IO = 3,
  AC_STATUS_PARSE = 4,
  AC_STATUS_INVALID_PATH = 5,
  AC_STATUS_UNKNOWN_NODE = 6,
  AC_STATUS_PANIC = 99,
} AcStatus;

/**
 * Dependency graph of a workspace directory, with the snapshot it was
 * built from. Opaque to C.
 */
typedef struct AcGraph AcGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds the graph of every source file under `dir`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AcStatus ac_graph_build_from_dir(const char *dir, struct AcGraph **out);

/**
 * Releases a graph. Null is ignored.
 *
 * # Safety
 * `g` must come from [`ac_graph_build_from_dir`] and not be used afterwards.
 */
void ac_graph_free(struct AcGraph *g);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void ac_string_free(char *s);

/**
 * # Safety
 * `g` must be a live graph and `out` a valid pointer.
 */
enum AcStatus ac_graph_node_count(const struct AcGraph *g, size_t *out);

/**
 * # Safety
 * `g` must be a live graph and `out` a valid pointer.
 */
enum AcStatus ac_graph_edge_count(const struct AcGraph *g, size_t *out);

/**
 * Text form of the graph: one node per line, then one
 * `dependent -> dependency` line per edge.
 *
 * # Safety
 * `g` must be a live graph and `out` a valid pointer.
 */
enum AcStatus ac_graph_export(const struct AcGraph *g, char **out);

/**
 * Files to test after `changed` (an array of `len` workspace-relative
 * paths) changed, one per line, sorted.
 *
 * # Safety
 * `g` must be a live graph, `changed` an array of `len` NUL-terminated
 * strings (may be null when `len` is 0) and `out` a valid pointer.
 */
enum AcStatus ac_graph_test_targets(const struct AcGraph *g,
                                    const char *const *changed,
                                    size_t len,
                                    char **out);

/**
 * Like [`ac_graph_test_targets`] but in testing order, dependencies first.
 * Each line is `<target> <test script>`.
 *
 * # Safety
 * Same as [`ac_graph_test_targets`].
 */
enum AcStatus ac_graph_testing_order(const struct AcGraph *g,
                                     const char *const *changed,
                                     size_t len,
                                     char **out);

/**
 * Parses Python interpreter stderr into JSON:
 * `{"error_type":..,"error_message":..,"frames":[{"file":..,"line":..,"symbol":..}]}`.
 *
 * # Safety
 * `stderr` must be a NUL-terminated string and `out` a valid pointer.
 */
enum AcStatus ac_parse_traceback(const char *stderr, char **out);

/**
 * Message for the last failed call on this thread, or "" after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *ac_last_error_message(void);

/**
 * Library version, statically allocated.
 */
const char *ac_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AGILECODER_H */
