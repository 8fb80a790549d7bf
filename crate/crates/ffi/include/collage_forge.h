#ifndef COLLAGE_FORGE_H
#define COLLAGE_FORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_INVALID_ARGUMENT = 1,
  CF_STATUS_IO = 2,
  CF_STATUS_PARSE = 3,
  CF_STATUS_BACKEND = 4,
  CF_STATUS_CURATION = 5,
  CF_STATUS_SCENE = 6,
  CF_STATUS_EXPORT = 7,
  CF_STATUS_INTERNAL = 8,
} CfStatus;

typedef enum CfMode {
  CF_MODE_FULL = 0,
  CF_MODE_KEYWORD_ONLY = 1,
} CfMode;

typedef enum CfPresent {
  CF_PRESENT_SIZED = 0,
  CF_PRESENT_UNIFORM = 1,
} CfPresent;

/**
 * A connected model backend.
 */
typedef struct CfEngine CfEngine;

/**
 * A prepared element library and the directory it lives in.
 */
typedef struct CfLibrary CfLibrary;

/**
 * A curated session and the directory it was saved to.
 */
typedef struct CfSession CfSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates an engine over the deterministic mock backend.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum CfStatus cf_engine_new_mock(uint64_t seed, struct CfEngine **out);

/**
 * Creates an engine talking to a model backend at `base_url`.
 *
 * # Safety
 * `base_url` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_engine_new_remote(const char *base_url, double timeout_s, struct CfEngine **out);

/**
 * # Safety
 * `engine` must come from a `cf_engine_new_*` call or be NULL.
 */
void cf_engine_free(struct CfEngine *engine);

/**
 * Extracts a library from the photos in `collection_dir` into `out_dir`.
 * A `confidence` outside [0, 1] selects the default threshold.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum CfStatus cf_prepare(const struct CfEngine *engine,
                         const char *collection_dir,
                         const char *out_dir,
                         double confidence,
                         struct CfLibrary **out);

/**
 * # Safety
 * `dir` must be NUL-terminated and `out` valid.
 */
enum CfStatus cf_library_open(const char *dir, struct CfLibrary **out);

/**
 * Number of elements; 0 for a NULL handle.
 *
 * # Safety
 * `library` must be a live handle or NULL.
 */
size_t cf_library_element_count(const struct CfLibrary *library);

/**
 * Library id as a new string, or NULL for a NULL handle.
 *
 * # Safety
 * `library` must be a live handle or NULL.
 */
char *cf_library_id(const struct CfLibrary *library);

/**
 * # Safety
 * `library` must come from this library or be NULL.
 */
void cf_library_free(struct CfLibrary *library);

/**
 * Curates `story` over `library` and saves the session into
 * `session_dir`. `weights` is NULL for the defaults or points at three
 * values: diversity, consistency, resolution.
 *
 * # Safety
 * Pointers must be valid; `weights` NULL or readable for three doubles.
 */
enum CfStatus cf_curate(const struct CfEngine *engine,
                        const struct CfLibrary *library,
                        const char *story,
                        enum CfMode mode,
                        const double *weights,
                        const char *session_dir,
                        struct CfSession **out);

/**
 * # Safety
 * `dir` must be NUL-terminated and `out` valid.
 */
enum CfStatus cf_session_open(const char *dir, struct CfSession **out);

/**
 * Session id as a new string, or NULL for a NULL handle.
 *
 * # Safety
 * `session` must be a live handle or NULL.
 */
char *cf_session_id(const struct CfSession *session);

/**
 * Lays the session out and returns the presentation document as JSON, in
 * the same bytes the CLI writes to `presentation.json`. A non-positive
 * `canvas_width` selects the default.
 *
 * # Safety
 * `session` must be live and `out_json` valid.
 */
enum CfStatus cf_session_layout_json(const struct CfSession *session,
                                     enum CfPresent present,
                                     double canvas_width,
                                     uint64_t seed,
                                     char **out_json);

/**
 * Exports the session into `out_dir`. `scene_path` is NULL to use the
 * session's saved scene or the default presentation scene.
 *
 * # Safety
 * `session` must be live; strings NUL-terminated or `scene_path` NULL.
 */
enum CfStatus cf_session_export(const struct CfSession *session,
                                const char *scene_path,
                                const char *out_dir);

/**
 * # Safety
 * `session` must come from this library or be NULL.
 */
void cf_session_free(struct CfSession *session);

/**
 * Message of the last failed call on this thread as a new string, or NULL.
 */
char *cf_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void cf_string_free(char *s);

/**
 * Library version; static, do not free.
 */
const char *cf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COLLAGE_FORGE_H */
