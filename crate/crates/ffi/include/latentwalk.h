#ifndef LATENTWALK_H
#define LATENTWALK_H

/* Generated by cbindgen. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Width of every rendered image in pixels.
#define LW_IMAGE_WIDTH 64

// Height of every rendered image in pixels.
#define LW_IMAGE_HEIGHT 64

// Bytes in one 8-bit grayscale image.
#define LW_IMAGE_BYTES 4096

typedef enum LwStatus {
  LW_STATUS_OK = 0,
  LW_STATUS_NULL_POINTER = 1,
  LW_STATUS_INVALID_ARGUMENT = 2,
  LW_STATUS_NOT_FOUND = 3,
  LW_STATUS_MALFORMED = 4,
  LW_STATUS_IO = 5,
  LW_STATUS_BUFFER_TOO_SMALL = 6,
  LW_STATUS_NUMERIC = 7,
  LW_STATUS_PANIC = 8,
} LwStatus;

// Generator plus a conditioned boundary set loaded from an artifact tree.
typedef struct LwEditor LwEditor;

// Generator constants.
typedef struct LwGenerator LwGenerator;

// Byte buffer allocated by the library. Release with [`lw_buffer_free`].
typedef struct LwBuffer {
  uint8_t *data;
  size_t len;
} LwBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *lw_last_error(void);

// Library version as a static NUL-terminated string.
const char *lw_version(void);

// Writes the truncated base latent for `seed` into `out[0..dim]`.
//
// # Safety
// `out` must point to `dim` writable doubles.
enum LwStatus lw_sample_latent(uint64_t seed, double psi, size_t dim, double *out);

// Builds generator constants from a seed.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum LwStatus lw_generator_new(uint64_t seed, size_t dim, struct LwGenerator **out);

// Loads generator constants from a `generator.json` file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid handle slot.
enum LwStatus lw_generator_open(const char *path, struct LwGenerator **out);

// # Safety
// `g` must be null or a handle from `lw_generator_new`/`lw_generator_open`
// that has not been freed.
void lw_generator_free(struct LwGenerator *g);

// Latent dimensionality of a generator, or 0 for null.
//
// # Safety
// `g` must be null or a live handle.
size_t lw_generator_dim(const struct LwGenerator *g);

// Renders `z` as row-major 8-bit grayscale into `out`
// (`LW_IMAGE_BYTES` bytes).
//
// # Safety
// `g` must be a live handle, `z` must point to `dim` doubles and `out` to
// `out_len` writable bytes.
enum LwStatus lw_generator_render(const struct LwGenerator *g,
                                  const double *z,
                                  size_t dim,
                                  uint8_t *out,
                                  size_t out_len);

// Opens the conditioned boundaries of `source` (for example
// `"hidden-true"`) from an artifact directory.
//
// # Safety
// `artifacts` and `source` must be NUL-terminated strings; `out` a valid
// handle slot.
enum LwStatus lw_editor_open(const char *artifacts, const char *source, struct LwEditor **out);

// # Safety
// `e` must be null or a live handle from `lw_editor_open`.
void lw_editor_free(struct LwEditor *e);

// Latent dimensionality of an editor, or 0 for null.
//
// # Safety
// `e` must be null or a live handle.
size_t lw_editor_dim(const struct LwEditor *e);

// Edited scene for a seed as raw grayscale bytes. Alphas are clamped to
// [-3, 3] and psi to [0, 1], exactly as the HTTP service does.
//
// # Safety
// `e` must be a live handle and `out` must point to `out_len` writable
// bytes.
enum LwStatus lw_editor_synthesize(const struct LwEditor *e,
                                   uint64_t seed,
                                   double psi,
                                   double alpha_income,
                                   double alpha_education,
                                   double alpha_health,
                                   uint8_t *out,
                                   size_t out_len);

// Same as [`lw_editor_synthesize`] but PNG-encoded into a library-owned
// buffer.
//
// # Safety
// `e` must be a live handle and `out` a valid buffer slot.
enum LwStatus lw_editor_synthesize_png(const struct LwEditor *e,
                                       uint64_t seed,
                                       double psi,
                                       double alpha_income,
                                       double alpha_education,
                                       double alpha_health,
                                       struct LwBuffer *out);

// Decision values of `z` for income, education and health, in that order.
// Dimensions without a boundary are reported as NaN.
//
// # Safety
// `e` must be a live handle, `z` must point to `dim` doubles and `out` to
// three writable doubles.
enum LwStatus lw_editor_decision(const struct LwEditor *e,
                                 const double *z,
                                 size_t dim,
                                 double *out);

// Releases a buffer returned by the library.
//
// # Safety
// `buf` must be null or point to a buffer filled by this library that has
// not been freed.
void lw_buffer_free(struct LwBuffer *buf);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATENTWALK_H */
