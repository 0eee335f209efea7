#ifndef LLGM_H
#define LLGM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum LlgmStatus {
  LLGM_STATUS_OK = 0,
  LLGM_STATUS_NULL_POINTER = 1,
  LLGM_STATUS_INVALID_ARGUMENT = 2,
  LLGM_STATUS_IO = 3,
  LLGM_STATUS_FORMAT = 4,
  LLGM_STATUS_SHAPE_MISMATCH = 5,
  LLGM_STATUS_INCOMPATIBLE = 6,
  LLGM_STATUS_INTERNAL = 7,
} LlgmStatus;

// A curve dictionary (the contents of a `.llgd` file).
typedef struct LlgmDictionary LlgmDictionary;

// An image with channels interleaved, values nominally in [0, 1].
typedef struct LlgmImage LlgmImage;

// A fitted Gaussian field (the contents of a `.llgm` file).
typedef struct LlgmModel LlgmModel;

// Stage-one fitting parameters.
typedef struct LlgmFitParams {
  size_t num_primitives;
  size_t scales;
  // Optimizer steps per pyramid level.
  size_t iterations;
  double lr;
  uint64_t seed;
} LlgmFitParams;

// Stage-two enhancement parameters.
typedef struct LlgmEnhanceParams {
  size_t iterations;
  double lr;
  double e_target;
} LlgmEnhanceParams;

// Dictionary construction parameters.
typedef struct LlgmDictParams {
  // Learned atoms, not counting the identity atom.
  size_t k;
  // Curve order.
  size_t p;
  uint64_t seed;
} LlgmDictParams;

// Quality metrics. Entries that were not computed are NaN.
typedef struct LlgmMetrics {
  double psnr;
  double ssim;
  double loe;
  double discrete_entropy;
  double eme;
} LlgmMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null if none.
// The pointer stays valid until the next failing call on this thread.
const char *llgm_last_error(void);

// Library version as a static NUL-terminated string.
const char *llgm_version(void);

// Desk-scale fitting defaults.
struct LlgmFitParams llgm_fit_params_default(void);

// Desk-scale enhancement defaults.
struct LlgmEnhanceParams llgm_enhance_params_default(void);

// Dictionary defaults.
struct LlgmDictParams llgm_dict_params_default(void);

// Creates an image by copying `height * width * channels` interleaved values.
//
// # Safety
// `data` must point to that many readable doubles; `out` must be writable.
enum LlgmStatus llgm_image_new(size_t height,
                               size_t width,
                               size_t channels,
                               const double *data,
                               struct LlgmImage **out);

// Reads a PNG or PPM file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LlgmStatus llgm_image_load(const char *path, struct LlgmImage **out);

// Writes an image; the format follows the file extension.
//
// # Safety
// `img` must be a live handle and `path` a NUL-terminated string.
enum LlgmStatus llgm_image_save(const struct LlgmImage *img, const char *path);

// Reports the image shape. Any output pointer may be null.
//
// # Safety
// `img` must be a live handle.
enum LlgmStatus llgm_image_shape(const struct LlgmImage *img,
                                 size_t *height,
                                 size_t *width,
                                 size_t *channels);

// Copies the interleaved pixel values into `dst`, which holds `len` doubles.
//
// # Safety
// `img` must be a live handle and `dst` writable for `len` doubles.
enum LlgmStatus llgm_image_copy_data(const struct LlgmImage *img, double *dst, size_t len);

// # Safety
// `img` must be null or a handle not yet freed.
void llgm_image_free(struct LlgmImage *img);

// Fits a multi-scale Gaussian field to `img`. `params` may be null for defaults.
// `psnr` (nullable) receives the reconstruction PSNR.
//
// # Safety
// `img` must be a live handle; `out` must be writable.
enum LlgmStatus llgm_fit(const struct LlgmImage *img,
                         const struct LlgmFitParams *params,
                         struct LlgmModel **out,
                         double *psnr);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LlgmStatus llgm_model_load(const char *path, struct LlgmModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum LlgmStatus llgm_model_save(const struct LlgmModel *model, const char *path);

// Total primitive count over all levels; 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t llgm_model_primitive_count(const struct LlgmModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void llgm_model_free(struct LlgmModel *model);

// Builds a dictionary from `count` image paths. Unreadable images are skipped.
//
// # Safety
// `paths` must hold `count` NUL-terminated strings; `out` must be writable.
enum LlgmStatus llgm_dictionary_build(const char *const *paths,
                                      size_t count,
                                      const struct LlgmDictParams *params,
                                      struct LlgmDictionary **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LlgmStatus llgm_dictionary_load(const char *path, struct LlgmDictionary **out);

// # Safety
// `d` must be a live handle and `path` a NUL-terminated string.
enum LlgmStatus llgm_dictionary_save(const struct LlgmDictionary *d, const char *path);

// Reports the learned atom count K (excluding the identity atom) and the
// curve order P. Either output may be null.
//
// # Safety
// `d` must be a live handle.
enum LlgmStatus llgm_dictionary_shape(const struct LlgmDictionary *d, size_t *k, size_t *p);

// # Safety
// `d` must be null or a handle not yet freed.
void llgm_dictionary_free(struct LlgmDictionary *d);

// Enhances `img` with the frozen `model` and dictionary `d`. `params` may be
// null for defaults. The optimized logits are not written back to `model`.
//
// # Safety
// All handles must be live; `out` must be writable.
enum LlgmStatus llgm_enhance(const struct LlgmImage *img,
                             const struct LlgmModel *model,
                             const struct LlgmDictionary *d,
                             const struct LlgmEnhanceParams *params,
                             struct LlgmImage **out);

// Computes quality metrics of `pred`. With a null `reference` only the
// no-reference entries are filled; the others are NaN.
//
// # Safety
// `pred` must be a live handle, `reference` null or live, `out` writable.
enum LlgmStatus llgm_metrics(const struct LlgmImage *pred,
                             const struct LlgmImage *reference,
                             struct LlgmMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LLGM_H */
