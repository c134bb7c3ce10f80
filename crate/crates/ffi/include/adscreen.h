#ifndef ADSCREEN_H
#define ADSCREEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum AdsStatus {
  ADS_STATUS_OK = 0,
  ADS_STATUS_NULL_POINTER = 1,
  ADS_STATUS_INVALID_ARGUMENT = 2,
  ADS_STATUS_SHAPE = 3,
  ADS_STATUS_IO = 4,
  // Malformed WAV, weight container, CSV or JSON.
  ADS_STATUS_FORMAT = 5,
  ADS_STATUS_CONFIG = 6,
  // Input lacks what the computation needs (one class only, empty, non-finite).
  ADS_STATUS_DATA = 7,
  ADS_STATUS_UTF8 = 8,
  ADS_STATUS_PANIC = 9,
} AdsStatus;

typedef struct AdsAudioModel AdsAudioModel;

// `[frames, 64]` log-mel spectrogram.
typedef struct AdsSpectrogram AdsSpectrogram;

typedef struct AdsTextModel AdsTextModel;

// Confusion counts and metrics at a threshold. Undefined ratios are NaN.
typedef struct AdsMetrics {
  size_t n;
  size_t tp;
  size_t fp;
  size_t tn;
  size_t fn_;
  double accuracy;
  double f1;
  double specificity;
  double sensitivity;
  // NaN when only one class is present.
  double auc;
} AdsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if none. The
// pointer stays valid until the next failing call on the same thread.
const char *ads_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ads_version(void);

// `(p_a + w p_t) / (1 + w)`; `w` must be non-negative, infinity gives `p_t`.
//
// # Safety
// `out` must be a valid pointer to a double.
enum AdsStatus ads_late_fuse(double p_a, double p_t, double w, double *out);

// Metrics of `n` scores against labels (non-zero = AD) at `threshold`.
//
// # Safety
// `scores` and `labels` must point to `n` readable elements; `out` to one
// writable `AdsMetrics`.
enum AdsStatus ads_metrics(const double *scores,
                           const uint8_t *labels,
                           size_t n,
                           double threshold,
                           struct AdsMetrics *out);

// Log-mel spectrogram of mono samples; other rates are resampled to 16 kHz.
//
// # Safety
// `samples` must point to `n` readable floats; `out` to a writable handle slot.
enum AdsStatus ads_spectrogram_from_samples(const float *samples,
                                            size_t n,
                                            uint32_t sample_rate,
                                            struct AdsSpectrogram **out);

// Log-mel spectrogram of a PCM WAV file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a writable handle slot.
enum AdsStatus ads_spectrogram_from_wav(const char *path, struct AdsSpectrogram **out);

// Number of frames (rows); 0 for NULL.
//
// # Safety
// `spec` must be NULL or a live handle.
size_t ads_spectrogram_frames(const struct AdsSpectrogram *spec);

// Mel bands per frame (always 64).
size_t ads_spectrogram_bands(void);

// Row-major `frames * 64` values owned by the handle; NULL for NULL.
//
// # Safety
// `spec` must be NULL or a live handle.
const float *ads_spectrogram_data(const struct AdsSpectrogram *spec);

// # Safety
// `spec` must be NULL or a handle not yet freed.
void ads_spectrogram_free(struct AdsSpectrogram *spec);

// Loads `audio.weights` and `audio.json` from a model directory.
//
// # Safety
// `model_dir` must be a NUL-terminated string; `out` a writable handle slot.
enum AdsStatus ads_audio_model_load(const char *model_dir, struct AdsAudioModel **out);

// Subject-level `p_a`: mean patch probability over the non-overlapping
// `patch_frames`-frame patches of `spec` (96 short, 496 long).
//
// # Safety
// `model` and `spec` must be live handles; `out` a writable double.
enum AdsStatus ads_audio_model_predict(const struct AdsAudioModel *model,
                                       const struct AdsSpectrogram *spec,
                                       size_t patch_frames,
                                       double *out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void ads_audio_model_free(struct AdsAudioModel *model);

// Loads the text model saved under `model_dir/text`. Models trained with
// precomputed embeddings need `embeddings_path`; pass NULL otherwise.
//
// # Safety
// String arguments must be NULL (where allowed) or NUL-terminated; `out` a
// writable handle slot.
enum AdsStatus ads_text_model_load(const char *model_dir,
                                   const char *embeddings_path,
                                   struct AdsTextModel **out);

// Subject-level `p_t` of a raw transcript: mean segment probability.
//
// # Safety
// `model` must be a live handle, `transcript` NUL-terminated, `out` writable.
enum AdsStatus ads_text_model_predict(const struct AdsTextModel *model,
                                      const char *transcript,
                                      double *out);

// # Safety
// `model` must be NULL or a handle not yet freed.
void ads_text_model_free(struct AdsTextModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* ADSCREEN_H */
