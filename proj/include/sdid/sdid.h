#ifndef SDID_SDID_H
#define SDID_SDID_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SDID_API __declspec(dllexport)
#else
#define SDID_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sdid_status {
  SDID_OK = 0,
  SDID_ERR_ARGUMENT = 1,  /* null handle or invalid argument */
  SDID_ERR_CONFIG = 2,    /* unknown key, bad value, inconsistent geometry */
  SDID_ERR_DIMENSION = 3, /* shape contract violated */
  SDID_ERR_FORMAT = 4,    /* bad magic, version or truncation on disk */
  SDID_ERR_IO = 5,        /* unreadable or unwritable path */
  SDID_ERR_NUMERICAL = 6, /* NaN or Inf where a finite value was required */
  SDID_ERR_GRAPH = 7,     /* autodiff misuse */
  SDID_ERR_INTERNAL = 8
} sdid_status;

typedef struct sdid_config sdid_config;
typedef struct sdid_trainer sdid_trainer;
typedef struct sdid_model sdid_model;
typedef struct sdid_image sdid_image;

/* Message of the last failed call on this thread, "" if none. */
SDID_API const char* sdid_last_error(void);
SDID_API const char* sdid_status_name(sdid_status status);

/* ---- config ---- */

/* preset: "desk" or "paper". */
SDID_API sdid_status sdid_config_new(const char* preset, sdid_config** out);
SDID_API sdid_status sdid_config_load(const char* path, sdid_config** out);
SDID_API sdid_status sdid_config_set(sdid_config* cfg, const char* key, const char* value);
/* Copies the value of `key` into buf (NUL-terminated); *needed gets the full length + 1. */
SDID_API sdid_status sdid_config_get(const sdid_config* cfg, const char* key, char* buf, size_t cap, size_t* needed);
SDID_API sdid_status sdid_config_render(const sdid_config* cfg, char* buf, size_t cap, size_t* needed);
SDID_API void sdid_config_free(sdid_config* cfg);

/* ---- data ---- */

/* Writes train.sdat and val.sdat into dir. */
SDID_API sdid_status sdid_make_data(const sdid_config* cfg, const char* dir, size_t* train_count, size_t* val_count);

/* ---- training ---- */

typedef struct sdid_step_metrics {
  size_t step;
  double lr_main, lr_gen;
  double loss_full, loss_rec, loss_sty;
  double grad_norm;
  double psnr_val; /* NaN when not evaluated */
} sdid_step_metrics;

typedef void (*sdid_log_fn)(void* user, const sdid_step_metrics* metrics);

/* Reads train.sdat and val.sdat from data_dir; writes checkpoints and metrics.csv to out_dir. */
SDID_API sdid_status sdid_trainer_new(const sdid_config* cfg, const char* data_dir, const char* out_dir,
                                      sdid_trainer** out);
SDID_API sdid_status sdid_trainer_resume(const char* checkpoint, const char* data_dir, const char* out_dir,
                                         sdid_trainer** out);
SDID_API sdid_status sdid_trainer_set_log(sdid_trainer* tr, sdid_log_fn fn, void* user);
/* Runs until `until` steps are complete, capped at the configured total. */
SDID_API sdid_status sdid_trainer_run(sdid_trainer* tr, size_t until);
SDID_API sdid_status sdid_trainer_run_all(sdid_trainer* tr);
SDID_API size_t sdid_trainer_steps_done(const sdid_trainer* tr);
SDID_API size_t sdid_trainer_total_steps(const sdid_trainer* tr);
SDID_API sdid_status sdid_trainer_save(const sdid_trainer* tr, const char* path);
/* Most recent checkpoint written by run, "" if none. Valid until the next call on tr. */
SDID_API const char* sdid_trainer_last_checkpoint(const sdid_trainer* tr);
SDID_API void sdid_trainer_free(sdid_trainer* tr);

/* ---- images ---- */

SDID_API sdid_status sdid_image_new(size_t channels, size_t height, size_t width, const float* pixels,
                                    sdid_image** out);
/* Binary PGM or PPM. */
SDID_API sdid_status sdid_image_read(const char* path, sdid_image** out);
SDID_API sdid_status sdid_image_write(const sdid_image* img, const char* path);
SDID_API sdid_status sdid_image_shape(const sdid_image* img, size_t* channels, size_t* height, size_t* width);
/* CHW row-major pixels; valid while img lives. */
SDID_API const float* sdid_image_data(const sdid_image* img);
SDID_API sdid_status sdid_image_psnr(const sdid_image* a, const sdid_image* b, double* out);
SDID_API sdid_status sdid_image_ssim(const sdid_image* a, const sdid_image* b, double* out);
SDID_API void sdid_image_free(sdid_image* img);

/* ---- inference and analysis ---- */

SDID_API sdid_status sdid_model_load(const char* checkpoint, sdid_model** out);
/* Input sides must be multiples of this unless padding is requested. */
SDID_API size_t sdid_model_size_multiple(const sdid_model* m);
SDID_API sdid_status sdid_model_config(const sdid_model* m, sdid_config** out);
/* style_ref NULL: style sampled from `seed`. Otherwise the noise-free style of style_ref.
   pad != 0 reflect-pads to the size multiple and crops back. */
SDID_API sdid_status sdid_model_denoise(const sdid_model* m, const sdid_image* noisy, const sdid_image* style_ref,
                                        uint64_t seed, int pad, sdid_image** out);

typedef struct sdid_mix_result {
  double spearman;      /* rho(lambda, PSNR against clean) */
  double identity_band; /* PSNR(dec(enc(x)), x) */
} sdid_mix_result;

/* Style mixing sweep on one noisy/clean pair. Writes the CSV (lambda,cos_sq,psnr,ssim)
   and, if image_prefix is non-NULL, one image per lambda named <prefix><k>.pgm/.ppm. */
SDID_API sdid_status sdid_model_mix(const sdid_model* m, const sdid_image* noisy, const sdid_image* clean,
                                    const double* lambdas, size_t count, const char* csv_path,
                                    const char* image_prefix, sdid_mix_result* out);

typedef struct sdid_analysis_summary {
  size_t style_points;
  size_t channels;
  size_t gaussian_channels; /* moment-fit residual <= 0.05 */
  int sampled_nearest_noise_free;
} sdid_analysis_summary;

/* Reads val.sdat from data_dir; writes style_proj.csv, feat_stats.csv, report.txt to out_dir. */
SDID_API sdid_status sdid_model_analyze(const sdid_model* m, const char* data_dir, const char* out_dir,
                                        sdid_analysis_summary* out);
SDID_API void sdid_model_free(sdid_model* m);

/* ---- verification ---- */

typedef struct sdid_check {
  const char* suite;
  const char* name;
  int pass;
  double value;
  double limit;
  const char* detail;
} sdid_check;

typedef void (*sdid_check_fn)(void* user, const sdid_check* check);

/* suite: "grad", "props" or "all". corrupt_backward scales every backward pass (1 = none). */
SDID_API sdid_status sdid_verify(const char* suite, uint64_t seed, double corrupt_backward, sdid_check_fn fn,
                                 void* user, int* all_pass, double* max_rel_err);

#ifdef __cplusplus
}
#endif

#endif
