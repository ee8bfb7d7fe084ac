#ifndef CNMWS_H
#define CNMWS_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CNMWS_API __declspec(dllexport)
#else
#define CNMWS_API __attribute__((visibility("default")))
#endif

/* Status codes. The numeric values of the first four double as CLI exit
   codes. */
typedef enum cnmws_status {
    CNMWS_OK = 0,
    CNMWS_ERR_CONFIG = 1,   /* malformed or inconsistent input */
    CNMWS_ERR_NUMERIC = 2,  /* non-finite state, failed fit or solve */
    CNMWS_ERR_IO = 3,       /* unreadable config, unwritable output */
    CNMWS_ERR_ARGUMENT = 4, /* null handle or bad argument */
    CNMWS_ERR_INTERNAL = 5
} cnmws_status;

typedef struct cnmws_spectrum cnmws_spectrum;
typedef struct cnmws_config cnmws_config;
typedef struct cnmws_report cnmws_report;

CNMWS_API const char* cnmws_version(void);

/* Message of the last failed call on this thread; never NULL. */
CNMWS_API const char* cnmws_last_error(void);

/* Calibrated noise spectra. family is "ou", "rational" ("psd1") or
   "matern" ("psd2"); nu is only read for the Matern family. */
CNMWS_API cnmws_status cnmws_spectrum_calibrate(const char* family, double xi0, double t_eff, double tau_c,
                                                double nu, cnmws_spectrum** out);
CNMWS_API cnmws_status cnmws_spectrum_psd(const cnmws_spectrum* s, double omega, double* out);
CNMWS_API cnmws_status cnmws_spectrum_correlation(const cnmws_spectrum* s, double t, double* out);
CNMWS_API cnmws_status cnmws_spectrum_tau_c(const cnmws_spectrum* s, double* out);
CNMWS_API void cnmws_spectrum_free(cnmws_spectrum* s);

/* Reads the config file and reports unknown keys, missing keys and time-step
   warnings without running anything. Returns CNMWS_OK whenever the file could
   be parsed; inspect cnmws_report_error_count for validity. */
CNMWS_API cnmws_status cnmws_config_validate(const char* path, cnmws_report** out);

/* Loads and validates a config. When has_seed is nonzero, seed replaces
   experiment.seed; output_dir (may be NULL) replaces experiment.output. */
CNMWS_API cnmws_status cnmws_config_load(const char* path, int has_seed, uint64_t seed, const char* output_dir,
                                         cnmws_config** out);
/* Lowercase hex SHA-256 of the canonical config; buf needs 65 bytes. */
CNMWS_API cnmws_status cnmws_config_hash(const cnmws_config* c, char* buf, size_t len);
CNMWS_API void cnmws_config_free(cnmws_config* c);

/* Runs the experiment and writes CSVs, summary.json and manifest.json to the
   configured output directory. threads <= 0 uses every hardware thread. The
   report lists the written files followed by warnings. */
CNMWS_API cnmws_status cnmws_run(const cnmws_config* c, int threads, cnmws_report** out);

/* Writes the analytic curves of a harmonic config only. */
CNMWS_API cnmws_status cnmws_oracle(const cnmws_config* c, cnmws_report** out);

/* Calibrated spectrum parameters as "name = value" lines. */
CNMWS_API cnmws_status cnmws_calibrate(const cnmws_config* c, cnmws_report** out);

CNMWS_API size_t cnmws_report_size(const cnmws_report* r);
CNMWS_API const char* cnmws_report_line(const cnmws_report* r, size_t i);
CNMWS_API size_t cnmws_report_error_count(const cnmws_report* r);
CNMWS_API void cnmws_report_free(cnmws_report* r);

#ifdef __cplusplus
}
#endif

#endif
