#ifndef SLICEWISE_H
#define SLICEWISE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SW_STATUS_OK = 0,
  SW_STATUS_NULL_ARGUMENT = 1,
  SW_STATUS_INVALID_UTF8 = 2,
  SW_STATUS_INVALID_ARGUMENT = 3,
  SW_STATUS_IO = 4,
  SW_STATUS_PARSE = 5,
  SW_STATUS_MISMATCH = 6,
  SW_STATUS_INTERNAL = 7,
} SwStatus;

// A schema-validated dataset.
typedef struct SwDataset SwDataset;

// An enumerated slice lattice.
typedef struct SwLattice SwLattice;

// One model's error-slice report.
typedef struct SwReport SwReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next library call on the same thread; do not free.
const char *sw_last_error(void);

// Library version as a static string; do not free.
const char *sw_version(void);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void sw_string_free(char *s);

// Loads a schema document and the NDJSON dataset tagged against it.
//
// # Safety
// Paths must be nul-terminated; `out` must be writable.
SwStatus sw_dataset_load(const char *schema_path, const char *dataset_path, SwDataset **out);

// Number of samples, or 0 for null.
//
// # Safety
// `dataset` must be null or a live handle.
size_t sw_dataset_len(const SwDataset *dataset);

// # Safety
// `dataset` must be null or a live handle, not used afterwards.
void sw_dataset_free(SwDataset *dataset);

// Enumerates all slices of depth at most `max_depth` with at least
// `min_count` members. `algorithm` is "naive", "tree", "efficient" or null
// for the efficient one.
//
// # Safety
// `dataset` must be a live handle; `out` must be writable.
SwStatus sw_enumerate(const SwDataset *dataset,
                      size_t max_depth,
                      size_t min_count,
                      const char *algorithm,
                      size_t threads,
                      SwLattice **out);

// # Safety
// `path` must be nul-terminated; `out` must be writable.
SwStatus sw_lattice_load(const char *path, SwLattice **out);

// # Safety
// `lattice` must be a live handle; `path` must be nul-terminated.
SwStatus sw_lattice_save(const SwLattice *lattice, const char *path);

// Serialized lattice document; free with [`sw_string_free`].
//
// # Safety
// `lattice` must be a live handle; `out` must be writable.
SwStatus sw_lattice_to_json(const SwLattice *lattice, char **out);

// Content fingerprint; free with [`sw_string_free`].
//
// # Safety
// `lattice` must be a live handle; `out` must be writable.
SwStatus sw_lattice_fingerprint(const SwLattice *lattice, char **out);

// Number of slices over all depths, or 0 for null.
//
// # Safety
// `lattice` must be null or a live handle.
size_t sw_lattice_len(const SwLattice *lattice);

// Number of slices at `depth`, or 0 when out of range.
//
// # Safety
// `lattice` must be null or a live handle.
size_t sw_lattice_layer_len(const SwLattice *lattice, size_t depth);

// # Safety
// `lattice` must be null or a live handle, not used afterwards.
void sw_lattice_free(SwLattice *lattice);

// Attaches one model's per-sample performance to the lattice and lists its
// error slices at threshold `threshold`.
//
// Performance comes from the NDJSON file at `perf_path`, or from the
// dataset's own column when `perf_path` is null. `rule` is "min", "max",
// "none" or null for "min".
//
// # Safety
// Handles must be live; strings nul-terminated; `out` writable.
SwStatus sw_analyze(const SwLattice *lattice,
                    const SwDataset *dataset,
                    const char *perf_path,
                    const char *model_id,
                    const char *rule,
                    double threshold,
                    SwReport **out);

// # Safety
// `path` must be nul-terminated; `out` must be writable.
SwStatus sw_report_load(const char *path, SwReport **out);

// # Safety
// `report` must be a live handle; `path` must be nul-terminated.
SwStatus sw_report_save(const SwReport *report, const char *path);

// Serialized report; free with [`sw_string_free`].
//
// # Safety
// `report` must be a live handle; `out` must be writable.
SwStatus sw_report_to_json(const SwReport *report, char **out);

// Number of error slices, or 0 for null.
//
// # Safety
// `report` must be null or a live handle.
size_t sw_report_len(const SwReport *report);

// Average performance over all samples, or NaN for null.
//
// # Safety
// `report` must be null or a live handle.
double sw_report_overall(const SwReport *report);

// Text form (`attr=tag;attr=tag`) of the error slice at `rank` (0 is the
// worst); free with [`sw_string_free`].
//
// # Safety
// `report` must be a live handle; `out` must be writable.
SwStatus sw_report_slice_key(const SwReport *report, size_t rank, char **out);

// # Safety
// `report` must be null or a live handle, not used afterwards.
void sw_report_free(SwReport *report);

// Share of `a`'s top `fraction` error slices found among `b`'s top `fraction`.
//
// # Safety
// Handles must be live; `out` must be writable.
SwStatus sw_overlap(const SwReport *a, const SwReport *b, double fraction, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLICEWISE_H */
