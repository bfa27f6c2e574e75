#ifndef ANNEAL_RANGE_H
#define ANNEAL_RANGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define AR_DEVICE_LOW_NOISE 0

#define AR_DEVICE_HIGH_NOISE 1

#define AR_CLASS_START 0

#define AR_CLASS_TRUE_MIN 1

#define AR_CLASS_FALSE_MIN 2

#define AR_CLASS_OTHER 3

#define AR_STATE_START 0

#define AR_STATE_TRUE_MIN 1

typedef enum ArStatus {
  AR_STATUS_OK = 0,
  AR_STATUS_NULL_POINTER = 1,
  AR_STATUS_INVALID_ARGUMENT = 2,
  AR_STATUS_OUT_OF_RANGE = 3,
  AR_STATUS_NUMERICAL = 4,
  AR_STATUS_IO = 5,
  AR_STATUS_BUFFER_TOO_SMALL = 6,
  AR_STATUS_INTERNAL = 7,
} ArStatus;

/**
 * Built gadget at one barrier height.
 */
typedef struct ArGadget ArGadget;

/**
 * Annealing schedule A(s), B(s).
 */
typedef struct ArSchedule ArSchedule;

/**
 * Result of a branching-ratio fit.
 */
typedef struct ArFit {
  double r_false;
  double kappa;
  double sigma_r;
  double sigma_kappa;
  double rss;
  bool kappa_identifiable;
} ArFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `capacity`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be null or point to at least `capacity` writable bytes.
 */
size_t ar_last_error(char *buf, size_t capacity);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ar_version(void);

/**
 * Builds and validates the gadget at barrier height `j_t` in [0, 1].
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ArStatus ar_gadget_new(double j_t, struct ArGadget **out);

/**
 * Releases a gadget handle; null is ignored.
 *
 * # Safety
 * `gadget` must come from [`ar_gadget_new`] and not be used afterwards.
 */
void ar_gadget_free(struct ArGadget *gadget);

/**
 * # Safety
 * Pointers must be null or valid.
 */
enum ArStatus ar_gadget_n_qubits(const struct ArGadget *gadget, size_t *out);

/**
 * Energy of a spin configuration given as `len` values of +1/-1.
 *
 * # Safety
 * `spins` must point to `len` readable values; other pointers null or valid.
 */
enum ArStatus ar_gadget_energy(const struct ArGadget *gadget,
                               const int8_t *spins,
                               size_t len,
                               double *out);

/**
 * Outcome class (`AR_CLASS_*`) of a spin configuration.
 *
 * # Safety
 * As for [`ar_gadget_energy`].
 */
enum ArStatus ar_gadget_classify(const struct ArGadget *gadget,
                                 const int8_t *spins,
                                 size_t len,
                                 int32_t *out);

/**
 * Writes the start (`AR_STATE_START`) or true-minimum (`AR_STATE_TRUE_MIN`)
 * state as a NUL-terminated bit string, qubit 0 first, '0' for spin +1.
 *
 * # Safety
 * `buf` must point to `capacity` writable bytes.
 */
enum ArStatus ar_gadget_state_bits(const struct ArGadget *gadget,
                                   int32_t which,
                                   char *buf,
                                   size_t capacity);

/**
 * Synthetic schedule of `AR_DEVICE_LOW_NOISE` or `AR_DEVICE_HIGH_NOISE`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum ArStatus ar_schedule_synthetic(int32_t device, struct ArSchedule **out);

/**
 * Loads a schedule CSV with columns `s,A_GHz,B_GHz`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` as for [`ar_schedule_synthetic`].
 */
enum ArStatus ar_schedule_load(const char *path, struct ArSchedule **out);

/**
 * Releases a schedule handle; null is ignored.
 *
 * # Safety
 * `schedule` must come from this library and not be used afterwards.
 */
void ar_schedule_free(struct ArSchedule *schedule);

/**
 * A(s) and B(s) in GHz.
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum ArStatus ar_schedule_ab(const struct ArSchedule *schedule,
                             double s,
                             double *a_out,
                             double *b_out);

/**
 * Γ(s) = A(s)/B(s).
 *
 * # Safety
 * Pointers must be null or valid.
 */
enum ArStatus ar_schedule_gamma(const struct ArSchedule *schedule, double s, double *out);

/**
 * Runs one reverse-anneal point with default bath settings and coupling
 * `eta`, writing counts for Start, TrueMin, FalseMin and Other into
 * `counts_out[0..4]`.
 *
 * # Safety
 * `counts_out` must point to 4 writable values; handles null or valid.
 */
enum ArStatus ar_run_point(const struct ArSchedule *schedule,
                           double eta,
                           double j_t,
                           double s_star,
                           double tau_us,
                           uint64_t shots,
                           uint64_t seed,
                           uint64_t *counts_out);

/**
 * Fits `P_false(τ) = 1 - (1 - R) exp(-κ τ)` to `n` points.
 *
 * # Safety
 * `tau` and `p_false` must point to `n` readable values; `out` valid.
 */
enum ArStatus ar_branching_fit(const double *tau,
                               const double *p_false,
                               size_t n,
                               struct ArFit *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANNEAL_RANGE_H */
