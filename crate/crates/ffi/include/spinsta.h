#ifndef SPINSTA_H
#define SPINSTA_H

/* This file is generated by cbindgen from spinsta-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Boundary condition selector for spinsta_instance_rfim().
 */
typedef enum SpinstaBoundary {
  SPINSTA_BOUNDARY_OPEN = 0,
  SPINSTA_BOUNDARY_PERIODIC = 1,
} SpinstaBoundary;

/**
 * Transverse-field selector for spinsta_anneal().
 */
typedef enum SpinstaFieldKind {
  /**
   * h_i^x = 1 everywhere.
   */
  SPINSTA_FIELD_KIND_UNIFORM = 0,
  /**
   * h_i^x drawn i.i.d. per spin from the seeded generator.
   */
  SPINSTA_FIELD_KIND_RANDOM_IID = 1,
} SpinstaFieldKind;

/**
 * Status code returned by every API function.
 */
typedef enum SpinstaStatus {
  /**
   * Success.
   */
  SPINSTA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SPINSTA_STATUS_NULL_ARGUMENT = 1,
  /**
   * A scalar argument was out of range.
   */
  SPINSTA_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Model construction failed; see spinsta_last_error().
   */
  SPINSTA_STATUS_MODEL = 3,
  /**
   * The exact ground-state oracle failed; see spinsta_last_error().
   */
  SPINSTA_STATUS_ORACLE = 4,
  /**
   * The annealing run failed to start; see spinsta_last_error().
   */
  SPINSTA_STATUS_ANNEAL = 5,
  /**
   * A JSON payload could not be parsed or encoded.
   */
  SPINSTA_STATUS_JSON = 6,
  /**
   * A string argument was not valid UTF-8.
   */
  SPINSTA_STATUS_UTF8 = 7,
} SpinstaStatus;

/**
 * Opaque Ising instance handle.
 */
typedef struct spinsta_instance spinsta_instance;

/**
 * Result of one annealing run.
 */
typedef struct SpinstaAnnealResult {
  /**
   * Ising energy of the rounded final configuration.
   */
  double energy;
  /**
   * True when the trajectory halted on a criticality event before the end
   * of the sweep (the energy then comes from the halted state).
   */
  bool halted;
  /**
   * Number of accepted integrator steps.
   */
  size_t steps;
} SpinstaAnnealResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the most recent error on this thread into `buffer`
 * (NUL-terminated, truncated to `capacity` bytes) and returns the full
 * message length in bytes excluding the NUL. Returns 0 when no error has
 * been recorded. `buffer` may be null to query the length alone.
 *
 * # Safety
 * `buffer`, when non-null, must point to at least `capacity` writable bytes.
 */
size_t spinsta_last_error(char *buffer, size_t capacity);

/**
 * Builds the standard random-field Ising benchmark instance on an L x L
 * lattice (J = 1 bonds, fields +-0.3 seeded by `seed`) and stores a new
 * handle in `*out`. Periodic boundaries require L >= 3.
 *
 * # Safety
 * `out` must be a valid pointer; on Ok it receives an owned handle that must
 * be released with spinsta_instance_free().
 */
enum SpinstaStatus spinsta_instance_rfim(size_t l,
                                         uint64_t seed,
                                         enum SpinstaBoundary boundary,
                                         struct spinsta_instance **out);

/**
 * Parses an instance from its canonical JSON form and stores a new handle in
 * `*out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be a valid pointer and
 * on Ok receives an owned handle to release with spinsta_instance_free().
 */
enum SpinstaStatus spinsta_instance_from_json(const char *json, struct spinsta_instance **out);

/**
 * Serializes the instance to its canonical JSON form as a NUL-terminated
 * string owned by the library; release it with spinsta_string_free().
 *
 * # Safety
 * `instance` must be a live handle from this library and `out` a valid
 * pointer.
 */
enum SpinstaStatus spinsta_instance_to_json(const struct spinsta_instance *instance, char **out);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have been returned by this library and not freed before.
 */
void spinsta_string_free(char *s);

/**
 * Number of spins of the instance.
 *
 * # Safety
 * `instance` must be a live handle and `out` a valid pointer.
 */
enum SpinstaStatus spinsta_instance_spin_count(const struct spinsta_instance *instance,
                                               size_t *out);

/**
 * Releases an instance handle. Null is a no-op.
 *
 * # Safety
 * `instance` must have come from this library and not be freed twice.
 */
void spinsta_instance_free(struct spinsta_instance *instance);

/**
 * Computes the exact ground state by the max-flow oracle. Writes the energy
 * to `*energy` and, when `spins` is non-null, the +-1 configuration into
 * `spins[0..spin_count]`.
 *
 * # Safety
 * `instance` must be a live handle, `energy` a valid pointer, and `spins`
 * either null or valid for `spin_count` writes.
 */
enum SpinstaStatus spinsta_ground_state(const struct spinsta_instance *instance,
                                        double *energy,
                                        int8_t *spins,
                                        size_t spin_count);

/**
 * Runs one counter-diabatically driven annealing sweep of duration `tau`
 * with base step `dt` and transverse fields drawn from `field_seed`, and
 * writes the outcome to `*out`. When `spins` is non-null the rounded +-1
 * configuration is written into `spins[0..spin_count]`.
 *
 * # Safety
 * `instance` must be a live handle, `out` a valid pointer, and `spins`
 * either null or valid for `spin_count` writes.
 */
enum SpinstaStatus spinsta_anneal(const struct spinsta_instance *instance,
                                  enum SpinstaFieldKind field_kind,
                                  uint64_t field_seed,
                                  double tau,
                                  double dt,
                                  struct SpinstaAnnealResult *out,
                                  int8_t *spins,
                                  size_t spin_count);

/**
 * Integrates the fully connected benchmark sweep (N spins, coupling J,
 * initial field h0 = h0_over_j * J, duration tau, base step dt) from the
 * all-up state and writes the final mean z magnetization to `*final_mz`.
 * `*critical` is set when the trajectory halted on a criticality event
 * before the end of the sweep.
 *
 * # Safety
 * `final_mz` and `critical` must be valid pointers.
 */
enum SpinstaStatus spinsta_lmg_sweep(double h0_over_j,
                                     double coupling,
                                     double tau,
                                     size_t n,
                                     double dt,
                                     double *final_mz,
                                     bool *critical);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPINSTA_H */
