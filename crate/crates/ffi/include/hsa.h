#ifndef HSA_H
#define HSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HsaStatus {
  HSA_STATUS_OK = 0,
  HSA_STATUS_NULL_POINTER = 1,
  HSA_STATUS_INVALID_PARAMS = 2,
  HSA_STATUS_SHAPE_MISMATCH = 3,
  HSA_STATUS_CONSTRUCTION_FAILED = 4,
  HSA_STATUS_INSUFFICIENT_RELAYS = 5,
  HSA_STATUS_OUT_OF_RANGE = 6,
  HSA_STATUS_VERIFICATION_FAILED = 7,
  HSA_STATUS_INTERNAL = 8,
} HsaStatus;

/**
 * Opaque scheme handle.
 */
typedef struct HsaScheme HsaScheme;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Builds an audited scheme. `p = 0` picks the smallest prime above `K(q-1)`.
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle to free with `hsa_scheme_free`.
 */
enum HsaStatus hsa_scheme_new(uintptr_t clients,
                              uintptr_t degree,
                              uintptr_t stragglers,
                              uint64_t alphabet,
                              uint64_t p,
                              uintptr_t model_len,
                              uint64_t seed,
                              struct HsaScheme **out);

/**
 * The bundled K=5, d=3, s=1 example with source symbols drawn from `seed`.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum HsaStatus hsa_scheme_example(uint64_t seed, struct HsaScheme **out);

/**
 * # Safety
 * `scheme` must come from this library and not be freed twice. Null is ignored.
 */
void hsa_scheme_free(struct HsaScheme *scheme);

/**
 * Writes `K`, `d`, `s`, `q`, `p` and `L` into `out[0..6]`.
 *
 * # Safety
 * `scheme` must be a live handle and `out` must hold 6 values.
 */
enum HsaStatus hsa_scheme_params(const struct HsaScheme *scheme, uint64_t *out);

/**
 * Runs one round. `models` is `K x L` row-major with entries below `q`.
 * `relay_ok[m] != 0` means relay `m` reaches the server; null means all do.
 * On success `out_sum[0..L]` holds the integer sum.
 *
 * # Safety
 * `models` must hold `K*L` values, `relay_ok` (if not null) `K` bytes, `out_sum` `L` values.
 */
enum HsaStatus hsa_aggregate(const struct HsaScheme *scheme,
                             const uint64_t *models,
                             const uint8_t *relay_ok,
                             uint64_t *out_sum);

/**
 * Largest relay leakage and the server leakage with every relay heard, in symbols.
 *
 * # Safety
 * All pointers must be valid.
 */
enum HsaStatus hsa_audit(const struct HsaScheme *scheme,
                         uintptr_t *out_relay_max,
                         uintptr_t *out_server);

/**
 * Checks the bundled example; `HSA_STATUS_VERIFICATION_FAILED` names the first mismatch.
 */
enum HsaStatus hsa_verify_example(void);

/**
 * Copies the calling thread's last error message, NUL-terminated, into `buf`.
 * Returns the message length without the terminator; when that is `>= len`
 * the copy was truncated.
 *
 * # Safety
 * `buf` must hold `len` bytes, or be null with `len == 0`.
 */
uintptr_t hsa_last_error(char *buf, uintptr_t len);

/**
 * Static, NUL-terminated name of a status code.
 */
const char *hsa_status_name(enum HsaStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HSA_H */
