#ifndef SPS_H
#define SPS_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum SpsStatus {
  SPS_STATUS_OK = 0,
  SPS_STATUS_NULL_POINTER = 1,
  SPS_STATUS_INVALID_ARGUMENT = 2,
  SPS_STATUS_LENGTH_MISMATCH = 3,
  SPS_STATUS_QUADRATURE = 4,
  SPS_STATUS_EIGEN = 5,
  SPS_STATUS_TRUNCATION = 6,
  SPS_STATUS_INFEASIBLE = 7,
  SPS_STATUS_NON_CONVERGENCE = 8,
  SPS_STATUS_NUMERICAL = 9,
  SPS_STATUS_IO = 10,
  SPS_STATUS_PANIC = 11,
} SpsStatus;

typedef enum SpsMethod {
  SPS_METHOD_SCF = 0,
  SPS_METHOD_ASCENT = 1,
} SpsMethod;

typedef enum SpsPerturb {
  SPS_PERTURB_NONE = 0,
  SPS_PERTURB_PHASE = 1,
  SPS_PERTURB_OCCUPATION = 2,
  SPS_PERTURB_MIX = 3,
} SpsPerturb;

// Equation of state `f` with its Casimir integrals.
typedef struct SpsEos SpsEos;

// A solved steady state.
typedef struct SpsSteady SpsSteady;

typedef struct SpsSolverOptions {
  // Number of eigenpairs kept.
  size_t k;
  double tol_v;
  double tol_lambda;
  size_t max_iter;
  double damping;
  enum SpsMethod method;
} SpsSolverOptions;

typedef struct SpsCertificates {
  double poisson_residual_inf;
  double charge_residual;
  double eos_residual;
  double phi_value;
  double hc_value;
  double trace_tail_bound;
  double min_potential;
  double sigma0;
  size_t iterations;
  // Grid size `N`; length of the potential and density arrays.
  size_t n_points;
  // Truncation `K`; length of the eigenvalue and occupation arrays.
  size_t k;
} SpsCertificates;

typedef struct SpsStabilityParams {
  double dt;
  double t_final;
  size_t sample_every;
  size_t midpoint_sweeps;
  // Unoccupied eigenfields propagated beyond the occupied ones.
  size_t buffer;
  enum SpsPerturb perturb;
  double eps;
  uint64_t seed;
  // Audit slack on `d(t) ≤ B`.
  double tol;
} SpsStabilityParams;

typedef struct SpsStabilityResult {
  // Energy-Casimir excess `B` of the perturbed datum.
  double bound;
  // `min_t (B − d(t))`.
  double margin;
  double hc_drift;
  double max_step_mass_change;
  double max_orthonormality_defect;
  size_t samples;
  size_t violations;
  bool pass;
} SpsStabilityResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next `sps_*` call on the same thread.
const char *sps_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *sps_version(void);

// `f(s) = exp(−βs)`.
enum SpsStatus sps_eos_boltzmann(double beta, struct SpsEos **out_eos);

// Fermi-Dirac profile integrated over velocities, amplitude `c` and statistics parameter `eps`.
enum SpsStatus sps_eos_fermi_dirac(double c, double eps, struct SpsEos **out_eos);

// `f(s) = max(s0 − s, 0)^q`.
enum SpsStatus sps_eos_power_cutoff(double s0, double q, struct SpsEos **out_eos);

// # Safety
// `eos` must come from an `sps_eos_*` constructor and not be freed twice.
void sps_eos_free(struct SpsEos *eos);

// Occupation `f(s)`.
//
// # Safety
// `eos` must be a live handle and `value` writable.
enum SpsStatus sps_eos_f(const struct SpsEos *eos, double s, double *value);

// `F(s) = ∫_s^∞ f`.
//
// # Safety
// `eos` must be a live handle and `value` writable.
enum SpsStatus sps_eos_tail_integral(const struct SpsEos *eos, double s, double *value);

// `f⁻¹(λ)` for `λ > 0`.
//
// # Safety
// `eos` must be a live handle and `value` writable.
enum SpsStatus sps_eos_inverse(const struct SpsEos *eos, double lambda, double *value);

// Legendre conjugate `F*(s)` for `s ≤ 0`.
//
// # Safety
// `eos` must be a live handle and `value` writable.
enum SpsStatus sps_eos_conjugate(const struct SpsEos *eos, double s, double *value);

// Defaults for a grid with `n_points` interior nodes.
struct SpsSolverOptions sps_solver_options_default(size_t n_points);

// Solves for the steady state of total charge `total_charge` on `(0, length)`
// with `n_points` interior nodes. `opts` may be null for defaults.
//
// # Safety
// `eos` must be a live handle, `opts` null or readable, `out_steady` writable.
enum SpsStatus sps_steady_solve(const struct SpsEos *eos,
                                double length,
                                size_t n_points,
                                double total_charge,
                                const struct SpsSolverOptions *opts,
                                struct SpsSteady **out_steady);

// # Safety
// `steady` must come from `sps_steady_solve` and not be freed twice.
void sps_steady_free(struct SpsSteady *steady);

// # Safety
// `steady` must be a live handle and `out_cert` writable.
enum SpsStatus sps_steady_certificates(const struct SpsSteady *steady,
                                       struct SpsCertificates *out_cert);

// Copies `V0` (length `n_points`).
//
// # Safety
// `buf` must hold `len` doubles.
enum SpsStatus sps_steady_copy_potential(const struct SpsSteady *steady, double *buf, size_t len);

// Copies the density (length `n_points`).
//
// # Safety
// `buf` must hold `len` doubles.
enum SpsStatus sps_steady_copy_density(const struct SpsSteady *steady, double *buf, size_t len);

// Copies the eigenvalues `μ` (length `k`).
//
// # Safety
// `buf` must hold `len` doubles.
enum SpsStatus sps_steady_copy_eigenvalues(const struct SpsSteady *steady, double *buf, size_t len);

// Copies the occupations `λ` (length `k`).
//
// # Safety
// `buf` must hold `len` doubles.
enum SpsStatus sps_steady_copy_occupations(const struct SpsSteady *steady, double *buf, size_t len);

struct SpsStabilityParams sps_stability_params_default(void);

// Perturbs the steady state, propagates it and audits `d(t) ≤ B`.
// A failed audit is reported through `pass`, not the status.
//
// # Safety
// `steady` must be a live handle, `params` readable, `out_result` writable.
enum SpsStatus sps_stability_run(const struct SpsSteady *steady,
                                 const struct SpsStabilityParams *params,
                                 struct SpsStabilityResult *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPS_H */
