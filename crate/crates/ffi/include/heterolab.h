#ifndef HETEROLAB_H
#define HETEROLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HlProbeDistribution {
  HL_PROBE_DISTRIBUTION_GAUSSIAN = 0,
  HL_PROBE_DISTRIBUTION_RADEMACHER = 1,
} HlProbeDistribution;

typedef enum HlStatus {
  HL_STATUS_OK = 0,
  HL_STATUS_NULL_POINTER = 1,
  HL_STATUS_INVALID_ARGUMENT = 2,
  HL_STATUS_NUMERICAL = 3,
  HL_STATUS_IO = 4,
  HL_STATUS_PARSE = 5,
  HL_STATUS_PANIC = 6,
} HlStatus;

typedef enum HlQConstruction {
  HL_Q_CONSTRUCTION_ORTHOGONAL = 0,
  HL_Q_CONSTRUCTION_GAUSSIAN = 1,
} HlQConstruction;

// A blurred spectral density (quadrature nodes, weights and width).
typedef struct HlDensity HlDensity;

// A symmetric linear operator, optionally with a block partition.
typedef struct HlOperator HlOperator;

// A block-diagonal quadratic `½ wᵀHw`.
typedef struct HlQuadProblem HlQuadProblem;

// Probe settings for SLQ and trace estimation.
typedef struct HlProbeConfig {
  size_t num_probes;
  // Lanczos steps per probe (clamped to the operator dimension).
  size_t steps;
  uint64_t seed;
  enum HlProbeDistribution distribution;
  bool reorthogonalize;
} HlProbeConfig;

// Writes `A x` into `y`; both arrays have `dim` entries. May be called from
// several threads at once.
typedef void (*HlApplyFn)(void *user_data, const double *x, double *y, size_t dim);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *hl_version(void);

// Copies the calling thread's last error message into `buf` (truncated and
// NUL-terminated when `len > 0`). Returns the full message length without
// the terminator, 0 if no call on this thread has failed.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t hl_last_error_message(char *buf, size_t len);

// Ten Gaussian probes, 100 steps, seed 0, reorthogonalization on.
struct HlProbeConfig hl_probe_config_default(void);

// Dense symmetric `n × n` operator from row-major `data` (`n * n` values).
//
// # Safety
// `data` must point to `n * n` readable doubles; `out` must be writable.
enum HlStatus hl_operator_dense(size_t n, const double *data, struct HlOperator **out);

// Diagonal operator.
//
// # Safety
// `diag` must point to `n` readable doubles; `out` must be writable.
enum HlStatus hl_operator_diagonal(size_t n, const double *diag, struct HlOperator **out);

// Matrix-free operator backed by `apply`. `user_data` must outlive the
// handle.
//
// # Safety
// `apply` must honour the [`HlApplyFn`] contract; `out` must be writable.
enum HlStatus hl_operator_callback(size_t dim,
                                   HlApplyFn apply,
                                   void *user_data,
                                   struct HlOperator **out);

// Attaches a partition into contiguous blocks of the given sizes, which
// must sum to the operator dimension.
//
// # Safety
// `op` must be a live handle; `sizes` must point to `num_blocks` values.
enum HlStatus hl_operator_set_partition(struct HlOperator *op,
                                        const size_t *sizes,
                                        size_t num_blocks);

// Dimension of `op`, 0 for a null handle.
//
// # Safety
// `op` must be null or a live handle.
size_t hl_operator_dim(const struct HlOperator *op);

// `y = A x`, both of length `n` (the operator dimension).
//
// # Safety
// `op` must be a live handle; `x` and `y` must hold `n` doubles.
enum HlStatus hl_operator_apply(const struct HlOperator *op, const double *x, double *y, size_t n);

// # Safety
// `op` must be null or a handle not yet freed.
void hl_operator_free(struct HlOperator *op);

// Hutchinson estimate of `tr(A)`.
//
// # Safety
// `op` must be a live handle; `config` and `out` valid pointers.
enum HlStatus hl_estimate_trace(const struct HlOperator *op,
                                const struct HlProbeConfig *config,
                                double *out);

// SLQ density of `op`, or of its 1-based `block` under the attached
// partition (`block = 0` for the whole operator). `sigma = 0` selects the
// default width.
//
// # Safety
// `op` must be a live handle; `config` and `out` valid pointers.
enum HlStatus hl_slq_density(const struct HlOperator *op,
                             size_t block,
                             const struct HlProbeConfig *config,
                             double sigma,
                             struct HlDensity **out);

// Density of a known spectrum, each eigenvalue weighted `1/n`. `sigma = 0`
// selects the default width.
//
// # Safety
// `eigenvalues` must hold `n` doubles; `out` must be writable.
enum HlStatus hl_density_from_eigenvalues(size_t n,
                                          const double *eigenvalues,
                                          double sigma,
                                          struct HlDensity **out);

// Blur width of `d`, NaN for a null handle.
//
// # Safety
// `d` must be null or a live handle.
double hl_density_sigma(const struct HlDensity *d);

// Evaluates the density at `n` points.
//
// # Safety
// `d` must be a live handle; `t` and `values` must hold `n` doubles.
enum HlStatus hl_density_evaluate(const struct HlDensity *d,
                                  const double *t,
                                  double *values,
                                  size_t n);

// # Safety
// `d` must be null or a handle not yet freed.
void hl_density_free(struct HlDensity *d);

// Jensen-Shannon distance (natural log, in `[0, ln 2]`) on an automatic
// grid.
//
// # Safety
// `a`, `b` must be live handles; `out` writable.
enum HlStatus hl_js_distance(const struct HlDensity *a, const struct HlDensity *b, double *out);

// Mean pairwise JS distance among `n >= 2` densities.
//
// # Safety
// `densities` must hold `n` live handles; `out` writable.
enum HlStatus hl_js0(const struct HlDensity *const *densities, size_t n, double *out);

// One of the four reference cases (1 to 4), built from `seed`.
//
// # Safety
// `out` must be writable.
enum HlStatus hl_quad_case(uint32_t case_id,
                           uint64_t seed,
                           enum HlQConstruction construction,
                           struct HlQuadProblem **out);

// Problem with diagonal blocks: block `l` has `sizes[l]` entries taken in
// order from `diag`.
//
// # Safety
// `sizes` must hold `num_blocks` values and `diag` their sum; `out`
// writable.
enum HlStatus hl_quad_diagonal_blocks(size_t num_blocks,
                                      const size_t *sizes,
                                      const double *diag,
                                      struct HlQuadProblem **out);

// Dimension of `p`, 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
size_t hl_quad_dim(const struct HlQuadProblem *p);

// Loss `½ wᵀHw + hᵀw` at `w` (length `n`).
//
// # Safety
// `p` must be a live handle; `w` must hold `n` doubles; `out` writable.
enum HlStatus hl_quad_loss(const struct HlQuadProblem *p, const double *w, size_t n, double *out);

// Standard Gaussian initial point for `seed`.
//
// # Safety
// `p` must be a live handle; `w` must hold `n` doubles.
enum HlStatus hl_quad_gaussian_init(const struct HlQuadProblem *p,
                                    uint64_t seed,
                                    double *w,
                                    size_t n);

// Gradient descent from `w0` (length `n`) with step `eta` (`0` for
// `2 / (λ_max + λ_min)`). Writes up to `steps + 1` records (fewer if the
// run diverged) into the optional `loss` and `rel_error` arrays of
// `capacity` entries and their count into `out_len`.
//
// # Safety
// `p` must be a live handle; arrays must match their stated lengths.
enum HlStatus hl_quad_run_gd(const struct HlQuadProblem *p,
                             double eta,
                             size_t steps,
                             const double *w0,
                             size_t n,
                             double *loss,
                             double *rel_error,
                             size_t capacity,
                             size_t *out_len);

// Adam with `β₁ = 0`, `ε = 0` and the given `β₂`; outputs as for
// [`hl_quad_run_gd`].
//
// # Safety
// `p` must be a live handle; arrays must match their stated lengths.
enum HlStatus hl_quad_run_adam(const struct HlQuadProblem *p,
                               double eta,
                               double beta2,
                               size_t steps,
                               const double *w0,
                               size_t n,
                               double *loss,
                               double *rel_error,
                               size_t capacity,
                               size_t *out_len);

// # Safety
// `p` must be null or a handle not yet freed.
void hl_quad_free(struct HlQuadProblem *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HETEROLAB_H */
