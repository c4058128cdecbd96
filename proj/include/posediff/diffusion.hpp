#pragma once

#include <functional>
#include <vector>

#include "posediff/conditioning.hpp"
#include "posediff/denoiser.hpp"
#include "posediff/model.hpp"
#include "posediff/rng.hpp"
#include "posediff/skeleton.hpp"
#include "posediff/tape.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

// Linear-beta forward noising schedule.  Levels are 0-based (t in [0, T));
// level -1 is the virtual data level with alpha_bar(-1) == 1, so the final
// reverse edge lands exactly on the clean latent instead of the heavily
// denoised-but-not-clean level 0.
class DiffusionSchedule {
  public:
    explicit DiffusionSchedule(int timesteps = 1000, double beta_min = 1e-4, double beta_max = 0.02);

    int timesteps() const { return timesteps_; }
    double beta(int t) const;       // t in [0, T)
    double alpha_bar(int t) const;  // t in [-1, T)

  private:
    int timesteps_;
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

// Forward diffusion: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, int t, const Tensor& eps);

// Closed-form clean-latent estimate from a noise prediction:
//   x0 = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t).
Tensor estimate_x0(const DiffusionSchedule& sched, const Tensor& z_t, int t, const Tensor& eps_hat);
Var estimate_x0_graph(Tape& tape, const DiffusionSchedule& sched, Var z_t, int t, Var eps_hat);

// One reverse DDIM edge t -> t_prev (t_prev in [-1, t)):
//   z_prev = sqrt(abar_prev) x0 + sqrt(1 - abar_prev - sigma^2) eps_hat
//            + sigma eps_new.
// sigma == 0 is fully deterministic and must not consume any randomness;
// sigma > 0 requires a stream and draws exactly one gaussian per coordinate.
Tensor ddim_step(const DiffusionSchedule& sched, const Tensor& z_t, int t, int t_prev, const Tensor& eps_hat,
                 double sigma = 0.0, RngStream* stream = nullptr);

// Reverse-pass evaluation grids.  Grids hold the levels at which the denoiser
// runs; they never contain 0 (the last edge jumps straight to the data
// level).  descend_grid walks start, start-stride, ... while positive;
// linspace_grid rounds `count` evenly spaced levels from start down to stop.
std::vector<int> descend_grid(int start, int stride);
std::vector<int> linspace_grid(int start, int stop, int count);

// Classifier-free mixing at one level:
//   eps = eps_null + w (eps_cond - eps_null).
// w == 1 with evidence present runs only the conditional branch and w == 0
// (or empty evidence) only the null branch, one denoiser evaluation each and
// bit-exact with the corresponding plain forward pass.  `evals` accumulates
// the number of denoiser evaluations.
Tensor cfg_epsilon(const ModelParams& model, const KinematicTree& tree, const Tensor& z_t, int t,
                   const ConditionInputs& cond, double cfg_weight, int& evals);

// Scalar penalty built from the current clean-pose estimate; the sampler
// differentiates it through the full chain (denoiser included).
using GuidanceResidual = std::function<Var(Tape&, Var x0)>;

// Posterior-guided noise prediction:
//   eps' = eps_cfg + rho sqrt(1 - abar_t) d residual(x0(z_t)) / d z_t.
// rho == 0 (or an empty residual) skips the guidance graph entirely and
// returns cfg_epsilon bit-exactly.
Tensor guided_epsilon(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                      const Tensor& z_t, int t, const ConditionInputs& cond, double cfg_weight,
                      const GuidanceResidual& residual, double rho, int& evals);

struct SampleOptions {
    double cfg_weight = 1.0;
    double sigma = 0.0;              // DDIM stochasticity; 0 keeps the pass deterministic
    RngStream* noise = nullptr;      // required when sigma > 0
    GuidanceResidual residual;       // empty -> unguided
    double rho = 0.003;              // guidance strength, ignored without a residual
};

struct SampleResult {
    Tensor z;        // latent at the data level
    int evals = 0;   // total denoiser forward passes
};

// Walks the reverse grid from z_start at grid.front(): evaluate the model at
// each level, DDIM-step to the next, and finish with the edge onto the data
// level.  The grid must be strictly descending with every level in [1, T).
SampleResult sample_over_grid(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                              Tensor z_start, const std::vector<int>& grid, const ConditionInputs& cond,
                              const SampleOptions& opt = {});

// Draws z at the top level from the stream, walks the uniform grid of stride
// timesteps/steps down to the data level and returns the result as a Pose;
// every joint block must survive the 6D Gram-Schmidt map (degenerate outputs
// raise rather than being silently repaired).
Pose sample_pose(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                 RngStream& stream, const ConditionInputs& cond, int steps, const SampleOptions& opt = {},
                 int* evals = nullptr);

// Deterministic DDIM inversion: lifts a data-level latent onto the noise
// trajectory at t_target.  Edges ascend through {t_target - k step : > 0};
// the model runs at each edge's destination level while the x0 estimate uses
// the source level (at the data level the estimate is the latent itself).
// t_target <= 0 is the identity and evaluates nothing.
Tensor ddim_invert(const ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                   const Tensor& z0, int t_target, int step, const ConditionInputs& cond, int* evals = nullptr);

// Generic-predictor inversion used by the model overload above and by tests
// that substitute analytic denoisers.
using EpsilonFn = std::function<Tensor(const Tensor& z, int t)>;
Tensor ddim_invert_fn(const EpsilonFn& eps_fn, const DiffusionSchedule& sched, const Tensor& z0, int t_target,
                      int step, int* evals = nullptr);

// Per-item denoising-score-matching loss on the caller's tape: draws the
// level t uniformly, applies classifier-free dropout with probability drop_p,
// noises z0 and returns sum((eps_hat - eps)^2) over all 144 coordinates.
// Consumes, in order: one uniform for t, one uniform inside cfg_dropout and
// 144 gaussians for the noise.
Var training_loss_graph(Tape& tape, const TapeParams& P, const DiffusionSchedule& sched, const KinematicTree& tree,
                        const Tensor& z0, const ConditionInputs& cond, double drop_p, RngStream& stream);

}  // namespace posediff
