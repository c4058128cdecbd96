#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "posediff/data.hpp"
#include "posediff/diffusion.hpp"
#include "posediff/model.hpp"

namespace posediff {

// Adam over a ParamStore.  Moment buffers mirror the store's insertion order,
// so the optimizer is only valid for the store it was constructed from (or an
// identically shaped one).  step() consumes the store's current gradients and
// applies the bias-corrected update in place.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(const ParamStore& store, double beta1 = 0.9, double beta2 = 0.999,
                           double epsilon = 1e-8);

    void step(ParamStore& store, double learning_rate);
    int steps_taken() const { return steps_; }

  private:
    double beta1_;
    double beta2_;
    double epsilon_;
    int steps_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

// Half-cosine decay from `base` at step 0 to 0 at step `total`:
//   lr(s) = base * 0.5 * (1 + cos(pi s / total)).
double cosine_lr(double base, int step, int total);

struct TrainConfig {
    int batch_size = 32;
    int steps = 3000;
    double learning_rate = 1e-3;  // cosine-decayed to 0 over `steps`
    double cfg_dropout = 0.1;     // probability of training an item unconditionally
    std::uint64_t seed = 0;
};

struct TrainReport {
    // Batch mean of the per-item loss (squared noise error summed over all
    // 144 coordinates), one entry per optimizer step.
    std::vector<double> loss_history;
};

// Denoising-score-matching training over the train-split records.  Items are
// drawn with replacement; each gets its own stream forked from
// (seed, step, slot), so the run is a pure function of (model, corpus,
// config) regardless of how the caller's streams have been consumed.
// Captions condition the model through the text pathway; classifier-free
// dropout inside the loss handles the unconditional branch.  `on_step`, when
// set, is called after every optimizer step with (step index, batch loss).
TrainReport train(ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                  const std::vector<PoseRecord>& corpus, const TrainConfig& config,
                  const std::function<void(int, double)>& on_step = {});

}  // namespace posediff
