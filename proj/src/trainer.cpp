#include "posediff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "posediff/errors.hpp"

namespace posediff {

AdamOptimizer::AdamOptimizer(const ParamStore& store, double beta1, double beta2, double epsilon)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw ValidationError("AdamOptimizer: betas must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw ValidationError("AdamOptimizer: epsilon must be > 0");
    m_.reserve(static_cast<size_t>(store.count()));
    v_.reserve(static_cast<size_t>(store.count()));
    for (int i = 0; i < store.count(); ++i) {
        m_.push_back(Tensor::zeros(store.value(i).shape()));
        v_.push_back(Tensor::zeros(store.value(i).shape()));
    }
}

void AdamOptimizer::step(ParamStore& store, double learning_rate) {
    if (store.count() != static_cast<int>(m_.size()))
        throw ValidationError("AdamOptimizer: store has " + std::to_string(store.count()) +
                              " tensors, optimizer was built for " + std::to_string(m_.size()));
    if (!std::isfinite(learning_rate) || learning_rate < 0.0)
        throw ValidationError("AdamOptimizer: learning rate must be finite and >= 0");
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, steps_);
    const double bc2 = 1.0 - std::pow(beta2_, steps_);
    for (int i = 0; i < store.count(); ++i) {
        Tensor& value = store.value(i);
        const Tensor& grad = store.grad(i);
        Tensor& m = m_[static_cast<size_t>(i)];
        Tensor& v = v_[static_cast<size_t>(i)];
        if (!grad.same_shape(value))
            throw ValidationError("AdamOptimizer: gradient shape mismatch for " + store.name(i));
        for (std::int64_t k = 0; k < value.size(); ++k) {
            const double g = grad[k];
            if (!std::isfinite(g)) throw NumericError("AdamOptimizer: non-finite gradient in " + store.name(i));
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
            value[k] -= learning_rate * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + epsilon_);
        }
    }
}

double cosine_lr(double base, int step, int total) {
    if (total <= 0) throw ValidationError("cosine_lr: total steps must be >= 1");
    if (step < 0 || step > total) throw ValidationError("cosine_lr: step outside [0, total]");
    constexpr double kPi = 3.14159265358979323846;
    return base * 0.5 * (1.0 + std::cos(kPi * static_cast<double>(step) / static_cast<double>(total)));
}

TrainReport train(ModelParams& model, const KinematicTree& tree, const DiffusionSchedule& sched,
                  const std::vector<PoseRecord>& corpus, const TrainConfig& config,
                  const std::function<void(int, double)>& on_step) {
    if (config.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (config.steps < 0) throw ValidationError("train: steps must be >= 0");
    if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate))
        throw ValidationError("train: learning rate must be finite and > 0");
    if (!(config.cfg_dropout >= 0.0 && config.cfg_dropout <= 1.0))
        throw ValidationError("train: cfg_dropout must lie in [0, 1]");

    std::vector<const PoseRecord*> pool;
    for (const PoseRecord& rec : corpus)
        if (rec.split == "train") pool.push_back(&rec);
    if (pool.empty()) throw ValidationError("train: corpus has no train-split records");

    AdamOptimizer adam(model.store);
    const RngStream root(config.seed);
    TrainReport report;
    report.loss_history.reserve(static_cast<size_t>(config.steps));

    for (int s = 0; s < config.steps; ++s) {
        model.store.zero_grads();
        const RngStream step_stream = root.child(static_cast<std::uint64_t>(s));
        double batch_loss = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            RngStream item = step_stream.child(static_cast<std::uint64_t>(b));
            const auto pick = std::min(static_cast<size_t>(item.next_unit() * static_cast<double>(pool.size())),
                                       pool.size() - 1);
            const PoseRecord& rec = *pool[pick];
            ConditionInputs cond;
            if (rec.caption) cond.text = *rec.caption;
            Tape tape;
            TapeParams params(tape, model);
            const Var loss = training_loss_graph(tape, params, sched, tree, pose_to_tensor(rec.pose), cond,
                                                 config.cfg_dropout, item);
            tape.backward(loss);
            batch_loss += tape.value(loss).item();
            for (int i = 0; i < model.store.count(); ++i) {
                const Tensor& g = tape.grad(params.at(i));
                Tensor& acc = model.store.grad(i);
                for (std::int64_t k = 0; k < g.size(); ++k) acc[k] += g[k];
            }
        }
        const double scale = 1.0 / static_cast<double>(config.batch_size);
        for (int i = 0; i < model.store.count(); ++i) {
            Tensor& acc = model.store.grad(i);
            for (std::int64_t k = 0; k < acc.size(); ++k) acc[k] *= scale;
        }
        adam.step(model.store, cosine_lr(config.learning_rate, s, config.steps));
        report.loss_history.push_back(batch_loss * scale);
        if (on_step) on_step(s, report.loss_history.back());
    }
    return report;
}

}  // namespace posediff
