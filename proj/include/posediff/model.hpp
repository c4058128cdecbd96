#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "posediff/rng.hpp"
#include "posediff/tape.hpp"
#include "posediff/tensor.hpp"

namespace posediff {

// Architecture hyperparameters of the denoiser + conditioning stack.
struct DenoiserConfig {
    int latent_dim = 64;  // token width D
    int blocks = 4;       // denoiser transformer depth
    int heads = 4;        // attention heads (D must divide evenly)

    static constexpr int kContextTokens = 21;   // conditioning sequence length
    static constexpr int kFusionBlocks = 2;     // depth of the context fuser
    static constexpr int kVocab = 4096;         // hashed text vocabulary
    static constexpr int kImageFeatureDim = 63; // 21 keypoints x (u,v,conf)
    static constexpr int kPhiHidden = 16;       // distance-bias MLP width

    int head_dim() const;  // latent_dim / heads, validated
    int mlp_dim() const { return 4 * latent_dim; }

    bool operator==(const DenoiserConfig&) const = default;
};

// Flat registry of named parameter tensors with parallel gradient buffers.
// Order is insertion order and is part of the model's identity: tape
// bindings, checkpoints and the optimizer all walk it by index.
class ParamStore {
  public:
    int add(std::string name, Tensor init);
    int count() const { return static_cast<int>(values_.size()); }
    std::int64_t scalar_count() const;

    int index_of(const std::string& name) const;  // -1 when absent
    const std::string& name(int i) const { return names_[static_cast<size_t>(i)]; }

    Tensor& value(int i) { return values_[static_cast<size_t>(i)]; }
    const Tensor& value(int i) const { return values_[static_cast<size_t>(i)]; }
    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;

    Tensor& grad(int i) { return grads_[static_cast<size_t>(i)]; }
    const Tensor& grad(int i) const { return grads_[static_cast<size_t>(i)]; }
    void zero_grads();

  private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
    std::unordered_map<std::string, int> index_;
};

struct ModelParams {
    DenoiserConfig config;
    ParamStore store;
};

// All parameter tensors for the config, zero-valued (defines names/shapes).
ModelParams build_model(const DenoiserConfig& config);
// Random initialization: linear weights scaled by 1/sqrt(fan_in), embeddings
// N(0, 0.02^2), layer-norm gains 1, biases 0.
ModelParams init_model(const DenoiserConfig& config, RngStream& stream);

// Binds every parameter as a differentiable tape input, in store order.
class TapeParams {
  public:
    TapeParams(Tape& tape, const ModelParams& model);
    Var operator[](const std::string& name) const;  // throws ValidationError on unknown names
    Var at(int index) const { return vars_[static_cast<size_t>(index)]; }
    int count() const { return static_cast<int>(vars_.size()); }
    const ModelParams& model() const { return *model_; }

  private:
    const ModelParams* model_;
    std::vector<Var> vars_;
};

// Checkpoint container, little-endian throughout:
//   "PDCK" | u32 version=1 | u32 json_len | config JSON | u32 record_count |
//   records: u32 name_len | name | u32 rank | u32 dims[rank] | f64 data[]
// Loading validates the magic, version, config and the exact set of record
// names/shapes against build_model(config); any mismatch raises FormatError.
void save_checkpoint(const std::string& path, const ModelParams& model);
ModelParams load_checkpoint(const std::string& path);

}  // namespace posediff
