#pragma once

#include "posediff/conditioning.hpp"
#include "posediff/model.hpp"
#include "posediff/skeleton.hpp"
#include "posediff/tape.hpp"

namespace posediff {

// Joint tokens: per-joint projection of the 6D rows plus learned joint
// positional embeddings plus the joint's distance-band group embedding.
// (24, D).  The timestep enters through the context sequence only.
Var embed_tokens_graph(Tape& tape, const TapeParams& P, const KinematicTree& tree, Var z);

// Skeleton-aware self-attention for one block: multi-head attention over the
// 24 joint tokens where each head's logits get an additive bias Phi(d(i,j))
// from a learned MLP over normalized hop distance.  Bare attention output
// (no residual, no layer norm).  (24, D).
Var pose_attention_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, const KinematicTree& tree,
                         int block, Var tokens);

// Cross-attention to the context sequence, pre-norm with the residual folded
// in: tokens + MHA(LN(tokens) -> q, context -> k,v).  (24, D).
Var cross_attend_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, int block, Var tokens,
                       Var context);

// Full denoiser: predicts the noise component of z_t.  (24, 6).
Var denoise_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, const KinematicTree& tree, Var z,
                  int t, const ContextVars& context);

// Value-level forward pass on a private tape (single context path; guidance
// and CFG mixing live in the diffusion module).
Tensor denoise(const ModelParams& model, const KinematicTree& tree, const Tensor& z, int t,
               const ConditionInputs& inputs, bool force_null = false);

// Shared multi-head attention helper (also used by the conditioning fuser).
// Weight names are resolved as <prefix>.{wq,bq,wk,bk,wv,bv,wo,bo}; head_bias,
// when present, supplies one (nq, nk) additive logit bias per head.
Var multihead_attention(Tape& tape, const TapeParams& P, const std::string& prefix, int heads, Var queries_in,
                        Var keys_values_in, const std::vector<Var>* head_bias = nullptr);

}  // namespace posediff
