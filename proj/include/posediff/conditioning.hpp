#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "posediff/model.hpp"
#include "posediff/rng.hpp"
#include "posediff/tape.hpp"

namespace posediff {

// Keypoint evidence fed to the image-branch encoder: 21 detections covering
// the body joints without the global root and the hands (joints 1..21),
// each as (u, v, confidence) with confidence in [0, 1].
constexpr int kImageKeypoints = 21;
struct ImageFeatureInput {
    std::array<std::array<double, 3>, kImageKeypoints> keypoints{};
};

// Optional conditioning evidence for one sample.  Empty means unconditional.
struct ConditionInputs {
    std::optional<std::string> text;
    std::optional<ImageFeatureInput> image;
    bool empty() const { return !text.has_value() && !image.has_value(); }
};

// FNV-1a 64-bit over the bytes of a token.
std::uint64_t fnv1a64(std::string_view s);
// Lowercases, splits on whitespace, hashes each word into the 4096-row
// embedding vocabulary.  Empty captions produce no tokens.
std::vector<int> tokenize_caption(const std::string& caption);

// Sinusoidal timestep encoding of width dim (dim even): interleaved
// [sin(t*w_k); cos(t*w_k)] halves with log-spaced frequencies.
Tensor sinusoidal_embedding(int t, int dim);

// Classifier-free guidance dropout: with probability p the evidence collapses
// to the unconditional (null) context.  Always consumes exactly one uniform
// draw so training randomness stays aligned across items.
ConditionInputs cfg_dropout(const ConditionInputs& inputs, double p, RngStream& stream);

// --- tape-side encoders -----------------------------------------------------
// Mean-pooled hashed word embeddings, (1, D).  Throws ValidationError on
// captions with no tokens.
Var encode_text_graph(Tape& tape, const TapeParams& P, const std::string& caption);
// Keypoints normalized to [-1,1] on the nominal 1000px canvas, then a 2-layer
// MLP, (1, D).
Var encode_image_graph(Tape& tape, const TapeParams& P, const ImageFeatureInput& image);
// Sinusoidal encoding through the 2-layer time MLP, (1, D).
Var time_embed_graph(Tape& tape, const TapeParams& P, int t);

// Fuses the present modality vectors (each (1, D)) into the 21-token context
// via a small transformer over [CLS, modalities...]; the timestep embedding
// is NOT added here.  At least one modality must be present.
Var fuse_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, std::optional<Var> text,
               std::optional<Var> image);

// Final context sequence consumed by the denoiser: fused evidence (or the
// learned null embedding when empty/forced) plus the timestep embedding added
// to every token.  (21, D).
struct ContextVars {
    Var tokens;
    bool null = false;
};
ContextVars build_context_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config,
                                const ConditionInputs& inputs, int t, bool force_null = false);

// --- value-level wrappers (run a private tape) ------------------------------
Tensor encode_text(const ModelParams& model, const std::string& caption);        // (D)
Tensor encode_image(const ModelParams& model, const ImageFeatureInput& image);   // (D)
// Full context including the timestep term, (21, D).
Tensor build_context(const ModelParams& model, const ConditionInputs& inputs, int t, bool force_null = false);

}  // namespace posediff
