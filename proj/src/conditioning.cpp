#include "posediff/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "posediff/denoiser.hpp"
#include "posediff/errors.hpp"

namespace posediff {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const char ch : s) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ULL;
    }
    return h;
}

std::vector<int> tokenize_caption(const std::string& caption) {
    std::vector<int> ids;
    std::string word;
    auto flush = [&] {
        // Trim punctuation so "kneeling," and "kneeling" share a vocabulary
        // row; corpus captions are comma-joined phrase lists.
        size_t b = 0, e = word.size();
        while (b < e && !std::isalnum(static_cast<unsigned char>(word[b]))) ++b;
        while (e > b && !std::isalnum(static_cast<unsigned char>(word[e - 1]))) --e;
        if (e > b) ids.push_back(static_cast<int>(fnv1a64(std::string_view(word).substr(b, e - b)) %
                                                  DenoiserConfig::kVocab));
        word.clear();
    };
    for (const char ch : caption) {
        if (std::isspace(static_cast<unsigned char>(ch)))
            flush();
        else
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    flush();
    return ids;
}

Tensor sinusoidal_embedding(int t, int dim) {
    if (dim <= 0 || dim % 2 != 0) throw ValidationError("sinusoidal_embedding: dim must be positive and even");
    if (t < 0) throw ValidationError("sinusoidal_embedding: t must be non-negative");
    Tensor e({dim});
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / half);
        e[k] = std::sin(t * freq);
        e[half + k] = std::cos(t * freq);
    }
    return e;
}

ConditionInputs cfg_dropout(const ConditionInputs& inputs, double p, RngStream& stream) {
    if (p < 0.0 || p > 1.0) throw ValidationError("cfg_dropout: p must lie in [0,1]");
    const double u = stream.next_unit();  // consumed unconditionally
    if (u < p) return ConditionInputs{};
    return inputs;
}

Var encode_text_graph(Tape& tape, const TapeParams& P, const std::string& caption) {
    const std::vector<int> ids = tokenize_caption(caption);
    if (ids.empty()) throw ValidationError("encode_text_graph: caption has no tokens");
    const Var rows = tape.gather_rows(P["cond.text.table"], ids);
    return tape.reshape(tape.col_mean(rows), {1, tape.value(rows).cols()});
}

Var encode_image_graph(Tape& tape, const TapeParams& P, const ImageFeatureInput& image) {
    // Normalize to [-1, 1]: pixel coordinates against the nominal 1000px
    // canvas, confidences from [0,1].
    Tensor feat({1, DenoiserConfig::kImageFeatureDim});
    for (int k = 0; k < kImageKeypoints; ++k) {
        const auto& kp = image.keypoints[static_cast<size_t>(k)];
        feat.at(0, 3 * k + 0) = std::clamp(kp[0] / 500.0 - 1.0, -1.0, 1.0);
        feat.at(0, 3 * k + 1) = std::clamp(kp[1] / 500.0 - 1.0, -1.0, 1.0);
        feat.at(0, 3 * k + 2) = 2.0 * std::clamp(kp[2], 0.0, 1.0) - 1.0;
    }
    const Var h = tape.gelu(tape.add_row(tape.matmul(tape.constant(feat), P["cond.img.w1"]), P["cond.img.b1"]));
    return tape.add_row(tape.matmul(h, P["cond.img.w2"]), P["cond.img.b2"]);
}

Var time_embed_graph(Tape& tape, const TapeParams& P, int t) {
    const Tensor& w1 = tape.value(P["time.w1"]);
    Tensor enc = sinusoidal_embedding(t, w1.rows());
    const Var e = tape.constant(Tensor({1, w1.rows()}, std::vector<double>(enc.data(), enc.data() + enc.size())));
    const Var h = tape.gelu(tape.add_row(tape.matmul(e, P["time.w1"]), P["time.b1"]));
    return tape.add_row(tape.matmul(h, P["time.w2"]), P["time.b2"]);
}

Var fuse_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, std::optional<Var> text,
               std::optional<Var> image) {
    if (!text.has_value() && !image.has_value())
        throw ValidationError("fuse_graph: at least one modality must be present");
    const int D = config.latent_dim;

    std::vector<Var> seq;
    seq.push_back(tape.reshape(P["cond.cls"], {1, D}));
    if (image.has_value()) seq.push_back(tape.add_row(*image, P["cond.type.img"]));
    if (text.has_value()) seq.push_back(tape.add_row(*text, P["cond.type.text"]));
    Var tokens = tape.concat_rows(seq);

    for (int b = 0; b < DenoiserConfig::kFusionBlocks; ++b) {
        const std::string p = "fuse" + std::to_string(b) + ".";
        const Var n1 = tape.layer_norm_rows(tokens, P[p + "ln1.g"], P[p + "ln1.b"]);
        tokens = tape.add(tokens, multihead_attention(tape, P, p + "attn", config.heads, n1, n1));
        const Var n2 = tape.layer_norm_rows(tokens, P[p + "ln2.g"], P[p + "ln2.b"]);
        const Var h = tape.gelu(tape.add_row(tape.matmul(n2, P[p + "mlp.w1"]), P[p + "mlp.b1"]));
        tokens = tape.add(tokens, tape.add_row(tape.matmul(h, P[p + "mlp.w2"]), P[p + "mlp.b2"]));
    }

    const Var cls = tape.slice_rows(tokens, 0, 1);
    const Var out = tape.add_row(tape.matmul(cls, P["cond.out.w"]), P["cond.out.b"]);
    return tape.add_row(P["cond.queries"], tape.reshape(out, {D}));
}

ContextVars build_context_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config,
                                const ConditionInputs& inputs, int t, bool force_null) {
    const int D = config.latent_dim;
    ContextVars ctx;
    ctx.null = force_null || inputs.empty();
    Var base;
    if (ctx.null) {
        base = tape.repeat_row(P["cond.null"], DenoiserConfig::kContextTokens);
    } else {
        std::optional<Var> ct, ci;
        if (inputs.text.has_value()) ct = encode_text_graph(tape, P, *inputs.text);
        if (inputs.image.has_value()) ci = encode_image_graph(tape, P, *inputs.image);
        base = fuse_graph(tape, P, config, ct, ci);
    }
    const Var temb = time_embed_graph(tape, P, t);
    ctx.tokens = tape.add_row(base, tape.reshape(temb, {D}));
    return ctx;
}

Tensor encode_text(const ModelParams& model, const std::string& caption) {
    Tape tape;
    const TapeParams P(tape, model);
    const Var v = encode_text_graph(tape, P, caption);
    return Tensor({model.config.latent_dim},
                  std::vector<double>(tape.value(v).data(), tape.value(v).data() + tape.value(v).size()));
}

Tensor encode_image(const ModelParams& model, const ImageFeatureInput& image) {
    Tape tape;
    const TapeParams P(tape, model);
    const Var v = encode_image_graph(tape, P, image);
    return Tensor({model.config.latent_dim},
                  std::vector<double>(tape.value(v).data(), tape.value(v).data() + tape.value(v).size()));
}

Tensor build_context(const ModelParams& model, const ConditionInputs& inputs, int t, bool force_null) {
    Tape tape;
    const TapeParams P(tape, model);
    const ContextVars ctx = build_context_graph(tape, P, model.config, inputs, t, force_null);
    return tape.value(ctx.tokens);
}

}  // namespace posediff
