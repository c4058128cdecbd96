#include "posediff/denoiser.hpp"

#include <cmath>

#include "posediff/errors.hpp"

namespace posediff {

Var multihead_attention(Tape& tape, const TapeParams& P, const std::string& prefix, int heads, Var queries_in,
                        Var keys_values_in, const std::vector<Var>* head_bias) {
    const Var q = tape.add_row(tape.matmul(queries_in, P[prefix + ".wq"]), P[prefix + ".bq"]);
    const Var k = tape.add_row(tape.matmul(keys_values_in, P[prefix + ".wk"]), P[prefix + ".bk"]);
    const Var v = tape.add_row(tape.matmul(keys_values_in, P[prefix + ".wv"]), P[prefix + ".bv"]);
    const int D = tape.value(q).cols();
    if (D % heads != 0) throw ValidationError("multihead_attention: heads must divide width");
    const int d = D / heads;
    if (head_bias && static_cast<int>(head_bias->size()) != heads)
        throw ValidationError("multihead_attention: need one bias per head");

    std::vector<Var> mixed;
    mixed.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Var qh = tape.slice_cols(q, h * d, (h + 1) * d);
        const Var kh = tape.slice_cols(k, h * d, (h + 1) * d);
        const Var vh = tape.slice_cols(v, h * d, (h + 1) * d);
        Var logits = tape.scale(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(d)));
        if (head_bias) logits = tape.add(logits, (*head_bias)[static_cast<size_t>(h)]);
        mixed.push_back(tape.matmul(tape.softmax_rows(logits), vh));
    }
    return tape.add_row(tape.matmul(tape.concat_cols(mixed), P[prefix + ".wo"]), P[prefix + ".bo"]);
}

Var embed_tokens_graph(Tape& tape, const TapeParams& P, const KinematicTree& tree, Var z) {
    const Tensor& zv = tape.value(z);
    if (zv.rank() != 2 || zv.rows() != kJointCount || zv.cols() != 6)
        throw ShapeError("embed_tokens_graph: expected (24,6), got " + zv.shape_str());
    std::vector<int> groups(kJointCount);
    for (int j = 0; j < kJointCount; ++j) groups[static_cast<size_t>(j)] = joint_group(tree, j);
    const Var proj = tape.add_row(tape.matmul(z, P["embed.proj.w"]), P["embed.proj.b"]);
    return tape.add(tape.add(proj, P["embed.pos"]), tape.gather_rows(P["embed.group"], groups));
}

Var pose_attention_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, const KinematicTree& tree,
                         int block, Var tokens) {
    const std::string p = "blk" + std::to_string(block) + ".";

    // Phi evaluated once per distinct hop count, then scattered to the 24x24
    // pairwise table per head.
    const int n_dist = tree.max_hops + 1;
    Tensor dvals({n_dist, 1});
    for (int d = 0; d < n_dist; ++d) dvals.at(d, 0) = static_cast<double>(d) / tree.max_hops;
    const Var phi_h = tape.gelu(tape.add_row(tape.matmul(tape.constant(dvals), P[p + "phi.w1"]), P[p + "phi.b1"]));
    const Var phi = tape.add_row(tape.matmul(phi_h, P[p + "phi.w2"]), P[p + "phi.b2"]);  // (n_dist, H)

    std::vector<int> pair_idx(static_cast<size_t>(kJointCount) * kJointCount);
    for (int i = 0; i < kJointCount; ++i)
        for (int j = 0; j < kJointCount; ++j)
            pair_idx[static_cast<size_t>(i * kJointCount + j)] = skeletal_distance(tree, i, j);
    const Var gathered = tape.gather_rows(phi, pair_idx);  // (576, H)

    std::vector<Var> bias;
    bias.reserve(static_cast<size_t>(config.heads));
    for (int h = 0; h < config.heads; ++h)
        bias.push_back(tape.reshape(tape.slice_cols(gathered, h, h + 1), {kJointCount, kJointCount}));

    return multihead_attention(tape, P, p + "attn", config.heads, tokens, tokens, &bias);
}

Var cross_attend_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, int block, Var tokens,
                       Var context) {
    const std::string p = "blk" + std::to_string(block) + ".";
    const Var n = tape.layer_norm_rows(tokens, P[p + "ln2.g"], P[p + "ln2.b"]);
    return tape.add(tokens, multihead_attention(tape, P, p + "cross", config.heads, n, context));
}

Var denoise_graph(Tape& tape, const TapeParams& P, const DenoiserConfig& config, const KinematicTree& tree, Var z,
                  int t, const ContextVars& context) {
    if (t < 0) throw ValidationError("denoise_graph: timestep must be non-negative");
    (void)t;  // the timestep reaches the network through the context tokens
    Var tok = embed_tokens_graph(tape, P, tree, z);
    for (int b = 0; b < config.blocks; ++b) {
        const std::string p = "blk" + std::to_string(b) + ".";
        const Var n1 = tape.layer_norm_rows(tok, P[p + "ln1.g"], P[p + "ln1.b"]);
        tok = tape.add(tok, pose_attention_graph(tape, P, config, tree, b, n1));
        tok = cross_attend_graph(tape, P, config, b, tok, context.tokens);
        const Var n3 = tape.layer_norm_rows(tok, P[p + "ln3.g"], P[p + "ln3.b"]);
        const Var h = tape.gelu(tape.add_row(tape.matmul(n3, P[p + "mlp.w1"]), P[p + "mlp.b1"]));
        tok = tape.add(tok, tape.add_row(tape.matmul(h, P[p + "mlp.w2"]), P[p + "mlp.b2"]));
    }
    const Var fin = tape.layer_norm_rows(tok, P["final.ln.g"], P["final.ln.b"]);
    return tape.add_row(tape.matmul(fin, P["head.w"]), P["head.b"]);
}

Tensor denoise(const ModelParams& model, const KinematicTree& tree, const Tensor& z, int t,
               const ConditionInputs& inputs, bool force_null) {
    Tape tape;
    const TapeParams P(tape, model);
    const ContextVars ctx = build_context_graph(tape, P, model.config, inputs, t, force_null);
    Tensor zz = z;
    if (zz.rank() == 1) zz = Tensor({kJointCount, 6}, std::vector<double>(z.data(), z.data() + z.size()));
    const Var out = denoise_graph(tape, P, model.config, tree, tape.input(zz), t, ctx);
    return tape.value(out);
}

}  // namespace posediff
