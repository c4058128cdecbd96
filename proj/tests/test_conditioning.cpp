#include <doctest.h>

#include <algorithm>

#include "posediff/conditioning.hpp"
#include "posediff/errors.hpp"
#include "posediff/rng.hpp"

using namespace posediff;

namespace {

ModelParams small_model(std::uint64_t seed = 3) {
    DenoiserConfig c;
    c.latent_dim = 32;
    c.blocks = 2;
    c.heads = 2;
    RngStream rng(seed);
    return init_model(c, rng);
}

}  // namespace

TEST_SUITE("conditioning") {
    TEST_CASE("fnv1a64 matches published reference values") {
        CHECK(fnv1a64("") == 14695981039346656037ULL);
        CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
        CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    }

    TEST_CASE("caption tokenization lowercases, splits and hashes") {
        const auto ids = tokenize_caption("  Kneeling\twith ARMS   raised\n");
        REQUIRE(ids.size() == 4);
        for (int id : ids) {
            CHECK(id >= 0);
            CHECK(id < DenoiserConfig::kVocab);
        }
        CHECK(ids == tokenize_caption("kneeling with arms raised"));
        CHECK(ids[0] == static_cast<int>(fnv1a64("kneeling") % DenoiserConfig::kVocab));
        CHECK(tokenize_caption("").empty());
        CHECK(tokenize_caption("   \n\t ").empty());
        // Comma-joined phrase lists must hit the same vocabulary rows as the
        // bare words.
        CHECK(tokenize_caption("kneeling, arms bent") == tokenize_caption("kneeling arms bent"));
        CHECK(tokenize_caption("(kneeling!)") == tokenize_caption("kneeling"));
        CHECK(tokenize_caption(", . !").empty());
    }

    TEST_CASE("sinusoidal embedding basics") {
        const Tensor e = sinusoidal_embedding(0, 8);
        for (int k = 0; k < 4; ++k) {
            CHECK(e[k] == 0.0);      // sin(0)
            CHECK(e[4 + k] == 1.0);  // cos(0)
        }
        const Tensor e2 = sinusoidal_embedding(917, 64);
        for (std::int64_t i = 0; i < e2.size(); ++i) {
            CHECK(e2[i] >= -1.0);
            CHECK(e2[i] <= 1.0);
        }
        CHECK_THROWS_AS(sinusoidal_embedding(5, 7), ValidationError);
        CHECK_THROWS_AS(sinusoidal_embedding(-1, 8), ValidationError);
    }

    TEST_CASE("cfg_dropout honors p and always consumes one draw") {
        ConditionInputs in;
        in.text = "standing";
        RngStream s(5);
        for (int i = 0; i < 20; ++i) {
            const auto c0 = s.counter();
            const ConditionInputs out = cfg_dropout(in, 0.0, s);
            CHECK(s.counter() == c0 + 1);
            CHECK_FALSE(out.empty());
        }
        for (int i = 0; i < 20; ++i) CHECK(cfg_dropout(in, 1.0, s).empty());
        // At p = 0.5 the drop decision replays deterministically per stream.
        RngStream a(77), b(77);
        for (int i = 0; i < 50; ++i) CHECK(cfg_dropout(in, 0.5, a).empty() == cfg_dropout(in, 0.5, b).empty());
        CHECK_THROWS_AS(cfg_dropout(in, 1.5, s), ValidationError);
    }

    TEST_CASE("text encoding pools hashed word embeddings") {
        const ModelParams m = small_model();
        const Tensor c1 = encode_text(m, "kneeling fast");
        CHECK(c1.dim(0) == m.config.latent_dim);
        // Mean pooling makes word order irrelevant...
        const Tensor c2 = encode_text(m, "fast kneeling");
        for (std::int64_t i = 0; i < c1.size(); ++i) CHECK(c1[i] == doctest::Approx(c2[i]).epsilon(1e-12));
        // ...but different words change the code.
        const Tensor c3 = encode_text(m, "standing still");
        double diff = 0;
        for (std::int64_t i = 0; i < c1.size(); ++i) diff += std::abs(c1[i] - c3[i]);
        CHECK(diff > 1e-8);
        // A single word equals its table row exactly.
        const Tensor one = encode_text(m, "Kneeling");
        const int row = static_cast<int>(fnv1a64("kneeling") % DenoiserConfig::kVocab);
        for (int i = 0; i < m.config.latent_dim; ++i) CHECK(one[i] == m.store.value("cond.text.table").at(row, i));

        CHECK_THROWS_AS(encode_text(m, "   "), ValidationError);
    }

    TEST_CASE("image encoding is deterministic and bounded-input") {
        const ModelParams m = small_model();
        ImageFeatureInput img;
        RngStream rng(8);
        for (auto& kp : img.keypoints) {
            kp[0] = rng.next_unit() * 1000;
            kp[1] = rng.next_unit() * 1000;
            kp[2] = rng.next_unit();
        }
        const Tensor a = encode_image(m, img);
        const Tensor b = encode_image(m, img);
        CHECK(a.dim(0) == m.config.latent_dim);
        for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
        // Off-canvas coordinates are clamped, not amplified.
        ImageFeatureInput wild = img;
        wild.keypoints[0][0] = 1e9;
        wild.keypoints[0][2] = 42.0;
        const Tensor c = encode_image(m, wild);
        CHECK(c.all_finite());
    }

    TEST_CASE("context assembly: shape, null path and timestep injection") {
        const ModelParams m = small_model();
        ConditionInputs text_in;
        text_in.text = "kneeling";

        const Tensor ctx = build_context(m, text_in, 100);
        CHECK(ctx.rows() == DenoiserConfig::kContextTokens);
        CHECK(ctx.cols() == m.config.latent_dim);

        // Empty evidence and force_null produce the identical null context.
        const Tensor null_a = build_context(m, ConditionInputs{}, 100);
        const Tensor null_b = build_context(m, text_in, 100, /*force_null=*/true);
        for (std::int64_t i = 0; i < null_a.size(); ++i) CHECK(null_a[i] == null_b[i]);

        // The null path is the broadcast null embedding plus the time term:
        // all rows are identical.
        for (int r = 1; r < null_a.rows(); ++r)
            for (int c = 0; c < null_a.cols(); ++c) CHECK(null_a.at(r, c) == null_a.at(0, c));

        // Conditional differs from null, and the timestep matters.
        double d1 = 0, d2 = 0;
        const Tensor ctx_t2 = build_context(m, text_in, 101);
        for (std::int64_t i = 0; i < ctx.size(); ++i) {
            d1 += std::abs(ctx[i] - null_a[i]);
            d2 += std::abs(ctx[i] - ctx_t2[i]);
        }
        CHECK(d1 > 1e-6);
        CHECK(d2 > 1e-6);

        // Joint text+image evidence also fuses fine.
        ConditionInputs both = text_in;
        both.image = ImageFeatureInput{};
        const Tensor ctx_both = build_context(m, both, 100);
        CHECK(ctx_both.all_finite());
        double d3 = 0;
        for (std::int64_t i = 0; i < ctx.size(); ++i) d3 += std::abs(ctx_both[i] - ctx[i]);
        CHECK(d3 > 1e-6);
    }
}
