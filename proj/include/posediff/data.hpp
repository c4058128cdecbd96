#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "posediff/skeleton.hpp"

namespace posediff {

struct PoseRecord {
    int id = 0;
    std::string split = "train";  // "train" or "test"
    std::optional<std::string> caption;
    Pose pose;
};

// Recipe for the synthetic corpus.  Poses are driven by a low-rank gaussian
// latent pushed through a fixed joint-direction basis, so the corpus has
// correlated structure a small model can actually learn.
struct CorpusSpec {
    int size = 512;
    std::uint64_t seed = 0;
    int latent_rank = 8;  // in [1, 8]; columns beyond the rank are unused
};

// Per-coordinate axis-angle limits (24 joints x 3, radians).  Knees and
// elbows are hinge-dominant: a wide primary axis with tight off-axes.
const std::array<double, 72>& joint_limit_box();

// Structured random pose for record `id` as clamped per-joint axis-angles.
// Deterministic in (spec.seed, id); the direction basis itself is fixed so
// every corpus lives on the same pose manifold.
std::array<double, 72> synth_axis_angles(const CorpusSpec& spec, int id);

// Caption phrases re-derived from thresholds on the axis-angle coordinates,
// joined by commas; a pose that trips none of them reads "neutral".
std::string derive_caption(const std::array<double, 72>& aa);

// Full corpus: poses, captions and the train/test split (every 8th record is
// held out).  Bitwise reproducible for a given spec.
std::vector<PoseRecord> synth_corpus(const CorpusSpec& spec);

// Versioned pose file: a "PDPS1" header line followed by one JSON object per
// record ({id, split, caption?, pose: 144 reals}, full double precision).
void save_poses(const std::vector<PoseRecord>& records, const std::string& path);
std::vector<PoseRecord> load_poses(const std::string& path);

}  // namespace posediff
