#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "posediff/model.hpp"
#include "posediff/trainer.hpp"

namespace posediff {

struct RunPaths {
    std::string corpus = "out/corpus.poses";
    std::string checkpoint = "out/model.ckpt";
    std::string output = "out";  // directory for everything a command emits
};

struct DataConfig {
    int size = 512;
    int latent_rank = 8;
};

// One run's worth of configuration, shared by every CLI command.  The JSON
// form mirrors the struct:
//   { "seed": 0,
//     "model":    { "latent_dim": 64, "blocks": 4, "heads": 4 },
//     "schedule": { "timesteps": 1000 },
//     "training": { "batch_size": 32, "steps": 3000,
//                   "learning_rate": 1e-3, "cfg_dropout": 0.1 },
//     "data":     { "size": 512, "latent_rank": 8 },
//     "paths":    { "corpus": ..., "checkpoint": ..., "output": ... } }
// Absent keys keep their defaults; unknown keys are rejected so typos cannot
// silently fall back to defaults.  TrainConfig's own seed field is not part
// of the file format: the run seed feeds every command.
struct RunConfig {
    std::uint64_t seed = 0;
    DenoiserConfig model;
    int timesteps = 1000;
    TrainConfig training;
    DataConfig data;
    RunPaths paths;
};

// Canonical pretty-printed JSON (sorted keys, round-trips exactly).
std::string config_to_json(const RunConfig& config);

// Strict parse of the JSON form.  Malformed JSON raises FormatError naming
// line and column; unknown keys and wrong types are FormatErrors naming the
// key path; out-of-range values are ValidationErrors.
RunConfig config_from_json(const std::string& text);

// config_from_json over a file's contents; errors name the path.
RunConfig load_config(const std::string& path);

// `--training.steps 500`-style dot-path overrides applied to the JSON form.
// Every path must name an existing scalar leaf; values must parse to the
// leaf's type (anything unparseable stays a string, which only string leaves
// accept).
RunConfig apply_overrides(const RunConfig& base,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

// FNV-1a 64 over the canonical JSON, 16 lowercase hex characters.  Two
// configs hash equal iff every field matches.
std::string config_hash(const RunConfig& config);

}  // namespace posediff
