#pragma once

// One flat run configuration, `section.key = value` per line. Every module
// config lives here so a single digest identifies a run.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rgr/datagen.hpp"
#include "rgr/inference.hpp"
#include "rgr/neural_core.hpp"
#include "rgr/serving_sim.hpp"
#include "rgr/sid_tokenizer.hpp"
#include "rgr/trainer.hpp"

namespace rgr {

struct EvalConfig {
  std::vector<int> ks{20, 100};
  int replicates = 5;  // training seeds per variant
  std::vector<Variant> variants{Variant::kFull, Variant::kNoIap, Variant::kNoRsp, Variant::kNoBoth};
  std::vector<double> alpha_values{0.0, 0.5, 1.0, 2.0, 4.0};
  std::vector<int> lambda2_values{4, 8, 16, 32, 64};
  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 7;  // master seed; every stream derives from it
  WorldConfig world;
  KMeansOptions tokenizer;
  ModelConfig model;
  TrainConfig train;
  BeamOptions retrieval;
  EvalConfig eval;
  SimConfig serving;

  // Applies one key; unknown keys and malformed values raise InvalidConfig.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static std::vector<std::string> keys();

  void validate() const;
  // Sorted `key = value` lines covering every key.
  std::string canonical() const;
  std::string digest() const;

  std::uint64_t world_seed() const;
  std::uint64_t tokenizer_seed() const;
  std::uint64_t train_seed(int replicate) const;
  std::uint64_t serving_seed() const;

  // World config with its seed resolved from the master seed.
  WorldConfig resolved_world() const;
  SimConfig resolved_serving() const;
};

// Parses `key = value` lines; '#' starts a comment. Later keys override
// earlier ones.
RunConfig parse_config(std::istream& in, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

}  // namespace rgr
