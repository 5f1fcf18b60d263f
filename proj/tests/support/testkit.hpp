#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/rsp.hpp"
#include "rgr/training_objectives.hpp"

namespace rgr::testkit {

ModelConfig tiny_config(std::vector<int> vocab = {4, 6}, int d_model = 8, int n_layers = 1,
                        int n_heads = 2, int max_seq_len = 64);

SemanticId random_sid(std::mt19937_64& rng, const ModelConfig& cfg);

// counts[k - 1] items in G_k.
SessionSample random_sample(std::mt19937_64& rng, const ModelConfig& cfg, int history,
                            std::array<int, kTierCount> counts);

// Fills every parameter with N(0, scale^2).
template <typename T>
void randomize(ParameterSet<T>& params, std::mt19937_64& rng, double scale);

// Loss graph over bound parameters; head and head_binding are null for
// backbone-only losses.
using LossFn = std::function<ad::Var<double>(ad::Tape<double>&, const Backbone<double>&,
                                             const Binding<double>&, const RankHead<double>*,
                                             const Binding<double>*)>;

struct GradCheck {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // parameter name and flat index of the worst entry
};

// Central differences over every scalar of both parameter sets. Relative
// error per entry is |a - n| / max(|a|, |n|, floor).
GradCheck check_gradients(Backbone<double>& backbone, RankHead<double>* head, const LossFn& loss,
                          double h = 1e-5, double floor = 1e-6);

double loss_value(const Backbone<double>& backbone, const RankHead<double>* head, const LossFn& loss);

// Tokens of a BOS + history sequence.
std::vector<int> history_tokens(const ModelConfig& cfg, const std::vector<SemanticId>& history);

}  // namespace rgr::testkit
