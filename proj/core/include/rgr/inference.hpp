#pragma once

// Two-stage decoding: generative top-lambda filtering per level, rank-head
// rescoring, per-level beam widths, corpus filtering at the end.

#include <cstdint>
#include <string_view>
#include <vector>

#include "rgr/neural_core.hpp"
#include "rgr/rsp.hpp"
#include "rgr/sid_tokenizer.hpp"

namespace rgr {

enum class RankMode {
  kRsp,      // sum of log s (default)
  kFuse,     // sum of log s + sum of log p
  kIapOnly,  // sum of log p, rank head unused
};

std::string_view rank_mode_name(RankMode mode);  // "rsp", "fuse", "iap"
RankMode parse_rank_mode(std::string_view name);

struct BeamCandidate {
  std::vector<int> prefix;
  double rsp_logscore = 0;
  double iap_logscore = 0;
};

struct RetrievedItem {
  std::int64_t item_id = 0;
  SemanticId sid;
  double rsp_logscore = 0;
  double iap_logscore = 0;
};

struct RetrievalResult {
  std::vector<RetrievedItem> items;

  std::vector<std::int64_t> item_ids() const;
};

struct BeamOptions {
  std::vector<int> lambdas{32, 64};
  std::vector<int> beams{16, 256};
  double temperature = 1.0;
  RankMode mode = RankMode::kRsp;
  bool constrain_to_corpus = false;  // prune prefixes absent from the SID trie
};

// Ranking key for a candidate under `mode`.
double rank_key(const BeamCandidate& c, RankMode mode);

// Strict ordering used everywhere: key desc, then iap desc, then prefix asc.
bool ranks_before(const BeamCandidate& a, const BeamCandidate& b, RankMode mode);

template <typename T>
RetrievalResult beam_search(const std::vector<SemanticId>& history, const Backbone<T>& model,
                            const RankHead<T>* head, const SidIndex& corpus,
                            const BeamOptions& options);

// Scores every corpus SID with one causal forward per prefix.
template <typename T>
RetrievalResult brute_force_rank(const std::vector<SemanticId>& history, const Backbone<T>& model,
                                 const RankHead<T>* head, const SidIndex& corpus,
                                 double temperature = 1.0, RankMode mode = RankMode::kRsp);

// Beam search ranked by the generative scores alone; each prefix expands its
// top-min(B_l, V_l) codes.
template <typename T>
RetrievalResult iap_only_rank(const std::vector<SemanticId>& history, const Backbone<T>& model,
                              const SidIndex& corpus, const std::vector<int>& beams,
                              double temperature = 1.0);

}  // namespace rgr
