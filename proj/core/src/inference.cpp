#include "rgr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "rgr/error.hpp"

namespace rgr {

std::vector<std::int64_t> RetrievalResult::item_ids() const {
  std::vector<std::int64_t> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.item_id);
  return out;
}

std::string_view rank_mode_name(RankMode mode) {
  switch (mode) {
    case RankMode::kRsp: return "rsp";
    case RankMode::kFuse: return "fuse";
    case RankMode::kIapOnly: return "iap";
  }
  return "rsp";
}

RankMode parse_rank_mode(std::string_view name) {
  if (name == "rsp") return RankMode::kRsp;
  if (name == "fuse") return RankMode::kFuse;
  if (name == "iap") return RankMode::kIapOnly;
  fail(ErrorCode::kInvalidConfig, "unknown rank mode '" + std::string(name) + "'");
}

double rank_key(const BeamCandidate& c, RankMode mode) {
  switch (mode) {
    case RankMode::kRsp: return c.rsp_logscore;
    case RankMode::kFuse: return c.rsp_logscore + c.iap_logscore;
    case RankMode::kIapOnly: return c.iap_logscore;
  }
  return c.rsp_logscore;
}

bool ranks_before(const BeamCandidate& a, const BeamCandidate& b, RankMode mode) {
  double ka = rank_key(a, mode);
  double kb = rank_key(b, mode);
  if (ka != kb) return ka > kb;
  if (a.iap_logscore != b.iap_logscore) return a.iap_logscore > b.iap_logscore;
  return a.prefix < b.prefix;
}

namespace {

std::vector<int> history_tokens(const std::vector<SemanticId>& history, const ModelConfig& cfg) {
  require(!history.empty(), ErrorCode::kEmptyHistory, "retrieval: history must be non-empty");
  std::vector<int> tokens{ModelConfig::kBos};
  for (const auto& sid : history) {
    require(sid.levels() == cfg.levels(), ErrorCode::kDimensionError,
            "retrieval: history SID has wrong length");
    for (int l = 0; l < cfg.levels(); ++l) {
      require(sid[l] >= 0 && sid[l] < cfg.vocab_sizes[static_cast<std::size_t>(l)],
              ErrorCode::kInvalidArgument, "retrieval: history code out of range");
      tokens.push_back(cfg.token(l, sid[l]));
    }
  }
  return tokens;
}

// Hidden state that predicts the next level of one beam, plus the rows it may
// attend to.
template <typename T>
struct BeamState {
  RowVector<T> hidden;
  Matrix<T> visible;
};

// Runs every beam prefix of length `level` as its own block-masked span after
// the shared history, chunked to respect max_seq_len.
template <typename T>
std::vector<BeamState<T>> beam_states(const Backbone<T>& model, const std::vector<int>& prefix,
                                      const std::vector<BeamCandidate>& beams, int level) {
  const ModelConfig& cfg = model.config();
  const int p = static_cast<int>(prefix.size());
  std::vector<BeamState<T>> out(beams.size());
  if (level == 0) {
    std::vector<int> positions(prefix.size());
    for (int i = 0; i < p; ++i) positions[static_cast<std::size_t>(i)] = i;
    Matrix<T> h = hidden_states(model, prefix, positions, AttentionMask::causal(p));
    for (auto& s : out) {
      s.hidden = h.row(p - 1);
      s.visible = h;
    }
    return out;
  }
  require(p + level <= cfg.max_seq_len, ErrorCode::kLengthError,
          "retrieval: history too long for max_seq_len");
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, (cfg.max_seq_len - p) / level));
  for (std::size_t start = 0; start < beams.size(); start += chunk) {
    const std::size_t stop = std::min(beams.size(), start + chunk);
    std::vector<int> tokens = prefix;
    std::vector<int> positions(prefix.size());
    for (int i = 0; i < p; ++i) positions[static_cast<std::size_t>(i)] = i;
    for (std::size_t b = start; b < stop; ++b) {
      for (int l = 0; l < level; ++l) {
        tokens.push_back(cfg.token(l, beams[b].prefix[static_cast<std::size_t>(l)]));
        positions.push_back(p + l);
      }
    }
    const int n = static_cast<int>(tokens.size());
    AttentionMask mask(n);
    for (int i = 0; i < n; ++i) {
      const int span_i = i < p ? -1 : (i - p) / level;
      for (int j = 0; j <= i; ++j) {
        const int span_j = j < p ? -1 : (j - p) / level;
        if (span_j < 0 || span_j == span_i) mask.set(i, j, true);
      }
    }
    Matrix<T> h = hidden_states(model, tokens, positions, mask);
    for (std::size_t b = start; b < stop; ++b) {
      const int begin = p + static_cast<int>(b - start) * level;
      const int pos = begin + level - 1;
      std::vector<int> rows = mask.visible(pos);
      Matrix<T> vis(static_cast<Eigen::Index>(rows.size()), h.cols());
      for (std::size_t r = 0; r < rows.size(); ++r)
        vis.row(static_cast<Eigen::Index>(r)) = h.row(rows[r]);
      out[b].hidden = h.row(pos);
      out[b].visible = std::move(vis);
    }
  }
  return out;
}

template <typename T>
std::vector<double> level_probs(const Backbone<T>& model, const RowVector<T>& hidden, int level,
                                double temperature) {
  const ModelConfig& cfg = model.config();
  const int vl = cfg.vocab_sizes[static_cast<std::size_t>(level)];
  RowVector<T> z =
      hidden * model.token_embedding().middleRows(cfg.level_offset(level), vl).transpose();
  std::vector<double> zd(static_cast<std::size_t>(vl));
  for (int c = 0; c < vl; ++c) zd[static_cast<std::size_t>(c)] = static_cast<double>(z(c));
  return tempered_softmax(zd, temperature);
}

void check_widths(const std::vector<int>& widths, int levels, const char* what) {
  require(static_cast<int>(widths.size()) == levels, ErrorCode::kInvalidConfig,
          std::string("retrieval: one ") + what + " per level required");
  for (int w : widths)
    require(w >= 1, ErrorCode::kInvalidConfig, std::string("retrieval: ") + what + " must be >= 1");
}

RetrievalResult finalize(const std::vector<BeamCandidate>& beams, const SidIndex& corpus) {
  RetrievalResult out;
  for (const auto& b : beams) {
    SemanticId sid{b.prefix};
    auto item = corpus.item_of(sid);
    if (!item) continue;
    out.items.push_back({*item, std::move(sid), b.rsp_logscore, b.iap_logscore});
  }
  return out;
}

}  // namespace

template <typename T>
RetrievalResult beam_search(const std::vector<SemanticId>& history, const Backbone<T>& model,
                            const RankHead<T>* head, const SidIndex& corpus,
                            const BeamOptions& options) {
  const ModelConfig& cfg = model.config();
  const int m = cfg.levels();
  check_widths(options.lambdas, m, "lambda");
  check_widths(options.beams, m, "beam width");
  const bool use_head = options.mode != RankMode::kIapOnly;
  require(!use_head || head != nullptr, ErrorCode::kInvalidArgument,
          "beam_search: rank head required unless ranking by generative scores");
  const std::vector<int> prefix = history_tokens(history, cfg);

  std::vector<BeamCandidate> beams{BeamCandidate{}};
  for (int l = 0; l < m; ++l) {
    auto states = beam_states(model, prefix, beams, l);
    const int lambda = options.lambdas[static_cast<std::size_t>(l)];
    std::vector<BeamCandidate> expansions;
    for (std::size_t b = 0; b < beams.size(); ++b) {
      std::vector<double> probs = level_probs(model, states[b].hidden, l, options.temperature);
      CandidateSet cand;
      if (options.constrain_to_corpus) {
        std::vector<double> masked = probs;
        std::vector<int> key = beams[b].prefix;
        key.push_back(0);
        for (std::size_t c = 0; c < masked.size(); ++c) {
          key.back() = static_cast<int>(c);
          if (!corpus.has_prefix(key)) masked[c] = -1;
        }
        cand = top_candidates(masked, l, lambda);
        std::size_t keep = 0;
        while (keep < cand.codes.size() && cand.iap_probs[keep] >= 0) ++keep;
        cand.codes.resize(keep);
        cand.iap_probs.resize(keep);
      } else {
        cand = top_candidates(probs, l, lambda);
      }
      if (cand.codes.empty()) continue;
      std::vector<double> scores;
      if (use_head) {
        Matrix<T> emb(static_cast<Eigen::Index>(cand.codes.size()), cfg.d_model);
        for (std::size_t i = 0; i < cand.codes.size(); ++i)
          emb.row(static_cast<Eigen::Index>(i)) = model.token_embedding().row(cfg.token(l, cand.codes[i]));
        scores = rank_scores(emb, states[b].visible, *head);
      }
      for (std::size_t i = 0; i < cand.codes.size(); ++i) {
        BeamCandidate next = beams[b];
        next.prefix.push_back(cand.codes[i]);
        next.iap_logscore += std::log(cand.iap_probs[i]);
        if (use_head) next.rsp_logscore += std::log(scores[i]);
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(),
              [&](const BeamCandidate& a, const BeamCandidate& b) { return ranks_before(a, b, options.mode); });
    const std::size_t width = static_cast<std::size_t>(options.beams[static_cast<std::size_t>(l)]);
    if (expansions.size() > width) expansions.resize(width);
    beams = std::move(expansions);
    if (beams.empty()) break;
  }
  return finalize(beams, corpus);
}

template <typename T>
RetrievalResult brute_force_rank(const std::vector<SemanticId>& history, const Backbone<T>& model,
                                 const RankHead<T>* head, const SidIndex& corpus,
                                 double temperature, RankMode mode) {
  const ModelConfig& cfg = model.config();
  const bool use_head = mode != RankMode::kIapOnly;
  require(!use_head || head != nullptr, ErrorCode::kInvalidArgument,
          "brute_force_rank: rank head required unless ranking by generative scores");
  const std::vector<int> base = history_tokens(history, cfg);

  // One causal forward per distinct prefix, shared by items below it.
  std::map<std::vector<int>, Matrix<T>> cache;
  auto states_for = [&](const std::vector<int>& prefix) -> const Matrix<T>& {
    auto it = cache.find(prefix);
    if (it != cache.end()) return it->second;
    std::vector<int> tokens = base;
    for (std::size_t l = 0; l < prefix.size(); ++l)
      tokens.push_back(cfg.token(static_cast<int>(l), prefix[l]));
    const int n = static_cast<int>(tokens.size());
    std::vector<int> positions(tokens.size());
    for (int i = 0; i < n; ++i) positions[static_cast<std::size_t>(i)] = i;
    return cache.emplace(prefix, hidden_states(model, tokens, positions, AttentionMask::causal(n)))
        .first->second;
  };

  std::vector<BeamCandidate> all;
  for (const auto& [sid, item] : corpus.sids()) {
    (void)item;
    BeamCandidate c;
    for (int l = 0; l < cfg.levels(); ++l) {
      const Matrix<T>& h = states_for(c.prefix);
      RowVector<T> last = h.row(h.rows() - 1);
      c.iap_logscore += std::log(level_probs(model, last, l, temperature)[static_cast<std::size_t>(sid[l])]);
      if (use_head) {
        RowVector<T> emb = model.token_embedding().row(cfg.token(l, sid[l]));
        c.rsp_logscore += std::log(rank_score(emb, h, *head));
      }
      c.prefix.push_back(sid[l]);
    }
    all.push_back(std::move(c));
  }
  std::sort(all.begin(), all.end(),
            [&](const BeamCandidate& a, const BeamCandidate& b) { return ranks_before(a, b, mode); });
  return finalize(all, corpus);
}

template <typename T>
RetrievalResult iap_only_rank(const std::vector<SemanticId>& history, const Backbone<T>& model,
                              const SidIndex& corpus, const std::vector<int>& beams,
                              double temperature) {
  const ModelConfig& cfg = model.config();
  check_widths(beams, cfg.levels(), "beam width");
  BeamOptions options;
  options.beams = beams;
  options.lambdas.clear();
  for (int l = 0; l < cfg.levels(); ++l)
    options.lambdas.push_back(std::min(beams[static_cast<std::size_t>(l)],
                                       cfg.vocab_sizes[static_cast<std::size_t>(l)]));
  options.temperature = temperature;
  options.mode = RankMode::kIapOnly;
  return beam_search<T>(history, model, nullptr, corpus, options);
}

#define RGR_INSTANTIATE(T)                                                                    \
  template RetrievalResult beam_search<T>(const std::vector<SemanticId>&, const Backbone<T>&, \
                                          const RankHead<T>*, const SidIndex&,                \
                                          const BeamOptions&);                                \
  template RetrievalResult brute_force_rank<T>(const std::vector<SemanticId>&,                \
                                               const Backbone<T>&, const RankHead<T>*,        \
                                               const SidIndex&, double, RankMode);            \
  template RetrievalResult iap_only_rank<T>(const std::vector<SemanticId>&, const Backbone<T>&, \
                                            const SidIndex&, const std::vector<int>&, double);

RGR_INSTANTIATE(float)
RGR_INSTANTIATE(double)

#undef RGR_INSTANTIATE

}  // namespace rgr
