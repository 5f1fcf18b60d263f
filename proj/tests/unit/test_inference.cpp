#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "../support/testkit.hpp"
#include "rgr/error.hpp"
#include "rgr/inference.hpp"

using namespace rgr;
using rgr::ad::Matrix;
using rgr::ad::RowVector;

namespace {

SidIndex full_corpus(const std::vector<int>& vocab) {
  std::map<std::int64_t, SemanticId> m;
  std::int64_t id = 100;
  for (int a = 0; a < vocab[0]; ++a)
    for (int b = 0; b < vocab[1]; ++b) m[id++] = SemanticId{{a, b}};
  return SidIndex(m);
}

SidIndex sparse_corpus(const std::vector<int>& vocab, std::size_t n, std::mt19937_64& rng) {
  std::set<SemanticId> seen;
  std::map<std::int64_t, SemanticId> m;
  std::int64_t id = 0;
  while (seen.size() < n) {
    SemanticId s{{static_cast<int>(rng() % static_cast<unsigned>(vocab[0])),
                  static_cast<int>(rng() % static_cast<unsigned>(vocab[1]))}};
    if (seen.insert(s).second) m[id++] = s;
  }
  return SidIndex(m);
}

struct Fixture {
  ModelConfig cfg;
  Backbone<double> model;
  RankHead<double> head;
  Fixture(std::vector<int> vocab, std::uint64_t seed)
      : cfg(testkit::tiny_config(std::move(vocab), 8, 1, 2, 64)), model(cfg, seed), head(cfg.d_model, seed + 1) {
    std::mt19937_64 rng(seed);
    testkit::randomize(head.params(), rng, 0.5);
  }
};

std::vector<SemanticId> random_history(std::mt19937_64& rng, const ModelConfig& cfg, int n) {
  std::vector<SemanticId> h;
  for (int i = 0; i < n; ++i) h.push_back(testkit::random_sid(rng, cfg));
  return h;
}

double key(const RetrievedItem& it, RankMode mode) {
  BeamCandidate c{it.sid.codes, it.rsp_logscore, it.iap_logscore};
  return rank_key(c, mode);
}

}  // namespace

TEST(BeamSearch, FullWidthEqualsBruteForce) {
  Fixture f({4, 4}, 3);
  SidIndex corpus = full_corpus({4, 4});
  std::mt19937_64 rng(1);
  for (RankMode mode : {RankMode::kRsp, RankMode::kFuse, RankMode::kIapOnly}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto hist = random_history(rng, f.cfg, 3);
      BeamOptions opts;
      opts.lambdas = {4, 4};
      opts.beams = {16, 16};
      opts.mode = mode;
      auto beam = beam_search(hist, f.model, &f.head, corpus, opts);
      auto brute = brute_force_rank(hist, f.model, &f.head, corpus, 1.0, mode);
      ASSERT_EQ(beam.items.size(), 16u);
      EXPECT_EQ(beam.item_ids(), brute.item_ids());
      for (std::size_t i = 0; i < beam.items.size(); ++i) {
        EXPECT_NEAR(beam.items[i].rsp_logscore, brute.items[i].rsp_logscore, 1e-12);
        EXPECT_NEAR(beam.items[i].iap_logscore, brute.items[i].iap_logscore, 1e-12);
      }
    }
  }
}

TEST(BeamSearch, SingleFirstBeamSharesFirstCode) {
  Fixture f({4, 6}, 4);
  SidIndex corpus = full_corpus({4, 6});
  std::mt19937_64 rng(2);
  auto hist = random_history(rng, f.cfg, 2);
  BeamOptions opts;
  opts.lambdas = {4, 6};
  opts.beams = {1, 6};
  auto r = beam_search(hist, f.model, &f.head, corpus, opts);
  ASSERT_FALSE(r.items.empty());
  for (const auto& it : r.items) EXPECT_EQ(it.sid[0], r.items[0].sid[0]);
}

TEST(BeamSearch, OperatingPointShape) {
  Fixture f({8, 16}, 5);
  std::mt19937_64 rng(3);
  SidIndex corpus = sparse_corpus({8, 16}, 100, rng);
  auto hist = random_history(rng, f.cfg, 4);
  BeamOptions opts;
  opts.lambdas = {8, 16};
  opts.beams = {3, 20};
  auto r = beam_search(hist, f.model, &f.head, corpus, opts);
  EXPECT_LE(r.items.size(), 20u);
  for (std::size_t i = 1; i < r.items.size(); ++i)
    EXPECT_GE(key(r.items[i - 1], RankMode::kRsp), key(r.items[i], RankMode::kRsp));
  for (const auto& it : r.items) {
    EXPECT_TRUE(corpus.contains_item(it.item_id));
    EXPECT_LT(it.rsp_logscore, 0.0);
    EXPECT_LT(it.iap_logscore, 0.0);
  }
}

TEST(BeamSearch, ConstrainedDecodingFillsBeamsFromCorpus) {
  Fixture f({8, 16}, 6);
  std::mt19937_64 rng(4);
  SidIndex corpus = sparse_corpus({8, 16}, 30, rng);
  auto hist = random_history(rng, f.cfg, 3);
  BeamOptions opts;
  opts.lambdas = {8, 16};
  opts.beams = {4, 10};
  auto loose = beam_search(hist, f.model, &f.head, corpus, opts);
  opts.constrain_to_corpus = true;
  auto tight = beam_search(hist, f.model, &f.head, corpus, opts);
  EXPECT_LE(tight.items.size(), 10u);
  EXPECT_GT(tight.items.size(), 0u);
  EXPECT_LE(loose.items.size(), tight.items.size());
}

TEST(BeamSearch, ScoresAreHandRecomputable) {
  Fixture f({4, 6}, 7);
  SidIndex corpus = full_corpus({4, 6});
  std::mt19937_64 rng(5);
  auto hist = random_history(rng, f.cfg, 2);
  BeamOptions opts;
  opts.lambdas = {4, 6};
  opts.beams = {4, 24};
  auto r = beam_search(hist, f.model, &f.head, corpus, opts);
  const auto& it = r.items[3];
  auto tokens = testkit::history_tokens(f.cfg, hist);
  const int P = static_cast<int>(tokens.size());
  tokens.push_back(f.cfg.token(0, it.sid[0]));
  std::vector<int> pos(tokens.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  const Matrix<double> h =
      hidden_states(f.model, tokens, pos, AttentionMask::causal(static_cast<int>(tokens.size())));
  const auto& emb = f.model.token_embedding();
  const double s1 = rank_score<double>(emb.row(f.cfg.token(0, it.sid[0])), h.topRows(P), f.head);
  const double s2 = rank_score<double>(emb.row(f.cfg.token(1, it.sid[1])), h, f.head);
  EXPECT_NEAR(it.rsp_logscore, std::log(s1) + std::log(s2), 1e-12);
  const double p1 = level_distribution<double>(f.model, h.row(P - 1), 0)(it.sid[0]);
  const double p2 = level_distribution<double>(f.model, h.row(P), 1)(it.sid[1]);
  EXPECT_NEAR(it.iap_logscore, std::log(p1) + std::log(p2), 1e-12);
  EXPECT_LT(std::log(s1) + std::log(s2), std::log(s1));
}

TEST(BeamSearch, Deterministic) {
  Fixture f({8, 16}, 8);
  std::mt19937_64 rng(6);
  SidIndex corpus = sparse_corpus({8, 16}, 80, rng);
  auto hist = random_history(rng, f.cfg, 3);
  BeamOptions opts;
  opts.lambdas = {4, 8};
  opts.beams = {4, 16};
  auto a = beam_search(hist, f.model, &f.head, corpus, opts);
  auto b = beam_search(hist, f.model, &f.head, corpus, opts);
  ASSERT_EQ(a.items.size(), b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    EXPECT_EQ(a.items[i].item_id, b.items[i].item_id);
    EXPECT_EQ(a.items[i].rsp_logscore, b.items[i].rsp_logscore);
  }
}

TEST(BeamSearch, FloatMatchesDoubleRankingAtFullWidth) {
  Fixture f({4, 4}, 9);
  SidIndex corpus = full_corpus({4, 4});
  std::mt19937_64 rng(7);
  auto hist = random_history(rng, f.cfg, 3);
  Backbone<float> mf = f.model.cast<float>();
  RankHead<float> hf = f.head.cast<float>();
  BeamOptions opts;
  opts.lambdas = {4, 4};
  opts.beams = {16, 16};
  auto a = beam_search(hist, mf, &hf, corpus, opts);
  auto b = brute_force_rank(hist, mf, &hf, corpus);
  EXPECT_EQ(a.item_ids(), b.item_ids());
}

TEST(BeamSearch, MonotoneBeamPropertyReportedEmpirically) {
  // Beam search is inexact, so enlarging B_1 may reorder the tail. Only the
  // count of violations is reported.
  Fixture f({8, 16}, 10);
  std::mt19937_64 rng(8);
  SidIndex corpus = full_corpus({8, 16});
  int violations = 0;
  for (int trial = 0; trial < 10; ++trial) {
    auto hist = random_history(rng, f.cfg, 3);
    BeamOptions small;
    small.lambdas = {8, 16};
    small.beams = {2, 8};
    BeamOptions big = small;
    big.beams = {4, 8};
    auto a = beam_search(hist, f.model, &f.head, corpus, small);
    auto b = beam_search(hist, f.model, &f.head, corpus, big);
    auto ids = b.item_ids();
    if (!a.items.empty() && std::find(ids.begin(), ids.end(), a.items[0].item_id) == ids.end()) ++violations;
  }
  RecordProperty("violations", violations);
  SUCCEED();
}

TEST(BeamSearch, Errors) {
  Fixture f({4, 4}, 11);
  SidIndex corpus = full_corpus({4, 4});
  BeamOptions opts;
  opts.lambdas = {4};
  opts.beams = {4, 4};
  std::vector<SemanticId> hist{SemanticId{{0, 0}}};
  EXPECT_THROW(beam_search(hist, f.model, &f.head, corpus, opts), Error);
  opts.lambdas = {4, 4};
  EXPECT_THROW(beam_search(hist, f.model, static_cast<const RankHead<double>*>(nullptr), corpus, opts), Error);
  try {
    beam_search({}, f.model, &f.head, corpus, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyHistory);
  }
}

TEST(BruteForce, SingleItemCorpus) {
  Fixture f({4, 4}, 12);
  SidIndex corpus(std::map<std::int64_t, SemanticId>{{42, SemanticId{{2, 3}}}});
  auto r = brute_force_rank(std::vector<SemanticId>{SemanticId{{1, 1}}}, f.model, &f.head, corpus);
  ASSERT_EQ(r.items.size(), 1u);
  EXPECT_EQ(r.items[0].item_id, 42);
}

TEST(IapOnly, FullWidthEqualsItemScoreRanking) {
  Fixture f({4, 6}, 13);
  SidIndex corpus = full_corpus({4, 6});
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto hist = random_history(rng, f.cfg, 3);
    auto a = iap_only_rank(hist, f.model, corpus, {4, 24});
    auto b = brute_force_rank<double>(hist, f.model, nullptr, corpus, 1.0, RankMode::kIapOnly);
    EXPECT_EQ(a.item_ids(), b.item_ids());
    auto c = iap_only_rank(hist, f.model, corpus, {4, 24});
    EXPECT_EQ(a.item_ids(), c.item_ids());
    for (std::size_t i = 1; i < a.items.size(); ++i) EXPECT_GE(a.items[i - 1].iap_logscore, a.items[i].iap_logscore);
  }
}

TEST(RankOrder, OracleHeadReducesToIapRanking) {
  // A rank head returning the generative probabilities makes the refined
  // key equal the generative key, so the two orders coincide.
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-8, 0);
  std::vector<BeamCandidate> cands;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      double iap = u(rng);
      cands.push_back(BeamCandidate{{a, b}, iap, iap});
    }
  auto rsp = cands;
  auto iap = cands;
  std::sort(rsp.begin(), rsp.end(), [](auto& x, auto& y) { return ranks_before(x, y, RankMode::kRsp); });
  std::sort(iap.begin(), iap.end(), [](auto& x, auto& y) { return ranks_before(x, y, RankMode::kIapOnly); });
  for (std::size_t i = 0; i < cands.size(); ++i) EXPECT_EQ(rsp[i].prefix, iap[i].prefix);
}

TEST(RankOrder, TieBreaks) {
  BeamCandidate a{{0, 1}, -1.0, -2.0}, b{{0, 2}, -1.0, -1.5}, c{{0, 3}, -1.0, -1.5};
  EXPECT_TRUE(ranks_before(b, a, RankMode::kRsp));
  EXPECT_TRUE(ranks_before(b, c, RankMode::kRsp));
  EXPECT_FALSE(ranks_before(c, b, RankMode::kRsp));
  EXPECT_DOUBLE_EQ(rank_key(a, RankMode::kFuse), -3.0);
  EXPECT_EQ(parse_rank_mode(rank_mode_name(RankMode::kFuse)), RankMode::kFuse);
  EXPECT_THROW(parse_rank_mode("both"), Error);
}
