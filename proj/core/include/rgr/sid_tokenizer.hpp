#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace rgr {

using FeatureVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using CodebookMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ItemFeature {
  std::int64_t item_id = 0;
  FeatureVector vector;
};

// Codeword tuple (c_1, ..., c_m), codes[l] in [0, V_l).
struct SemanticId {
  std::vector<int> codes;

  int levels() const { return static_cast<int>(codes.size()); }
  int operator[](int level) const { return codes[static_cast<std::size_t>(level)]; }
  auto operator<=>(const SemanticId&) const = default;
};

std::string to_string(const SemanticId& sid);

// One V_l x d matrix per level. Entries are float32-representable so a
// checkpoint round trip reproduces encodings exactly.
struct Codebooks {
  std::vector<CodebookMatrix> levels;

  int level_count() const { return static_cast<int>(levels.size()); }
  int dimension() const { return levels.empty() ? 0 : static_cast<int>(levels[0].cols()); }
  int size(int level) const { return static_cast<int>(levels[static_cast<std::size_t>(level)].rows()); }
  std::vector<int> sizes() const;
  // prod V_l, saturating at INT64_MAX.
  std::int64_t capacity() const;
  void validate() const;
};

struct KMeansOptions {
  int max_iterations = 50;
  double tolerance = 1e-8;  // stop once no centroid moves farther than this
};

// Residual k-means: level l clusters the residuals left by levels < l
// (k-means++ seeding, Lloyd iterations).
Codebooks train_codebooks(std::span<const ItemFeature> features, std::span<const int> sizes,
                          std::uint64_t seed, const KMeansOptions& options = {});

// Greedy residual encoding: codes[l] = argmin_c ||r_l - q_l^c||, lowest index
// on ties, r_{l+1} = r_l - q_l^{codes[l]}.
SemanticId encode_item(const FeatureVector& feature, const Codebooks& codebooks);

// Residual after quantizing feature with the given codes (length <= m).
FeatureVector residual_after(const FeatureVector& feature, const Codebooks& codebooks,
                             std::span<const int> codes);

// Encodes every item and resolves full-SID collisions so the mapping is
// injective. Among colliders the item nearest to its reconstruction keeps
// the code; the others move to the nearest unused last-level code, searching
// next-nearest earlier-level prefixes when a prefix is exhausted.
std::map<std::int64_t, SemanticId> assign_corpus(std::span<const ItemFeature> features,
                                                 const Codebooks& codebooks);

// Bidirectional item <-> SID lookup with a prefix trie over corpus SIDs.
class SidIndex {
 public:
  SidIndex() = default;
  explicit SidIndex(const std::map<std::int64_t, SemanticId>& assignment);

  std::size_t size() const { return by_item_.size(); }
  std::optional<std::int64_t> item_of(const SemanticId& sid) const;
  const SemanticId& sid_of(std::int64_t item_id) const;
  bool contains_item(std::int64_t item_id) const { return by_item_.count(item_id) != 0; }
  // True when some corpus SID starts with `prefix`.
  bool has_prefix(std::span<const int> prefix) const;
  const std::map<std::int64_t, SemanticId>& items() const { return by_item_; }
  const std::map<SemanticId, std::int64_t>& sids() const { return by_sid_; }

 private:
  std::map<std::int64_t, SemanticId> by_item_;
  std::map<SemanticId, std::int64_t> by_sid_;
  std::map<std::vector<int>, int> prefixes_;
};

}  // namespace rgr
