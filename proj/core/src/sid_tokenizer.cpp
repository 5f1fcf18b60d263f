#include "rgr/sid_tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "rgr/error.hpp"

namespace rgr {

std::string to_string(const SemanticId& sid) {
  std::ostringstream out;
  out << '(';
  for (std::size_t i = 0; i < sid.codes.size(); ++i) out << (i ? "," : "") << sid.codes[i];
  out << ')';
  return out.str();
}

std::vector<int> Codebooks::sizes() const {
  std::vector<int> out;
  for (const auto& l : levels) out.push_back(static_cast<int>(l.rows()));
  return out;
}

std::int64_t Codebooks::capacity() const {
  std::int64_t cap = 1;
  for (const auto& l : levels) {
    if (cap > std::numeric_limits<std::int64_t>::max() / std::max<Eigen::Index>(1, l.rows()))
      return std::numeric_limits<std::int64_t>::max();
    cap *= l.rows();
  }
  return cap;
}

void Codebooks::validate() const {
  require(!levels.empty(), ErrorCode::kInvalidArgument, "codebooks: m must be >= 1");
  for (const auto& l : levels) {
    require(l.rows() >= 1, ErrorCode::kInvalidArgument, "codebooks: V_l must be >= 1");
    require(l.cols() == levels[0].cols(), ErrorCode::kDimensionError,
            "codebooks: levels disagree on dimension");
    require(l.allFinite(), ErrorCode::kInvalidArgument, "codebooks: non-finite row");
  }
}

namespace {

int nearest_row(const FeatureVector& x, const CodebookMatrix& book) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < book.rows(); ++c) {
    double d = (book.row(c) - x).squaredNorm();
    if (d < best_d) {  // strict: lowest index wins ties
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Row indices of `book` sorted by distance to x, ties by index.
std::vector<int> rows_by_distance(const FeatureVector& x, const CodebookMatrix& book) {
  std::vector<double> dist(static_cast<std::size_t>(book.rows()));
  for (Eigen::Index c = 0; c < book.rows(); ++c) dist[static_cast<std::size_t>(c)] = (book.row(c) - x).squaredNorm();
  std::vector<int> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return dist[static_cast<std::size_t>(a)] < dist[static_cast<std::size_t>(b)]; });
  return order;
}

void round_to_float(CodebookMatrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

CodebookMatrix kmeans(const CodebookMatrix& points, int k, std::mt19937_64& rng,
                      const KMeansOptions& options) {
  const Eigen::Index n = points.rows(), d = points.cols();
  CodebookMatrix centroids(k, d);

  // k-means++ seeding.
  std::uniform_int_distribution<Eigen::Index> pick_first(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  centroids.row(0) = points.row(pick_first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (points.row(i) - centroids.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    Eigen::Index chosen = 0;
    if (total > 0) {
      double target = unit(rng) * total;
      double acc = 0;
      chosen = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        acc += d2[static_cast<std::size_t>(i)];
        if (acc > target && d2[static_cast<std::size_t>(i)] > 0) {
          chosen = i;
          break;
        }
      }
    } else {
      chosen = static_cast<Eigen::Index>(c) % n;  // every point already coincides with a centroid
    }
    centroids.row(c) = points.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (points.row(i) - centroids.row(c)).squaredNorm());
  }

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) assign[static_cast<std::size_t>(i)] = nearest_row(points.row(i), centroids);
    CodebookMatrix next = CodebookMatrix::Zero(k, d);
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      next.row(assign[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
      } else {
        next.row(c) = centroids.row(c);  // empty cluster keeps its centroid
      }
    }
    double max_move = 0;
    for (int c = 0; c < k; ++c) max_move = std::max(max_move, (next.row(c) - centroids.row(c)).norm());
    centroids = std::move(next);
    if (max_move < options.tolerance) break;
  }
  return centroids;
}

}  // namespace

Codebooks train_codebooks(std::span<const ItemFeature> features, std::span<const int> sizes,
                          std::uint64_t seed, const KMeansOptions& options) {
  require(!features.empty(), ErrorCode::kInvalidCorpus, "train_codebooks: empty feature list");
  require(!sizes.empty(), ErrorCode::kInvalidArgument, "train_codebooks: m must be >= 1");
  const Eigen::Index d = features[0].vector.size();
  require(d > 0, ErrorCode::kInvalidFeature, "train_codebooks: zero-dimensional features");
  CodebookMatrix residuals(static_cast<Eigen::Index>(features.size()), d);
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(features[i].vector.size() == d, ErrorCode::kDimensionError,
            "train_codebooks: features disagree on dimension");
    require(features[i].vector.allFinite(), ErrorCode::kInvalidFeature,
            "train_codebooks: non-finite feature for item " + std::to_string(features[i].item_id));
    residuals.row(static_cast<Eigen::Index>(i)) = features[i].vector;
  }

  std::mt19937_64 rng(seed);
  Codebooks books;
  for (int v : sizes) {
    require(v >= 1, ErrorCode::kInvalidArgument, "train_codebooks: V_l must be >= 1");
    CodebookMatrix centroids = kmeans(residuals, v, rng, options);
    round_to_float(centroids);
    for (Eigen::Index i = 0; i < residuals.rows(); ++i)
      residuals.row(i) -= centroids.row(nearest_row(residuals.row(i), centroids));
    books.levels.push_back(std::move(centroids));
  }
  return books;
}

SemanticId encode_item(const FeatureVector& feature, const Codebooks& codebooks) {
  require(feature.size() == codebooks.dimension(), ErrorCode::kDimensionError,
          "encode_item: feature dimension " + std::to_string(feature.size()) +
              " does not match codebooks (" + std::to_string(codebooks.dimension()) + ")");
  SemanticId sid;
  FeatureVector r = feature;
  for (const auto& book : codebooks.levels) {
    int c = nearest_row(r, book);
    sid.codes.push_back(c);
    r -= book.row(c);
  }
  return sid;
}

FeatureVector residual_after(const FeatureVector& feature, const Codebooks& codebooks,
                             std::span<const int> codes) {
  require(feature.size() == codebooks.dimension(), ErrorCode::kDimensionError,
          "residual_after: dimension mismatch");
  FeatureVector r = feature;
  for (std::size_t l = 0; l < codes.size(); ++l) r -= codebooks.levels[l].row(codes[l]);
  return r;
}

namespace {

// Depth-first search, in distance order, over codes at levels >= `level`
// extending `prefix`, for the first SID not in `taken`.
bool first_free(const FeatureVector& residual, const Codebooks& books, std::size_t level,
                std::vector<int>& prefix, const std::set<SemanticId>& taken) {
  if (level == books.levels.size()) return taken.count(SemanticId{prefix}) == 0;
  for (int c : rows_by_distance(residual, books.levels[level])) {
    prefix.push_back(c);
    if (first_free(residual - books.levels[level].row(c), books, level + 1, prefix, taken)) return true;
    prefix.pop_back();
  }
  return false;
}

SemanticId relocate(const FeatureVector& feature, const SemanticId& original, const Codebooks& books,
                    const std::set<SemanticId>& taken) {
  const std::size_t m = books.levels.size();
  // Deviate first at the last level, then progressively earlier ones. At the
  // deviation level the original code is skipped (it led to a collision or an
  // exhausted subtree); deeper levels are searched nearest-first.
  for (std::size_t deviate = m; deviate-- > 0;) {
    std::vector<int> prefix(original.codes.begin(), original.codes.begin() + static_cast<std::ptrdiff_t>(deviate));
    FeatureVector r = residual_after(feature, books, prefix);
    for (int c : rows_by_distance(r, books.levels[deviate])) {
      if (c == original.codes[deviate]) continue;
      prefix.push_back(c);
      if (first_free(r - books.levels[deviate].row(c), books, deviate + 1, prefix, taken))
        return SemanticId{prefix};
      prefix.pop_back();
    }
  }
  fail(ErrorCode::kCapacityExceeded, "assign_corpus: no free SID left");
}

}  // namespace

std::map<std::int64_t, SemanticId> assign_corpus(std::span<const ItemFeature> features,
                                                 const Codebooks& codebooks) {
  codebooks.validate();
  require(static_cast<std::int64_t>(features.size()) <= codebooks.capacity(),
          ErrorCode::kCapacityExceeded,
          "assign_corpus: " + std::to_string(features.size()) + " items exceed SID capacity " +
              std::to_string(codebooks.capacity()));

  struct Encoded {
    std::size_t index;
    SemanticId sid;
    double recon_error;
  };
  std::vector<Encoded> encoded;
  encoded.reserve(features.size());
  std::set<std::int64_t> ids;
  for (std::size_t i = 0; i < features.size(); ++i) {
    require(features[i].vector.allFinite(), ErrorCode::kInvalidFeature,
            "assign_corpus: non-finite feature for item " + std::to_string(features[i].item_id));
    require(ids.insert(features[i].item_id).second, ErrorCode::kInvalidCorpus,
            "assign_corpus: duplicate item id " + std::to_string(features[i].item_id));
    SemanticId sid = encode_item(features[i].vector, codebooks);
    double err = residual_after(features[i].vector, codebooks, sid.codes).squaredNorm();
    encoded.push_back({i, std::move(sid), err});
  }

  // Group colliders: order by SID, then reconstruction error, then item id.
  std::vector<std::size_t> order(encoded.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ea = encoded[a];
    const auto& eb = encoded[b];
    if (ea.sid != eb.sid) return ea.sid < eb.sid;
    if (ea.recon_error != eb.recon_error) return ea.recon_error < eb.recon_error;
    return features[ea.index].item_id < features[eb.index].item_id;
  });

  std::map<std::int64_t, SemanticId> out;
  std::set<SemanticId> taken;
  std::vector<std::size_t> displaced;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& e = encoded[order[k]];
    if (k > 0 && encoded[order[k - 1]].sid == e.sid) {
      displaced.push_back(order[k]);
    } else {
      taken.insert(e.sid);
      out[features[e.index].item_id] = e.sid;
    }
  }
  for (std::size_t idx : displaced) {
    const auto& e = encoded[idx];
    SemanticId moved = relocate(features[e.index].vector, e.sid, codebooks, taken);
    taken.insert(moved);
    out[features[e.index].item_id] = std::move(moved);
  }
  return out;
}

SidIndex::SidIndex(const std::map<std::int64_t, SemanticId>& assignment) : by_item_(assignment) {
  for (const auto& [item, sid] : assignment) {
    require(by_sid_.emplace(sid, item).second, ErrorCode::kInvalidCorpus,
            "SidIndex: SID " + to_string(sid) + " assigned twice");
    std::vector<int> prefix;
    for (int c : sid.codes) {
      prefix.push_back(c);
      ++prefixes_[prefix];
    }
  }
}

std::optional<std::int64_t> SidIndex::item_of(const SemanticId& sid) const {
  auto it = by_sid_.find(sid);
  if (it == by_sid_.end()) return std::nullopt;
  return it->second;
}

const SemanticId& SidIndex::sid_of(std::int64_t item_id) const {
  auto it = by_item_.find(item_id);
  require(it != by_item_.end(), ErrorCode::kInvalidArgument,
          "SidIndex: unknown item " + std::to_string(item_id));
  return it->second;
}

bool SidIndex::has_prefix(std::span<const int> prefix) const {
  if (prefix.empty()) return !by_sid_.empty();
  return prefixes_.count(std::vector<int>(prefix.begin(), prefix.end())) != 0;
}

}  // namespace rgr
