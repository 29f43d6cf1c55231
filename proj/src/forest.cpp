#include "pdintent/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "parallel.hpp"
#include "pdintent/error.hpp"

namespace pdintent {

namespace {

double gini(std::span<const std::size_t> counts, std::size_t total) {
  if (total == 0) return 0.0;
  double sum_sq = 0.0;
  for (std::size_t c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

int argmax(std::span<const std::size_t> counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

void DecisionTree::fit(std::span<const double> x, int d, std::span<const int> y, int n_classes,
                       std::span<const std::size_t> rows, int max_depth, int min_samples_split, int max_features,
                       Rng& rng) {
  nodes_.clear();
  std::vector<std::size_t> work(rows.begin(), rows.end());
  grow(x, d, y, n_classes, work, 0, work.size(), 0, max_depth, min_samples_split, max_features, rng);
}

int DecisionTree::grow(std::span<const double> x, int d, std::span<const int> y, int n_classes,
                       std::vector<std::size_t>& rows, std::size_t lo, std::size_t hi, int depth, int max_depth,
                       int min_samples_split, int max_features, Rng& rng) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.emplace_back();

  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t r = lo; r < hi; ++r) ++counts[static_cast<std::size_t>(y[rows[r]])];
  const std::size_t n = hi - lo;
  nodes_[static_cast<std::size_t>(id)].vote = argmax(counts);
  const double parent = gini(counts, n);
  if (depth >= max_depth || n < static_cast<std::size_t>(min_samples_split) || parent <= 0.0) return id;

  // Partial Fisher-Yates draw of the candidate features.
  std::vector<int> features(static_cast<std::size_t>(d));
  std::iota(features.begin(), features.end(), 0);
  const int m = std::min(max_features, d);
  for (int i = 0; i < m; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(d - i));
    std::swap(features[static_cast<std::size_t>(i)], features[j]);
  }

  int best_feature = -1;
  double best_threshold = 0.0;
  double best_impurity = parent - 1e-12;
  std::vector<std::pair<double, int>> column(n);
  std::vector<std::size_t> left(k), right(k);
  for (int fi = 0; fi < m; ++fi) {
    const int f = features[static_cast<std::size_t>(fi)];
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t row = rows[lo + r];
      column[r] = {x[row * static_cast<std::size_t>(d) + static_cast<std::size_t>(f)], y[row]};
    }
    std::sort(column.begin(), column.end());
    if (column.front().first == column.back().first) continue;
    std::fill(left.begin(), left.end(), 0);
    right = counts;
    for (std::size_t r = 0; r + 1 < n; ++r) {
      const auto c = static_cast<std::size_t>(column[r].second);
      ++left[c];
      --right[c];
      if (column[r].first == column[r + 1].first) continue;
      const std::size_t nl = r + 1, nr = n - nl;
      const double impurity = (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
                              static_cast<double>(n);
      if (impurity < best_impurity) {
        best_impurity = impurity;
        best_feature = f;
        best_threshold = 0.5 * (column[r].first + column[r + 1].first);
      }
    }
  }
  if (best_feature < 0) return id;

  const auto mid_it = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(lo),
                                     rows.begin() + static_cast<std::ptrdiff_t>(hi), [&](std::size_t row) {
                                       return x[row * static_cast<std::size_t>(d) +
                                                static_cast<std::size_t>(best_feature)] <= best_threshold;
                                     });
  const auto mid = static_cast<std::size_t>(mid_it - rows.begin());
  const int l = grow(x, d, y, n_classes, rows, lo, mid, depth + 1, max_depth, min_samples_split, max_features, rng);
  const int r = grow(x, d, y, n_classes, rows, mid, hi, depth + 1, max_depth, min_samples_split, max_features, rng);
  Node& node = nodes_[static_cast<std::size_t>(id)];
  node.feature = best_feature;
  node.threshold = best_threshold;
  node.left = l;
  node.right = r;
  return id;
}

int DecisionTree::predict(std::span<const double> features) const {
  std::size_t i = 0;
  while (nodes_[i].feature >= 0) {
    const Node& node = nodes_[i];
    i = static_cast<std::size_t>(features[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                                    : node.right);
  }
  return nodes_[i].vote;
}

int DecisionTree::depth() const {
  std::vector<int> level(nodes_.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (nodes_[i].feature >= 0) {
      level[static_cast<std::size_t>(nodes_[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes_[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

nlohmann::json DecisionTree::to_json() const {
  nlohmann::json feature = nlohmann::json::array(), threshold = nlohmann::json::array(),
                 left = nlohmann::json::array(), right = nlohmann::json::array(), vote = nlohmann::json::array();
  for (const auto& n : nodes_) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    vote.push_back(n.vote);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"vote", vote}};
}

DecisionTree DecisionTree::from_json(const nlohmann::json& j) {
  DecisionTree t;
  const auto& feature = j.at("feature");
  t.nodes_.resize(feature.size());
  for (std::size_t i = 0; i < feature.size(); ++i) {
    Node& n = t.nodes_[i];
    n.feature = feature.at(i).get<int>();
    n.threshold = j.at("threshold").at(i).get<double>();
    n.left = j.at("left").at(i).get<int>();
    n.right = j.at("right").at(i).get<int>();
    n.vote = j.at("vote").at(i).get<int>();
    const auto limit = static_cast<int>(feature.size());
    if (n.feature >= 0 && (n.left <= static_cast<int>(i) || n.right <= static_cast<int>(i) || n.left >= limit ||
                           n.right >= limit))
      throw FormatError("corrupt tree: child index out of range");
  }
  if (t.nodes_.empty()) throw FormatError("corrupt tree: no nodes");
  return t;
}

void RandomForest::fit(std::span<const double> x, std::span<const int> y, int n_trees, int max_depth,
                       int min_samples_split, int max_features, std::uint64_t seed) {
  const std::size_t n = y.size();
  if (max_features <= 0) max_features = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d_)))));
  trees_.assign(static_cast<std::size_t>(n_trees), DecisionTree{});
  detail::parallel_for(trees_.size(), [&](std::size_t t) {
    Rng rng(derive_seed(seed, {0x7ee, t}));
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = rng.below(n);
    trees_[t].fit(x, d_, y, k_, rows, max_depth, min_samples_split, max_features, rng);
  });
}

std::vector<double> RandomForest::predict_proba(std::span<const double> features) const {
  std::vector<double> p(static_cast<std::size_t>(k_), 0.0);
  for (const auto& t : trees_) p[static_cast<std::size_t>(t.predict(features))] += 1.0;
  for (double& v : p) v /= static_cast<double>(trees_.size());
  return p;
}

nlohmann::json RandomForest::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) trees.push_back(t.to_json());
  return {{"n_features", d_}, {"n_classes", k_}, {"trees", std::move(trees)}};
}

RandomForest RandomForest::from_json(const nlohmann::json& j) {
  RandomForest f(j.at("n_features").get<int>(), j.at("n_classes").get<int>());
  for (const auto& t : j.at("trees")) f.trees_.push_back(DecisionTree::from_json(t));
  if (f.trees_.empty()) throw FormatError("forest has no trees");
  return f;
}

}  // namespace pdintent
