#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/rng.hpp"

namespace pdintent {

/// CART classification tree grown on Gini impurity. Leaves vote for their
/// majority class.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int vote = 0;
  };

  /// `x` is row-major n x d; rows listed in `rows` (with repeats) are used.
  void fit(std::span<const double> x, int d, std::span<const int> y, int n_classes, std::span<const std::size_t> rows,
           int max_depth, int min_samples_split, int max_features, Rng& rng);
  int predict(std::span<const double> features) const;
  int depth() const;
  const std::vector<Node>& nodes() const { return nodes_; }

  nlohmann::json to_json() const;
  static DecisionTree from_json(const nlohmann::json& j);

 private:
  int grow(std::span<const double> x, int d, std::span<const int> y, int n_classes, std::vector<std::size_t>& rows,
           std::size_t lo, std::size_t hi, int depth, int max_depth, int min_samples_split, int max_features, Rng& rng);
  std::vector<Node> nodes_;
};

/// Bagged trees; probability of a class is its share of tree votes.
class RandomForest {
 public:
  RandomForest() = default;
  RandomForest(int n_features, int n_classes) : d_(n_features), k_(n_classes) {}

  /// Trees are grown in parallel, each with its own (seed, tree index) stream.
  void fit(std::span<const double> x, std::span<const int> y, int n_trees, int max_depth, int min_samples_split,
           int max_features, std::uint64_t seed);
  std::vector<double> predict_proba(std::span<const double> features) const;

  int n_features() const { return d_; }
  int n_classes() const { return k_; }
  const std::vector<DecisionTree>& trees() const { return trees_; }

  nlohmann::json to_json() const;
  static RandomForest from_json(const nlohmann::json& j);

 private:
  int d_ = 0;
  int k_ = 0;
  std::vector<DecisionTree> trees_;
};

}  // namespace pdintent
