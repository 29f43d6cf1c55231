#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdintent/rng.hpp"

namespace pdintent {

/// Discrete-emission hidden Markov model with scaled forward-backward and
/// Baum-Welch training.
class DiscreteHmm {
 public:
  DiscreteHmm() = default;
  DiscreteHmm(int n_states, int n_symbols);

  /// Random row-stochastic initialization with every entry >= floor.
  void randomize(Rng& rng, double floor);

  /// Log-likelihood of one observation sequence.
  double log_likelihood(std::span<const int> obs) const;

  /// One EM step over all sequences. Returns the total log-likelihood under
  /// the parameters held *before* the update. The M-step maximizes the
  /// expected complete-data log-likelihood over distributions bounded below
  /// by `floor`, so the likelihood never decreases.
  double em_step(std::span<const std::vector<int>> sequences, double floor);

  /// Runs `iterations` EM steps. Returns mean per-sequence log-likelihood of
  /// the initial parameters followed by the value after each step.
  std::vector<double> fit(std::span<const std::vector<int>> sequences, int iterations, double floor);

  int n_states() const { return n_; }
  int n_symbols() const { return m_; }
  const std::vector<double>& initial() const { return pi_; }
  /// Row-major n x n.
  const std::vector<double>& transition() const { return a_; }
  /// Row-major n x m.
  const std::vector<double>& emission() const { return b_; }

  nlohmann::json to_json() const;
  static DiscreteHmm from_json(const nlohmann::json& j);

 private:
  int n_ = 0;
  int m_ = 0;
  std::vector<double> pi_, a_, b_;
};

/// Maximizes sum_i c_i log p_i over the simplex with p_i >= floor. Counts must
/// be nonnegative; an all-zero row keeps `p` unchanged.
void floored_normalize(std::span<const double> counts, double floor, std::span<double> p);

}  // namespace pdintent
