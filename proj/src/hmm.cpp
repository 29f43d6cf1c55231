#include "pdintent/hmm.hpp"

#include <cmath>
#include <numeric>

#include "pdintent/error.hpp"

namespace pdintent {

void floored_normalize(std::span<const double> counts, double floor, std::span<double> p) {
  const std::size_t n = counts.size();
  double total = 0.0;
  for (double c : counts) total += c;
  if (!(total > 0.0)) return;

  // Water-filling: entries whose share would drop below the floor are pinned
  // to it, the rest share the remaining mass in proportion to their counts.
  std::vector<bool> pinned(n, false);
  std::size_t n_pinned = 0;
  double free_counts = total;
  for (;;) {
    const double free_mass = 1.0 - floor * static_cast<double>(n_pinned);
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (pinned[i]) continue;
      if (counts[i] / free_counts * free_mass < floor) {
        pinned[i] = true;
        ++n_pinned;
        free_counts -= counts[i];
        changed = true;
      }
    }
    if (!changed) break;
  }
  const double free_mass = 1.0 - floor * static_cast<double>(n_pinned);
  for (std::size_t i = 0; i < n; ++i) p[i] = pinned[i] ? floor : counts[i] / free_counts * free_mass;
}

DiscreteHmm::DiscreteHmm(int n_states, int n_symbols)
    : n_(n_states),
      m_(n_symbols),
      pi_(static_cast<std::size_t>(n_states), 1.0 / n_states),
      a_(static_cast<std::size_t>(n_states * n_states), 1.0 / n_states),
      b_(static_cast<std::size_t>(n_states * n_symbols), 1.0 / n_symbols) {
  if (n_states < 1 || n_symbols < 1) throw DomainError("HMM needs at least one state and one symbol");
}

void DiscreteHmm::randomize(Rng& rng, double floor) {
  auto fill_row = [&](std::span<double> row) {
    double sum = 0.0;
    for (double& v : row) sum += (v = 0.5 + rng.uniform());
    for (double& v : row) v = std::max(v / sum, floor);
    sum = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& v : row) v /= sum;
  };
  const auto n = static_cast<std::size_t>(n_), m = static_cast<std::size_t>(m_);
  fill_row(pi_);
  for (std::size_t i = 0; i < n; ++i) fill_row(std::span(a_).subspan(i * n, n));
  for (std::size_t i = 0; i < n; ++i) fill_row(std::span(b_).subspan(i * m, m));
}

double DiscreteHmm::log_likelihood(std::span<const int> obs) const {
  const auto n = static_cast<std::size_t>(n_), m = static_cast<std::size_t>(m_);
  std::vector<double> alpha(n), next(n);
  double ll = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const auto o = static_cast<std::size_t>(obs[t]);
    if (o >= m) throw DomainError("observation symbol out of range");
    double c = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      if (t == 0) {
        s = pi_[j];
      } else {
        for (std::size_t i = 0; i < n; ++i) s += alpha[i] * a_[i * n + j];
      }
      next[j] = s * b_[j * m + o];
      c += next[j];
    }
    for (std::size_t j = 0; j < n; ++j) alpha[j] = next[j] / c;
    ll += std::log(c);
  }
  return ll;
}

double DiscreteHmm::em_step(std::span<const std::vector<int>> sequences, double floor) {
  const auto n = static_cast<std::size_t>(n_), m = static_cast<std::size_t>(m_);
  std::vector<double> pi_acc(n, 0.0), a_acc(n * n, 0.0), b_acc(n * m, 0.0);
  double total_ll = 0.0;

  std::vector<double> alpha, beta, scale;
  for (const auto& obs : sequences) {
    const std::size_t T = obs.size();
    if (T == 0) continue;
    alpha.assign(T * n, 0.0);
    beta.assign(T * n, 0.0);
    scale.assign(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      const auto o = static_cast<std::size_t>(obs[t]);
      if (o >= m) throw DomainError("observation symbol out of range");
      double c = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        if (t == 0) {
          s = pi_[j];
        } else {
          for (std::size_t i = 0; i < n; ++i) s += alpha[(t - 1) * n + i] * a_[i * n + j];
        }
        alpha[t * n + j] = s * b_[j * m + o];
        c += alpha[t * n + j];
      }
      for (std::size_t j = 0; j < n; ++j) alpha[t * n + j] /= c;
      scale[t] = c;
      total_ll += std::log(c);
    }
    for (std::size_t i = 0; i < n; ++i) beta[(T - 1) * n + i] = 1.0;
    for (std::size_t t = T - 1; t-- > 0;) {
      const auto o = static_cast<std::size_t>(obs[t + 1]);
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += a_[i * n + j] * b_[j * m + o] * beta[(t + 1) * n + j];
        beta[t * n + i] = s / scale[t + 1];
      }
    }
    for (std::size_t t = 0; t < T; ++t) {
      const auto o = static_cast<std::size_t>(obs[t]);
      for (std::size_t i = 0; i < n; ++i) {
        const double gamma = alpha[t * n + i] * beta[t * n + i];
        if (t == 0) pi_acc[i] += gamma;
        b_acc[i * m + o] += gamma;
      }
      if (t + 1 < T) {
        const auto o1 = static_cast<std::size_t>(obs[t + 1]);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j)
            a_acc[i * n + j] +=
                alpha[t * n + i] * a_[i * n + j] * b_[j * m + o1] * beta[(t + 1) * n + j] / scale[t + 1];
      }
    }
  }

  floored_normalize(pi_acc, floor, pi_);
  for (std::size_t i = 0; i < n; ++i) {
    floored_normalize(std::span<const double>(a_acc).subspan(i * n, n), floor, std::span(a_).subspan(i * n, n));
    floored_normalize(std::span<const double>(b_acc).subspan(i * m, m), floor, std::span(b_).subspan(i * m, m));
  }
  return total_ll;
}

std::vector<double> DiscreteHmm::fit(std::span<const std::vector<int>> sequences, int iterations, double floor) {
  if (sequences.empty()) throw TrainingError("HMM training needs at least one sequence");
  const double count = static_cast<double>(sequences.size());
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(iterations) + 1);
  for (int it = 0; it < iterations; ++it) {
    const double ll = em_step(sequences, floor);
    if (!std::isfinite(ll)) throw TrainingError("HMM log-likelihood became non-finite");
    history.push_back(ll / count);
  }
  double ll = 0.0;
  for (const auto& s : sequences) ll += log_likelihood(s);
  history.push_back(ll / count);
  return history;
}

nlohmann::json DiscreteHmm::to_json() const {
  return {{"states", n_}, {"symbols", m_}, {"initial", pi_}, {"transition", a_}, {"emission", b_}};
}

DiscreteHmm DiscreteHmm::from_json(const nlohmann::json& j) {
  DiscreteHmm h(j.at("states").get<int>(), j.at("symbols").get<int>());
  h.pi_ = j.at("initial").get<std::vector<double>>();
  h.a_ = j.at("transition").get<std::vector<double>>();
  h.b_ = j.at("emission").get<std::vector<double>>();
  const auto n = static_cast<std::size_t>(h.n_), m = static_cast<std::size_t>(h.m_);
  if (h.pi_.size() != n || h.a_.size() != n * n || h.b_.size() != n * m)
    throw FormatError("HMM parameter tables have the wrong shape");
  return h;
}

}  // namespace pdintent
