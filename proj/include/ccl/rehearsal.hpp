#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "ccl/datastream.hpp"
#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/numerics.hpp"
#include "ccl/random.hpp"

namespace ccl {

struct ClusterResult {
  std::vector<int> assignments;
  Matrix centroids;
  double inertia = 0.0;
  std::size_t iterations_used = 0;
  std::vector<double> inertia_history;  // inertia after each assignment step
};

struct KMeansOptions {
  std::size_t max_iter = 100;
  double tol = 1e-6;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Nearest centroid for every point; ties go to the lowest centroid index.
inline double assign_points(const Matrix& x, const Matrix& centroids, std::vector<int>& assignment,
                            std::vector<double>& dist2) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(x.row(i), centroids.row(c));
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    assignment[i] = arg;
    dist2[i] = best;
    inertia += best;
  }
  return inertia;
}

// k-means++ seeding.
inline Matrix seed_centroids(const Matrix& x, std::size_t k, Rng& rng) {
  const std::size_t n = x.rows();
  Matrix c(k, x.cols());
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::size_t pick = first(rng);
  std::copy_n(x.row(pick).begin(), x.cols(), c.row(0).begin());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(x.row(i), c.row(0));
  for (std::size_t j = 1; j < k; ++j) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    if (total > 0.0) {
      std::discrete_distribution<std::size_t> dd(d2.begin(), d2.end());
      pick = dd(rng);
    } else {
      pick = first(rng);
    }
    std::copy_n(x.row(pick).begin(), x.cols(), c.row(j).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(x.row(i), c.row(j)));
  }
  return c;
}

}  // namespace detail

// Lloyd iterations from a k-means++ start. Stops once no centroid moves more
// than tol or after max_iter updates. A cluster left empty takes over the
// point farthest from its own centroid.
inline ClusterResult kmeans(const Matrix& features, std::size_t k, std::uint64_t seed,
                            const KMeansOptions& opt = {}) {
  if (k < 1) throw Error("k must be at least 1");
  if (k > features.rows()) throw Error("k exceeds population");
  if (!all_finite(features.data())) throw Error("invalid features");

  const std::size_t n = features.rows();
  const std::size_t dim = features.cols();
  Rng rng = make_rng(seed, "kmeans.init");

  ClusterResult r;
  r.centroids = detail::seed_centroids(features, k, rng);
  r.assignments.assign(n, 0);
  std::vector<double> dist2(n);

  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    r.inertia_history.push_back(detail::assign_points(features, r.centroids, r.assignments, dist2));
    r.iterations_used = it + 1;

    Matrix next(k, dim);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(r.assignments[i]);
      ++counts[c];
      auto row = next.row(c);
      auto xi = features.row(i);
      for (std::size_t d = 0; d < dim; ++d) row[d] += xi[d];
    }
    for (std::size_t c = 0; c < k; ++c)
      if (counts[c] > 0)
        for (double& v : next.row(c)) v /= static_cast<double>(counts[c]);

    // Distances to the updated centroids decide which point an empty cluster steals.
    std::vector<double> cost(n);
    for (std::size_t i = 0; i < n; ++i)
      cost[i] = detail::squared_distance(features.row(i), next.row(static_cast<std::size_t>(r.assignments[i])));
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (cost[i] > cost[far]) far = i;
      std::copy_n(features.row(far).begin(), dim, next.row(c).begin());
      --counts[static_cast<std::size_t>(r.assignments[far])];
      r.assignments[far] = static_cast<int>(c);
      counts[c] = 1;
      cost[far] = 0.0;
    }

    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c)
      shift = std::max(shift, std::sqrt(detail::squared_distance(next.row(c), r.centroids.row(c))));
    r.centroids = std::move(next);
    if (shift < opt.tol) break;
  }
  r.inertia = detail::assign_points(features, r.centroids, r.assignments, dist2);
  r.inertia_history.push_back(r.inertia);
  return r;
}

// Sum of per-dimension variances of the embeddings of l augmented views.
inline double view_variance(const EncoderParams& params, std::span<const double> sample, const AugmentSpec& aug,
                            std::size_t l, std::uint64_t seed) {
  if (l < 2) throw Error("need at least two views");
  Matrix views(l, sample.size());
  for (std::size_t v = 0; v < l; ++v) {
    Rng rng = make_rng(seed, "view", {v});
    auto y = augment(sample, aug, rng);
    std::copy(y.begin(), y.end(), views.row(v).begin());
  }
  return sum_dim_variance(embed(params, views));
}

// Seed for the views of one sample: depends only on (seed, sample index).
inline std::uint64_t sample_view_seed(std::uint64_t seed, std::size_t sample_index) {
  return derive_seed(seed, "rehearsal.sample", {sample_index});
}

struct SelectedExemplar {
  std::size_t index = 0;
  int cluster = 0;
  double score = 0.0;
};

struct SamplerOptions {
  std::size_t k = 1;
  std::size_t n_per_cluster = 20;
  std::size_t views = 6;
  AugmentSpec augment;
  KMeansOptions kmeans;
};

// Embed, cluster into k groups, score each member by view variance and keep
// the n lowest-scoring members of every cluster (ties: lower index first).
// Returned sorted by sample index.
inline std::vector<SelectedExemplar> select_exemplars(const Matrix& samples, const EncoderParams& params,
                                                      const SamplerOptions& opt, std::uint64_t seed) {
  if (samples.rows() == 0) throw Error("empty dataset");
  if (opt.n_per_cluster < 1) throw Error("n_per_cluster must be at least 1");
  const Matrix feats = embed(params, samples);
  const ClusterResult clusters = kmeans(feats, opt.k, derive_seed(seed, "rehearsal.kmeans"), opt.kmeans);

  std::vector<double> score(samples.rows());
  for (std::size_t i = 0; i < samples.rows(); ++i)
    score[i] = view_variance(params, samples.row(i), opt.augment, opt.views, sample_view_seed(seed, i));

  std::vector<std::vector<std::size_t>> members(opt.k);
  for (std::size_t i = 0; i < samples.rows(); ++i)
    members[static_cast<std::size_t>(clusters.assignments[i])].push_back(i);

  std::vector<SelectedExemplar> out;
  for (std::size_t c = 0; c < opt.k; ++c) {
    auto& m = members[c];
    std::stable_sort(m.begin(), m.end(), [&](std::size_t a, std::size_t b) {
      return score[a] < score[b] || (score[a] == score[b] && a < b);
    });
    const std::size_t keep = std::min(opt.n_per_cluster, m.size());
    for (std::size_t j = 0; j < keep; ++j) out.push_back({m[j], static_cast<int>(c), score[m[j]]});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  return out;
}

// Uniform sample without replacement, sorted.
inline std::vector<std::size_t> select_random(std::size_t population, std::size_t budget, std::uint64_t seed) {
  if (budget > population) throw Error("budget exceeds population");
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = make_rng(seed, "rehearsal.random");
  for (std::size_t i = 0; i < budget; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(budget);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct Exemplar {
  std::vector<double> sample;
  int task = 0;
  int cluster = -1;  // -1 for randomly sampled entries
  double score = 0.0;
  std::size_t source_index = 0;  // row within the originating task
};

// Append-only store of replayed samples across tasks.
class ExemplarStore {
 public:
  void add(int task, std::vector<Exemplar> entries) {
    for (auto& e : entries) {
      e.task = task;
      entries_.push_back(std::move(e));
    }
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Exemplar>& entries() const { return entries_; }

  std::size_t count_for_task(int task) const {
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [task](const Exemplar& e) { return e.task == task; }));
  }

  Matrix samples() const {
    Matrix m;
    for (const auto& e : entries_) m.append_row(e.sample);
    return m;
  }

 private:
  std::vector<Exemplar> entries_;
};

}  // namespace ccl
