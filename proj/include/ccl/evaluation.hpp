#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "ccl/datastream.hpp"
#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/numerics.hpp"
#include "ccl/random.hpp"

namespace ccl {

struct ProbeConfig {
  std::size_t epochs = 100;
  double lr = 0.5;
  std::size_t decay_epoch = 80;  // lr is multiplied by decay_factor from this epoch on
  double decay_factor = 0.1;
  double weight_decay = 0.0;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("probe.train_fraction must lie in (0, 1)");
    if (!(lr > 0.0)) throw ConfigError("probe.lr must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("probe.weight_decay must be non-negative");
  }
};

// a[i][j]: probe top-1 on task j after training through task i.
using AccuracyMatrix = Matrix;

// Multinomial logistic regression on frozen, unaugmented embeddings, trained
// by full-batch gradient descent from zero weights. Returns test top-1.
inline double linear_probe(const EncoderParams& params, const LabeledDataset& train, const LabeledDataset& test,
                           const ProbeConfig& cfg) {
  if (train.size() == 0 || test.size() == 0) throw Error("empty probe split");
  std::map<int, std::size_t> class_index;
  for (int y : train.labels) class_index.emplace(y, 0);
  std::size_t next = 0;
  for (auto& [label, idx] : class_index) idx = next++;
  for (int y : test.labels)
    if (!class_index.count(y)) throw Error("probe class mismatch");

  const Matrix xtr = embed(params, train.samples);
  const Matrix xte = embed(params, test.samples);
  const std::size_t n = xtr.rows(), d = xtr.cols(), c = class_index.size();
  std::vector<std::size_t> ytr(n);
  for (std::size_t i = 0; i < n; ++i) ytr[i] = class_index.at(train.labels[i]);

  Matrix w(c, d);
  std::vector<double> b(c, 0.0);
  Matrix gw(c, d);
  std::vector<double> gb(c);
  std::vector<double> logits(c);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = epoch >= cfg.decay_epoch ? cfg.lr * cfg.decay_factor : cfg.lr;
    std::fill(gw.data().begin(), gw.data().end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = xtr.row(i);
      for (std::size_t k = 0; k < c; ++k) logits[k] = b[k] + dot(w.row(k), xi);
      const double mx = *std::max_element(logits.begin(), logits.end());
      double s = 0.0;
      for (double& l : logits) s += (l = std::exp(l - mx));
      for (std::size_t k = 0; k < c; ++k) {
        const double g = logits[k] / s - (k == ytr[i] ? 1.0 : 0.0);
        gb[k] += g;
        auto gwk = gw.row(k);
        for (std::size_t j = 0; j < d; ++j) gwk[j] += g * xi[j];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < c; ++k) {
      b[k] -= lr * gb[k] * inv_n;
      auto wk = w.row(k);
      auto gwk = gw.row(k);
      for (std::size_t j = 0; j < d; ++j) wk[j] -= lr * (gwk[j] * inv_n + cfg.weight_decay * wk[j]);
    }
  }

  std::size_t correct = 0;
  for (std::size_t i = 0; i < xte.rows(); ++i) {
    auto xi = xte.row(i);
    std::size_t arg = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) {
      const double l = b[k] + dot(w.row(k), xi);
      if (l > best) {
        best = l;
        arg = k;
      }
    }
    if (arg == class_index.at(test.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(xte.rows());
}

struct ProbeSplit {
  LabeledDataset train;
  LabeledDataset test;
};

// Seeded stratified split: each class contributes round(fraction * count)
// samples to train (at least one, and at least one left for test when the
// class has two or more samples).
inline ProbeSplit train_test_split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::size_t> tr, te;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() > 1 ? idx.size() - 1 : 1);
    tr.insert(tr.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    te.insert(te.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {subset(ds, tr), subset(ds, te)};
}

inline ProbeSplit task_split(const LabeledDataset& task, const ProbeConfig& cfg, std::size_t task_index) {
  return train_test_split(task, cfg.train_fraction, derive_seed(cfg.seed, "probe.split", {task_index}));
}

inline AccuracyMatrix accuracy_matrix(const std::vector<EncoderParams>& checkpoints, const TaskStream& tasks,
                                      const ProbeConfig& cfg) {
  if (checkpoints.size() != tasks.size()) throw Error("checkpoint count does not match task count");
  const std::size_t t = tasks.size();
  std::vector<ProbeSplit> splits;
  for (std::size_t j = 0; j < t; ++j) splits.push_back(task_split(tasks.tasks[j], cfg, j));
  AccuracyMatrix a(t, t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) a(i, j) = linear_probe(checkpoints[i], splits[j].train, splits[j].test, cfg);
  return a;
}

// Mean over the first T-1 tasks of the largest drop from any row to the last.
inline double forgetting(const AccuracyMatrix& a) {
  const std::size_t t = a.rows();
  if (a.cols() != t) throw Error("accuracy matrix must be square");
  if (t < 2) throw Error("undefined for single task");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < t; ++i) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t row = 0; row < t; ++row) worst = std::max(worst, a(row, i) - a(t - 1, i));
    total += worst;
  }
  return total / static_cast<double>(t - 1);
}

// Mean over tasks 2..T of a[i-1][i] - r[i].
inline double forward_transfer(const AccuracyMatrix& a, std::span<const double> random_init) {
  const std::size_t t = a.rows();
  if (a.cols() != t) throw Error("accuracy matrix must be square");
  if (t < 2) throw Error("undefined");
  if (random_init.size() != t) throw Error("random-init accuracy count does not match task count");
  double total = 0.0;
  for (std::size_t i = 1; i < t; ++i) total += a(i - 1, i) - random_init[i];
  return total / static_cast<double>(t - 1);
}

}  // namespace ccl
