#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ccl/error.hpp"
#include "ccl/numerics.hpp"
#include "ccl/random.hpp"

namespace ccl {

// Samples with their class labels. Labels are consumed by the task splitter
// and the linear probe only; the continual trainer sees `samples` alone.
struct LabeledDataset {
  Matrix samples;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return samples.rows(); }
  std::size_t dim() const { return samples.cols(); }
};

inline LabeledDataset subset(const LabeledDataset& ds, std::span<const std::size_t> idx) {
  LabeledDataset out;
  out.samples = gather_rows(ds.samples, idx);
  out.labels.reserve(idx.size());
  for (auto i : idx) out.labels.push_back(ds.labels[i]);
  out.num_classes = ds.num_classes;
  return out;
}

struct TaskStream {
  std::vector<LabeledDataset> tasks;
  std::vector<int> class_order;
  std::vector<std::vector<int>> class_sets;
  std::vector<std::vector<std::size_t>> source_indices;  // rows of the source dataset, per task

  std::size_t size() const { return tasks.size(); }
};

struct AugmentSpec {
  double noise_sigma = 0.1;
  double drop_prob = 0.1;
  double scale_jitter = 0.1;

  void validate() const {
    if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) throw Error("noise_sigma must be finite and >= 0");
    if (!std::isfinite(drop_prob) || drop_prob < 0.0 || drop_prob >= 1.0) throw Error("drop_prob must lie in [0, 1)");
    if (!std::isfinite(scale_jitter) || scale_jitter < 0.0) throw Error("scale_jitter must be finite and >= 0");
  }

  static AugmentSpec identity() { return {0.0, 0.0, 0.0}; }
};

// Class means on a sphere of radius class_spread; samples are the mean plus
// isotropic Gaussian noise of scale within_spread. Class-major sample order.
inline LabeledDataset generate_synthetic(int num_classes, int per_class, int input_dim, double class_spread,
                                         double within_spread, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || input_dim < 1) throw Error("counts must be at least 1");
  if (!(class_spread > 0.0) || !(within_spread >= 0.0)) throw Error("spreads must be positive");
  const auto dim = static_cast<std::size_t>(input_dim);

  Rng mean_rng = make_rng(seed, "synthetic.means");
  std::normal_distribution<double> unit(0.0, 1.0);
  Matrix means(static_cast<std::size_t>(num_classes), dim);
  for (std::size_t c = 0; c < means.rows(); ++c) {
    auto m = means.row(c);
    double n = 0.0;
    do {
      for (double& v : m) v = unit(mean_rng);
      n = norm(m);
    } while (n < 1e-12);
    for (double& v : m) v *= class_spread / n;
  }

  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.samples = Matrix(static_cast<std::size_t>(num_classes * per_class), dim);
  ds.labels.reserve(ds.samples.rows());
  Rng noise_rng = make_rng(seed, "synthetic.samples");
  std::size_t r = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int s = 0; s < per_class; ++s, ++r) {
      auto x = ds.samples.row(r);
      auto m = means.row(static_cast<std::size_t>(c));
      for (std::size_t d = 0; d < dim; ++d) x[d] = m[d] + within_spread * unit(noise_rng);
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// Shuffles class ids with a seeded permutation and cuts them into t_steps
// contiguous groups; earlier groups absorb the remainder.
inline TaskStream split_tasks(const LabeledDataset& ds, int t_steps, std::uint64_t seed) {
  if (t_steps < 1) throw Error("need at least one step");
  if (t_steps > ds.num_classes) throw Error("too many steps");
  TaskStream ts;
  ts.class_order.resize(static_cast<std::size_t>(ds.num_classes));
  std::iota(ts.class_order.begin(), ts.class_order.end(), 0);
  Rng rng = make_rng(seed, "split.class_order");
  std::shuffle(ts.class_order.begin(), ts.class_order.end(), rng);

  const int base = ds.num_classes / t_steps;
  const int extra = ds.num_classes % t_steps;
  std::vector<int> task_of_class(static_cast<std::size_t>(ds.num_classes), -1);
  std::size_t pos = 0;
  for (int t = 0; t < t_steps; ++t) {
    const int n = base + (t < extra ? 1 : 0);
    std::vector<int> group(ts.class_order.begin() + static_cast<std::ptrdiff_t>(pos),
                           ts.class_order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(n)));
    for (int c : group) task_of_class[static_cast<std::size_t>(c)] = t;
    ts.class_sets.push_back(std::move(group));
    pos += static_cast<std::size_t>(n);
  }

  ts.source_indices.resize(static_cast<std::size_t>(t_steps));
  for (std::size_t i = 0; i < ds.size(); ++i)
    ts.source_indices[static_cast<std::size_t>(task_of_class[static_cast<std::size_t>(ds.labels[i])])].push_back(i);
  for (const auto& idx : ts.source_indices) ts.tasks.push_back(subset(ds, idx));
  return ts;
}

// y = s * (x ⊙ mask) + eps with s ~ U(1 - jitter, 1 + jitter), mask dropping
// each coordinate with drop_prob, eps ~ N(0, sigma^2 I). Zero parameters skip
// their draw, so the identity spec returns x bitwise.
inline std::vector<double> augment(std::span<const double> x, const AugmentSpec& spec, Rng& rng) {
  std::vector<double> y(x.begin(), x.end());
  if (spec.scale_jitter > 0.0) {
    std::uniform_real_distribution<double> scale(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
    const double s = scale(rng);
    for (double& v : y) v *= s;
  }
  if (spec.drop_prob > 0.0) {
    std::bernoulli_distribution drop(spec.drop_prob);
    for (double& v : y)
      if (drop(rng)) v = 0.0;
  }
  if (spec.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (double& v : y) v += noise(rng);
  }
  return y;
}

inline Matrix augment_rows(const Matrix& x, const AugmentSpec& spec, Rng& rng) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto y = augment(x.row(i), spec, rng);
    std::copy(y.begin(), y.end(), out.row(i).begin());
  }
  return out;
}

// One sample per line: comma-separated features followed by an integer label.
inline LabeledDataset parse_csv(std::istream& in) {
  LabeledDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::vector<double> row;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    auto parse_error = [&] { return Error("parse error at line " + std::to_string(line_no)); };
    if (fields.size() < 2) throw parse_error();

    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    row.clear();
    for (std::size_t k = 0; k + 1 < fields.size(); ++k) {
      const std::string t = trim(fields[k]);
      double v = 0.0;
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (t.empty() || ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) throw parse_error();
      row.push_back(v);
    }
    const std::string lt = trim(fields.back());
    int label = 0;
    auto [p, ec] = std::from_chars(lt.data(), lt.data() + lt.size(), label);
    if (lt.empty() || ec != std::errc() || p != lt.data() + lt.size() || label < 0) throw parse_error();

    if (ds.samples.rows() > 0 && row.size() != ds.samples.cols()) throw Error("inconsistent dimensions");
    ds.samples.append_row(row);
    ds.labels.push_back(label);
    max_label = std::max(max_label, label);
  }
  if (ds.samples.rows() == 0) throw Error("empty dataset");
  ds.num_classes = max_label + 1;
  return ds;
}

inline LabeledDataset load_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path);
  return parse_csv(f);
}

inline void write_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.samples.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      f << buf << ',';
    }
    f << ds.labels[i] << '\n';
  }
}

}  // namespace ccl
