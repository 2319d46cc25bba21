#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/numerics.hpp"

namespace ccl {

// Fixed-capacity FIFO of unit-norm key vectors, stored as a ring buffer.
// Serves as both the MoCo memory bank and the extra sample queue.
class NegativeQueue {
 public:
  NegativeQueue() = default;
  NegativeQueue(std::size_t capacity, std::size_t dim)
      : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  // i-th entry in FIFO order, 0 = oldest.
  std::span<const double> entry(std::size_t i) const {
    const std::size_t slot = (head_ + i) % capacity_;
    return {storage_.data() + slot * dim_, dim_};
  }

  // Entries oldest-first, one per row.
  Matrix entries() const {
    Matrix m(size_, dim_);
    for (std::size_t i = 0; i < size_; ++i) std::copy_n(entry(i).begin(), dim_, m.row(i).begin());
    return m;
  }

  // Appends rows in order, evicting the oldest entries once full.
  void push(const Matrix& keys) {
    if (keys.rows() == 0) return;
    if (keys.cols() != dim_) throw Error("dimension mismatch");
    for (std::size_t i = 0; i < keys.rows(); ++i)
      if (std::abs(norm(keys.row(i)) - 1.0) > 1e-6) throw Error("unnormalized key");
    if (capacity_ == 0) return;
    for (std::size_t i = 0; i < keys.rows(); ++i) {
      const std::size_t slot = (head_ + size_) % capacity_;
      std::copy_n(keys.row(i).begin(), dim_, storage_.begin() + static_cast<std::ptrdiff_t>(slot * dim_));
      if (size_ < capacity_) {
        ++size_;
      } else {
        head_ = (head_ + 1) % capacity_;
      }
    }
  }

  bool operator==(const NegativeQueue& o) const {
    return capacity_ == o.capacity_ && dim_ == o.dim_ && entries() == o.entries();
  }

 private:
  std::size_t capacity_ = 0;
  std::size_t dim_ = 0;
  std::vector<double> storage_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
};

inline NegativeQueue queue_push(NegativeQueue queue, const FeatureBatch& keys) {
  queue.push(keys.embeddings);
  return queue;
}

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_q;  // d loss / d q, same shape as q
  std::vector<double> row_losses;
};

// Which query rows contribute to the extra-sample-queue loss.
enum class EsqRows { kAll, kNewOnly };

namespace detail {

// InfoNCE over the rows selected by `use_row`; the loss is the mean over those
// rows and unselected rows get zero loss and zero gradient.
template <typename RowFilter>
ContrastiveResult info_nce_rows(const Matrix& q, const Matrix& k_plus, const NegativeQueue& negatives,
                                double tau, RowFilter use_row) {
  if (!(tau > 0.0)) throw Error("invalid temperature");
  if (q.rows() != k_plus.rows() || q.cols() != k_plus.cols()) throw Error("query/key shape mismatch");
  if (!negatives.empty() && negatives.dim() != q.cols()) throw Error("dimension mismatch");

  const std::size_t batch = q.rows();
  const std::size_t n_neg = negatives.size();
  ContrastiveResult r;
  r.grad_q = Matrix(batch, q.cols());
  r.row_losses.assign(batch, 0.0);

  std::size_t active = 0;
  for (std::size_t i = 0; i < batch; ++i) active += use_row(i) ? 1 : 0;
  if (active == 0) return r;
  const double inv_active = 1.0 / static_cast<double>(active);

  std::vector<double> logits(n_neg + 1);
  for (std::size_t i = 0; i < batch; ++i) {
    if (!use_row(i)) continue;
    auto qi = q.row(i);
    logits[0] = dot(qi, k_plus.row(i)) / tau;
    for (std::size_t j = 0; j < n_neg; ++j) logits[j + 1] = dot(qi, negatives.entry(j)) / tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    const double lse = mx + std::log(s);
    r.row_losses[i] = lse - logits[0];

    // d loss_i / d q_i = (sum_j p_j k_j - k_plus) / tau
    auto g = r.grad_q.row(i);
    const double scale = inv_active / tau;
    const double p0 = std::exp(logits[0] - lse);
    auto kp = k_plus.row(i);
    for (std::size_t d = 0; d < g.size(); ++d) g[d] = (p0 - 1.0) * kp[d] * scale;
    for (std::size_t j = 0; j < n_neg; ++j) {
      const double pj = std::exp(logits[j + 1] - lse) * scale;
      auto kj = negatives.entry(j);
      for (std::size_t d = 0; d < g.size(); ++d) g[d] += pj * kj[d];
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) total += r.row_losses[i];
  r.loss = total * inv_active;
  return r;
}

}  // namespace detail

// Mean over rows of -log(exp(q.k+/tau) / (exp(q.k+/tau) + sum_neg exp(q.k/tau))).
// Keys and queue are constants: only the gradient with respect to q is returned.
inline ContrastiveResult info_nce(const FeatureBatch& q, const FeatureBatch& k_plus,
                                  const NegativeQueue& negatives, double tau) {
  return detail::info_nce_rows(q.embeddings, k_plus.embeddings, negatives, tau,
                               [](std::size_t) { return true; });
}

// The same loss against the extra sample queue. With kNewOnly, rows flagged
// OLD are excluded and the mean runs over NEW rows.
inline ContrastiveResult esq_loss(const FeatureBatch& z_q, const FeatureBatch& z_k, const NegativeQueue& esq,
                                  double tau, EsqRows rows = EsqRows::kAll) {
  if (rows == EsqRows::kAll) return info_nce(z_q, z_k, esq, tau);
  if (z_q.provenance.size() != z_q.size()) throw Error("provenance length mismatch");
  return detail::info_nce_rows(z_q.embeddings, z_k.embeddings, esq, tau,
                               [&](std::size_t i) { return z_q.provenance[i] == Provenance::kNew; });
}

}  // namespace ccl
