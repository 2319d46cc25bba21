#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ccl/config.hpp"
#include "ccl/contrastive.hpp"
#include "ccl/datastream.hpp"
#include "ccl/distillation.hpp"
#include "ccl/encoder.hpp"
#include "ccl/error.hpp"
#include "ccl/evaluation.hpp"
#include "ccl/random.hpp"
#include "ccl/rehearsal.hpp"

namespace ccl {

// Everything the continual trainer mutates.
struct ModelState {
  EncoderParams theta_q;
  EncoderParams theta_k;
  EncoderParams theta_t;
  NegativeQueue queue;
  NegativeQueue esq;
  EncoderGrads velocity;
  ExemplarStore store;
  int task = 0;
  std::size_t steps = 0;
};

inline ModelState init_state(const RunConfig& cfg, const Architecture& arch) {
  ModelState s;
  s.theta_q = init_params(arch, derive_seed(cfg.seed, "encoder.init"));
  s.theta_k = s.theta_q;
  s.theta_t = s.theta_q;
  s.queue = NegativeQueue(cfg.queue_size, arch.embedding_dim());
  s.esq = NegativeQueue(cfg.esq_size, arch.embedding_dim());
  return s;
}

// Per-step loss values, for logging and for the composition tests.
struct StepLosses {
  double moco = 0.0;
  double esq = 0.0;
  double kd = 0.0;
  double total = 0.0;
  std::size_t old_rows = 0;
};

// Named random streams used inside one optimisation step.
struct StepStreams {
  Rng views;     // two augmented views of the whole minibatch
  Rng kd_view;   // the augmented view of the old rows for distillation
  Rng esq_view;  // the fresh augmented view of the old rows pushed to the ESQ

  static StepStreams make(std::uint64_t seed, int task, std::size_t epoch, std::size_t step) {
    const std::initializer_list<std::uint64_t> idx = {static_cast<std::uint64_t>(task), epoch, step};
    return {make_rng(seed, "train.views", idx), make_rng(seed, "train.kd_view", idx),
            make_rng(seed, "train.esq_view", idx)};
  }
};

// One optimisation step on a minibatch (rows of `batch` flagged by `provenance`).
// Order: losses against the current queues, update theta_q, momentum-update
// theta_k, push the keys to Q, then push fresh old-row keys to the ESQ.
inline StepLosses train_step(ModelState& state, const Matrix& batch, const std::vector<Provenance>& provenance,
                             const RunConfig& cfg, StepStreams& rng) {
  const double l2 = cfg.effective_lambda2();
  const double l3 = cfg.effective_lambda3();

  const Matrix view_q = augment_rows(batch, cfg.augment, rng.views);
  const Matrix view_k = augment_rows(batch, cfg.augment, rng.views);
  ForwardResult fq = forward(state.theta_q, view_q);
  ForwardResult fk = forward(state.theta_k, view_k);
  fq.features.provenance = provenance;
  fk.features.provenance = provenance;

  StepLosses losses;
  const ContrastiveResult moco = info_nce(fq.features, fk.features, state.queue, cfg.tau);
  losses.moco = moco.loss;
  Matrix grad_q = moco.grad_q;
  for (double& g : grad_q.data()) g *= cfg.lambda1;

  if (l2 > 0.0) {
    const ContrastiveResult e = esq_loss(fq.features, fk.features, state.esq, cfg.tau, cfg.esq_rows);
    losses.esq = e.loss;
    for (std::size_t i = 0; i < grad_q.size(); ++i) grad_q.data()[i] += l2 * e.grad_q.data()[i];
  }

  std::vector<std::size_t> old_rows;
  for (std::size_t i = 0; i < provenance.size(); ++i)
    if (provenance[i] == Provenance::kOld) old_rows.push_back(i);
  losses.old_rows = old_rows.size();

  EncoderGrads grads = backward(fq.trace, state.theta_q, grad_q);

  if (l3 > 0.0 && !old_rows.empty()) {
    const Matrix clean = gather_rows(batch, old_rows);
    const Matrix view = augment_rows(clean, cfg.augment, rng.kd_view);
    const ForwardResult t_clean = forward(state.theta_t, clean);
    const ForwardResult t_view = forward(state.theta_t, view);
    const ForwardResult s_clean = forward(state.theta_q, clean);
    const ForwardResult s_view = forward(state.theta_q, view);
    DistillResult kd = kd_loss(t_clean.features, t_view.features, s_clean.features, s_view.features, cfg.tau_kd);
    losses.kd = kd.loss;
    for (double& g : kd.grad_zS.data()) g *= l3;
    for (double& g : kd.grad_zSq.data()) g *= l3;
    axpy(grads, backward(s_clean.trace, state.theta_q, kd.grad_zS), 1.0);
    axpy(grads, backward(s_view.trace, state.theta_q, kd.grad_zSq), 1.0);
  }

  losses.total = cfg.lambda1 * losses.moco + l2 * losses.esq + l3 * losses.kd;
  if (!std::isfinite(losses.total)) throw DivergedError("non-finite loss");

  sgd_step(state.theta_q, grads, cfg.optimizer, state.velocity);
  momentum_update(state.theta_k, state.theta_q, cfg.momentum_key);
  state.queue.push(fk.features.embeddings);

  if (cfg.components.esq && !old_rows.empty() && state.esq.capacity() > 0) {
    const Matrix old_view = augment_rows(gather_rows(batch, old_rows), cfg.augment, rng.esq_view);
    ForwardResult k_s = forward(state.theta_k, old_view);
    for (std::size_t i = 0; i < old_rows.size(); ++i)
      if (provenance[old_rows[i]] != Provenance::kOld) throw Error("extra sample queue received a new-task row");
    state.esq.push(k_s.features.embeddings);
  }
  ++state.steps;
  return losses;
}

namespace detail {

// Minibatch index lists for one epoch. Without a replay ratio, new and old
// rows form one shuffled pool; the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_new, std::size_t n_old, const RunConfig& cfg,
                                                           int task, std::size_t epoch) {
  Rng rng = make_rng(cfg.seed, "train.shuffle", {static_cast<std::uint64_t>(task), epoch});
  std::vector<std::vector<std::size_t>> out;
  const std::size_t bs = cfg.batch_size;
  if (cfg.replay_ratio <= 0.0 || n_old == 0) {
    std::vector<std::size_t> pool(n_new + n_old);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    for (std::size_t b = 0; b < pool.size(); b += bs)
      out.emplace_back(pool.begin() + static_cast<std::ptrdiff_t>(b),
                       pool.begin() + static_cast<std::ptrdiff_t>(std::min(b + bs, pool.size())));
    return out;
  }
  const auto n_old_per = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.replay_ratio * static_cast<double>(bs))));
  const std::size_t n_new_per = bs > n_old_per ? bs - n_old_per : 1;
  std::vector<std::size_t> fresh(n_new), old(n_old);
  std::iota(fresh.begin(), fresh.end(), 0);
  std::iota(old.begin(), old.end(), n_new);
  std::shuffle(fresh.begin(), fresh.end(), rng);
  std::shuffle(old.begin(), old.end(), rng);
  std::size_t cursor = 0;
  for (std::size_t b = 0; b < n_new; b += n_new_per) {
    std::vector<std::size_t> batch(fresh.begin() + static_cast<std::ptrdiff_t>(b),
                                   fresh.begin() + static_cast<std::ptrdiff_t>(std::min(b + n_new_per, n_new)));
    for (std::size_t k = 0; k < n_old_per; ++k) batch.push_back(old[cursor++ % n_old]);
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace detail

// Trains on one task's samples plus the current exemplar store: the teacher
// restarts from theta_q, every epoch runs the minibatch loop and ends with the
// momentum update of the teacher.
inline std::vector<StepLosses> train_task(ModelState& state, const Matrix& task_data, const RunConfig& cfg,
                                          int task_index, std::size_t epochs) {
  if (epochs < 1) throw Error("epochs must be at least 1");
  state.task = task_index;
  if (cfg.components.kd) state.theta_t = teacher_init(state.theta_q);

  const Matrix old = state.store.samples();
  const std::size_t n_new = task_data.rows();
  const std::size_t n_old = old.rows();
  auto row_of = [&](std::size_t i) { return i < n_new ? task_data.row(i) : old.row(i - n_new); };

  std::vector<StepLosses> log;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto batches = detail::epoch_batches(n_new, n_old, cfg, task_index, epoch);
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const auto& idx = batches[step];
      Matrix batch(idx.size(), task_data.cols());
      std::vector<Provenance> prov(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        auto src = row_of(idx[i]);
        std::copy(src.begin(), src.end(), batch.row(i).begin());
        prov[i] = idx[i] < n_new ? Provenance::kNew : Provenance::kOld;
      }
      StepStreams rng = StepStreams::make(cfg.seed, task_index, epoch, step);
      try {
        log.push_back(train_step(state, batch, prov, cfg, rng));
      } catch (const DivergedError&) {
        throw DivergedError("diverged at task " + std::to_string(task_index + 1) + ", epoch " +
                            std::to_string(epoch + 1) + ", step " + std::to_string(step + 1));
      }
    }
    if (cfg.components.kd) teacher_epoch_update(state.theta_t, state.theta_q, cfg.momentum_teacher);
  }
  return log;
}

inline std::vector<StepLosses> train_task(ModelState& state, const Matrix& task_data, const RunConfig& cfg,
                                          int task_index) {
  return train_task(state, task_data, cfg, task_index, cfg.epochs_per_task);
}

// Exemplars kept from a finished task under the configured sampler.
inline std::vector<Exemplar> collect_exemplars(const ModelState& state, const Matrix& task_data, const RunConfig& cfg,
                                               int task_index, std::size_t classes_in_task) {
  const std::size_t k = std::min(cfg.sampler.kmeans_k > 0 ? cfg.sampler.kmeans_k : classes_in_task, task_data.rows());
  std::size_t n_per = cfg.sampler.n_per_cluster;
  if (cfg.sampler.memory_mode == MemoryMode::kFixedTotal) n_per = std::max<std::size_t>(1, cfg.sampler.memory_per_step / k);
  const std::uint64_t seed = derive_seed(cfg.seed, "rehearsal", {static_cast<std::uint64_t>(task_index)});

  std::vector<Exemplar> out;
  switch (cfg.components.sampler) {
    case SamplerKind::kNone: break;
    case SamplerKind::kRandom: {
      const std::size_t budget = std::min(task_data.rows(), cfg.sampler.memory_mode == MemoryMode::kFixedTotal
                                                                ? cfg.sampler.memory_per_step
                                                                : k * cfg.sampler.n_per_cluster);
      for (std::size_t i : select_random(task_data.rows(), budget, seed)) {
        auto row = task_data.row(i);
        out.push_back({std::vector<double>(row.begin(), row.end()), task_index, -1, 0.0, i});
      }
      break;
    }
    case SamplerKind::kVariance: {
      SamplerOptions opt;
      opt.k = k;
      opt.n_per_cluster = n_per;
      opt.views = cfg.sampler.views;
      opt.augment = cfg.augment;
      opt.kmeans = cfg.sampler.kmeans;
      for (const auto& sel : select_exemplars(task_data, state.theta_q, opt, seed)) {
        auto row = task_data.row(sel.index);
        out.push_back({std::vector<double>(row.begin(), row.end()), task_index, sel.cluster, sel.score, sel.index});
      }
      break;
    }
  }
  return out;
}

struct RunReport {
  RunConfig config;
  AccuracyMatrix accuracy;
  std::vector<double> random_init_accuracy;
  std::optional<double> forgetting;
  std::optional<double> forward_transfer;
  double final_top1 = 0.0;
  std::vector<std::size_t> store_sizes;  // exemplar store size after each task
  double wall_clock_seconds = 0.0;
  std::vector<EncoderParams> checkpoints;
};

inline LabeledDataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.source == DataSource::kCsv) return load_csv(cfg.data.csv_path);
  return generate_synthetic(cfg.data.num_classes, cfg.data.per_class, cfg.data.input_dim, cfg.data.class_spread,
                            cfg.data.within_spread, derive_seed(cfg.seed, "data"));
}

inline ProbeConfig resolved_probe(const RunConfig& cfg) {
  ProbeConfig p = cfg.probe;
  p.seed = derive_seed(cfg.seed, "probe", {cfg.probe.seed});
  return p;
}

struct Experiment {
  LabeledDataset data;
  TaskStream tasks;
  RunConfig config;
};

inline Experiment prepare_experiment(RunConfig cfg) {
  Experiment e;
  e.data = load_dataset(cfg);
  if (cfg.data.source == DataSource::kCsv) {
    cfg.data.input_dim = static_cast<int>(e.data.dim());
    cfg.data.num_classes = e.data.num_classes;
    if (cfg.t_steps > e.data.num_classes) throw ConfigError("\"t_steps\" exceeds the number of classes in the CSV");
  }
  e.tasks = split_tasks(e.data, cfg.t_steps, derive_seed(cfg.seed, "split"));
  e.config = std::move(cfg);
  return e;
}

// Final pooled top-1: probe on every class at once with the last checkpoint.
inline double pooled_top1(const EncoderParams& params, const LabeledDataset& data, const ProbeConfig& probe) {
  const ProbeSplit split = train_test_split(data, probe.train_fraction, derive_seed(probe.seed, "probe.pooled"));
  return linear_probe(params, split.train, split.test, probe);
}

// Runs the configured method over the task stream and evaluates it. When
// `out_dir` is given, task{t}.ckpt is written after every task.
inline RunReport run_experiment(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir = {}) {
  const auto start = std::chrono::steady_clock::now();
  const Experiment ex = prepare_experiment(config);
  const RunConfig& cfg = ex.config;
  const Architecture arch = cfg.architecture();
  const std::size_t t_steps = ex.tasks.size();

  RunReport rep;
  rep.config = cfg;
  ModelState state = init_state(cfg, arch);

  auto save = [&](std::size_t t) {
    if (out_dir) save_checkpoint((*out_dir / ("task" + std::to_string(t + 1) + ".ckpt")).string(), state.theta_q);
  };

  if (cfg.method == Method::kUpperBound) {
    Matrix all;
    for (const auto& task : ex.tasks.tasks)
      for (std::size_t i = 0; i < task.size(); ++i) all.append_row(task.samples.row(i));
    train_task(state, all, cfg, 0, cfg.epochs_per_task * t_steps);
    for (std::size_t t = 0; t < t_steps; ++t) {
      rep.checkpoints.push_back(state.theta_q);
      rep.store_sizes.push_back(0);
      save(t);
    }
  } else {
    for (std::size_t t = 0; t < t_steps; ++t) {
      const Matrix& samples = ex.tasks.tasks[t].samples;
      train_task(state, samples, cfg, static_cast<int>(t));
      rep.checkpoints.push_back(state.theta_q);
      save(t);
      if (cfg.components.sampler != SamplerKind::kNone) {
        state.store.add(static_cast<int>(t),
                        collect_exemplars(state, samples, cfg, static_cast<int>(t), ex.tasks.class_sets[t].size()));
      }
      rep.store_sizes.push_back(state.store.size());
    }
  }

  const ProbeConfig probe = resolved_probe(cfg);
  rep.accuracy = accuracy_matrix(rep.checkpoints, ex.tasks, probe);
  const EncoderParams random_init = init_params(arch, derive_seed(cfg.seed, "probe.random_init"));
  for (std::size_t j = 0; j < t_steps; ++j) {
    const ProbeSplit split = task_split(ex.tasks.tasks[j], probe, j);
    rep.random_init_accuracy.push_back(linear_probe(random_init, split.train, split.test, probe));
  }
  if (t_steps >= 2) {
    rep.forgetting = forgetting(rep.accuracy);
    rep.forward_transfer = forward_transfer(rep.accuracy, rep.random_init_accuracy);
  }
  rep.final_top1 = pooled_top1(rep.checkpoints.back(), ex.data, probe);
  rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline json report_json(const RunReport& r) {
  json acc = json::array();
  for (std::size_t i = 0; i < r.accuracy.rows(); ++i) {
    auto row = r.accuracy.row(i);
    acc.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return json{
      {"method", r.config.method},
      {"seed", r.config.seed},
      {"t_steps", r.config.t_steps},
      {"accuracy_matrix", acc},
      {"random_init_accuracy", r.random_init_accuracy},
      {"forgetting", r.forgetting ? json(*r.forgetting) : json(nullptr)},
      {"forward_transfer", r.forward_transfer ? json(*r.forward_transfer) : json(nullptr)},
      {"final_top1", r.final_top1},
      {"exemplar_store_sizes", r.store_sizes},
      {"wall_clock_seconds", r.wall_clock_seconds},
      {"config", to_json(r.config)},
  };
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// method,seed,task_i,task_j,accuracy with 1-based task ids.
inline std::string accuracy_csv(const RunReport& r) {
  std::string out = "method,seed,task_i,task_j,accuracy\n";
  const std::string method = json(r.config.method).get<std::string>();
  for (std::size_t i = 0; i < r.accuracy.rows(); ++i)
    for (std::size_t j = 0; j < r.accuracy.cols(); ++j)
      out += method + "," + std::to_string(r.config.seed) + "," + std::to_string(i + 1) + "," + std::to_string(j + 1) +
             "," + format_double(r.accuracy(i, j)) + "\n";
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

// report.json, accuracy.csv and resolved_config.json (checkpoints are written
// during the run).
inline void write_run_artifacts(const RunReport& r, const std::filesystem::path& dir) {
  write_text(dir / "report.json", report_json(r).dump(2) + "\n");
  write_text(dir / "accuracy.csv", accuracy_csv(r));
  write_text(dir / "resolved_config.json", to_json(r.config).dump(2) + "\n");
}

}  // namespace ccl
